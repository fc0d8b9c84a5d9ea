//! Single experiments: prune, fission, train and evaluate once per seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nfe_core::eval::{evaluate, EvalReport};
use nfe_core::fission::GroupMaskSet;
use nfe_core::model::{checkpoint, count_flops, fission_transform, FlopsReport, StagedBackbone};
use nfe_core::train::{prune_at_init, train, EpochLog};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{ingest_dataset, Splits};
use crate::spec::ExperimentSpec;

/// Salt separating the grouping draw from the weight initialization seed.
const MASK_SEED_SALT: u64 = 0x6d61_736b_5f67_7270;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub report: EvalReport,
    pub flops: FlopsReport,
    pub parameters: usize,
    pub active_parameters: usize,
    pub realized_sparsity: f64,
    pub logs: Vec<EpochLog>,
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repeats: usize,
    pub ensemble_accuracy: Stat,
    pub per_exit_accuracy: Vec<Stat>,
    pub nll: Stat,
    pub ece: Stat,
    pub flops_ratio: Stat,
    /// Mean pairwise disagreement and cosine similarity (multi-exit only).
    pub pd: Option<Stat>,
    pub cs: Option<Stat>,
}

impl Aggregate {
    pub fn from_runs(runs: &[RunResult]) -> Aggregate {
        let get = |f: &dyn Fn(&RunResult) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let exits = runs.first().map_or(0, |r| r.report.per_exit_accuracy.len());
        let div: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.report.mean_diversity()).collect();
        let (pd, cs) = if div.len() == runs.len() && !div.is_empty() {
            (
                Some(Stat::of(&div.iter().map(|d| d.0).collect::<Vec<_>>())),
                Some(Stat::of(&div.iter().map(|d| d.1).collect::<Vec<_>>())),
            )
        } else {
            (None, None)
        };
        Aggregate {
            repeats: runs.len(),
            ensemble_accuracy: get(&|r| r.report.ensemble_accuracy),
            per_exit_accuracy: (0..exits).map(|j| get(&|r| r.report.per_exit_accuracy[j])).collect(),
            nll: get(&|r| r.report.nll),
            ece: get(&|r| r.report.ece),
            flops_ratio: get(&|r| r.report.flops_ratio),
            pd,
            cs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec_hash: String,
    pub spec: ExperimentSpec,
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
}

/// One seed of the pipeline on already-ingested data. With `out`, writes the
/// epoch log (JSON lines), the checkpoint and the report there.
pub fn run_seed(spec: &ExperimentSpec, splits: &Splits, seed: u64, out: Option<&Path>) -> Result<RunResult> {
    spec.validate()?;
    let cfg = spec.backbone_config()?;
    let plan = spec.fission_plan()?;
    let backbone = StagedBackbone::<f32>::new(&cfg, seed)?;
    let pai = prune_at_init(&backbone, &spec.pai, &splits.train, spec.train.batch_size, seed)?;
    let masks = GroupMaskSet::generate(
        &plan,
        &backbone.arch.stage_sizes(),
        backbone.arch.stem_len(),
        seed ^ MASK_SEED_SALT,
    )?
    .with_pai(&pai)?;
    let mut model = fission_transform(&backbone, &plan, &masks)?;
    drop(backbone);

    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("log.jsonl"))?))
        }
        None => None,
    };
    let train_cfg = nfe_core::train::TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let logs = train(&mut model, &splits.train, &train_cfg, |log| {
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, log)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        Ok(())
    })?;

    let flops = count_flops(&model);
    let report = evaluate(&mut model, &splits.test, spec.eval_batch_size, flops.ratio)?;
    let result = RunResult {
        seed,
        parameters: model.parameter_count(),
        active_parameters: model.active_parameter_count(),
        realized_sparsity: model.masks.realized_sparsity(),
        report,
        flops,
        logs,
    };
    if let Some(dir) = out {
        checkpoint::save(&mut model, dir.join("model.ckpt"))?;
        std::fs::write(dir.join("report.json"), result.report.to_json()?)?;
    }
    Ok(result)
}

/// Runs every seed on the given splits and aggregates.
pub fn run_experiment_on(spec: &ExperimentSpec, splits: &Splits, out: Option<&Path>) -> Result<ExperimentResult> {
    spec.validate()?;
    let hash = spec.hash();
    let dir = out.map(|o| o.join(format!("{}-{hash}", spec.name)));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("spec.toml"), spec.to_toml()?)?;
    }
    let mut runs = Vec::with_capacity(spec.repeats);
    for seed in spec.seeds() {
        log::info!("{} [{hash}] seed {seed}", spec.name);
        let seed_dir = dir.as_ref().map(|d| d.join(format!("seed{seed}")));
        runs.push(run_seed(spec, splits, seed, seed_dir.as_deref())?);
    }
    let result = ExperimentResult {
        spec_hash: hash,
        spec: spec.clone(),
        aggregate: Aggregate::from_runs(&runs),
        runs,
    };
    if let Some(d) = &dir {
        std::fs::write(d.join("result.json"), serde_json::to_string_pretty(&result)?)?;
        std::fs::write(
            d.join("table.txt"),
            crate::report::aggregate_table(&[(spec.name.clone(), &result)]),
        )?;
    }
    Ok(result)
}

pub struct RunOptions {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Ingests the dataset, then runs all seeds.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentResult> {
    spec.validate()?;
    let splits = ingest_dataset(&spec.dataset, opts.data_dir.as_deref())?;
    run_experiment_on(spec, &splits, opts.out_dir.as_deref())
}
