//! `nfe` command line: plan, train, eval, sweep, plot and report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nfe_core::eval::{evaluate, format_table};
use nfe_core::fission::GroupMaskSet;
use nfe_core::model::{checkpoint, count_flops, fission_transform, StagedBackbone};
use nfe_core::pai::PaiMethod;
use nfe_harness::experiment::{run_experiment, RunOptions, Stat};
use nfe_harness::ingest::ingest_dataset;
use nfe_harness::plots::{accuracy_vs_flops, sparsity_vs_accuracy, PlotPoint};
use nfe_harness::report::{aggregate_table, load_results};
use nfe_harness::spec::ExperimentSpec;
use nfe_harness::sweep::{run_sweep, SweepSpec};
use nfe_harness::{HarnessError, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nfe", version, about = "Multi-exit fission ensembles from a single backbone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the fission plan, execution graph and compute cost for a spec.
    Plan(Overrides),
    /// Run every seed of an experiment and print the aggregate table.
    Train(Overrides),
    /// Evaluate a saved checkpoint on the test split of the spec's dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a sweep described by a TOML file with `[base]` and `[sweep]` tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "NFE_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a figure from finished experiments under a results directory.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = PlotKind::Flops)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the aggregate table of finished experiments.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Ensemble accuracy against relative FLOPs.
    Flops,
    /// Ensemble accuracy against sparsity, one line per pruning method.
    Sparsity,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment spec (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    exits: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    pai: Option<PaiMethod>,
    /// Groups per stage as a comma list (`1,2,2,2`) or a variant name (`Res**34`).
    #[arg(long)]
    plan: Option<String>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, env = "NFE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = self.seed {
            spec.train.seed = v;
        }
        if let Some(v) = self.sparsity {
            spec.pai.sparsity = v;
        }
        if let Some(v) = self.exits {
            spec.plan.exits = v;
            spec.plan.variant = None;
            spec.plan.groups_per_stage = None;
        }
        if let Some(v) = self.alpha {
            spec.train.alpha = v;
        }
        if let Some(v) = self.temperature {
            spec.train.temperature = v;
        }
        if let Some(v) = self.pai {
            spec.pai.method = v;
        }
        if let Some(v) = &self.plan {
            if v.chars().all(|c| c.is_ascii_digit() || c == ',') {
                let groups = v
                    .split(',')
                    .map(|g| g.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| HarnessError::Spec(format!("--plan `{v}`: {e}")))?;
                spec.plan.groups_per_stage = Some(groups);
                spec.plan.variant = None;
            } else {
                spec.plan.variant = Some(v.clone());
                spec.plan.groups_per_stage = None;
            }
        }
        if let Some(v) = self.subsample {
            spec.dataset.subsample = v;
        }
        if let Some(v) = self.epochs {
            spec.train.epochs = v;
        }
        if let Some(v) = self.repeats {
            spec.repeats = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn plan(o: &Overrides) -> Result<()> {
    let spec = o.spec()?;
    let cfg = spec.backbone_config()?;
    let plan = spec.fission_plan()?;
    let mut backbone = StagedBackbone::<f32>::new(&cfg, spec.train.seed)?;
    let masks = GroupMaskSet::generate(&plan, &backbone.arch.stage_sizes(), backbone.arch.stem_len(), 0)?;
    let mut model = fission_transform(&backbone, &plan, &masks)?;
    let flops = count_flops(&model);
    let exit_paths = (0..plan.num_exits())
        .map(|e| plan.exit_path(e))
        .collect::<nfe_core::Result<Vec<_>>>()?;
    let out = json!({
        "spec_hash": spec.hash(),
        "exits": plan.num_exits(),
        "groups_per_stage": plan.groups_per_stage(),
        "group_ratios": plan.group_ratios(),
        "exit_paths": exit_paths,
        "dag_nodes": model.dag.nodes.len(),
        "backbone_parameters": backbone.parameter_count(),
        "model_parameters": model.parameter_count(),
        "flops_dense": flops.dense,
        "flops_total": flops.total,
        "flops_ratio_before_pruning": flops.ratio,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn train(o: &Overrides) -> Result<()> {
    let spec = o.spec()?;
    let result = run_experiment(
        &spec,
        &RunOptions {
            data_dir: o.data_dir.clone(),
            out_dir: o.out.clone(),
        },
    )?;
    print!("{}", aggregate_table(&[(spec.name.clone(), &result)]));
    Ok(())
}

fn eval(path: &Path, o: &Overrides) -> Result<()> {
    let spec = o.spec()?;
    let mut model = checkpoint::load::<f32>(path)?;
    let splits = ingest_dataset(&spec.dataset, o.data_dir.as_deref())?;
    let ratio = count_flops(&model).ratio;
    let report = evaluate(&mut model, &splits.test, spec.eval_batch_size, ratio)?;
    print!("{}", format_table(&[(path.display().to_string(), report.clone())]));
    println!("{}", report.to_json()?);
    Ok(())
}

fn sweep(config: &Path, data_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let sweep = SweepSpec::from_toml(&std::fs::read_to_string(config)?)?;
    let splits = ingest_dataset(&sweep.base.dataset, data_dir)?;
    let entries = run_sweep(&sweep, &splits, out)?;
    let rows: Vec<_> = entries.iter().map(|e| (e.label.clone(), &e.result)).collect();
    print!("{}", aggregate_table(&rows));
    Ok(())
}

fn plot(results: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let found = load_results(results)?;
    if found.is_empty() {
        return Err(HarnessError::Spec(format!("no results under {}", results.display())));
    }
    match kind {
        PlotKind::Flops => {
            let pts: Vec<PlotPoint> = found.iter().map(|r| PlotPoint::from_result(r.spec.name.clone(), r)).collect();
            accuracy_vs_flops(&pts, out)
        }
        PlotKind::Sparsity => {
            let mut series: Vec<(String, Vec<(f64, Stat)>)> = Vec::new();
            for r in &found {
                let name = r.spec.pai.method.to_string();
                let point = (r.spec.pai.sparsity, r.aggregate.ensemble_accuracy);
                match series.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, v)) => v.push(point),
                    None => series.push((name, vec![point])),
                }
            }
            sparsity_vs_accuracy(&series, out)
        }
    }
}

fn report(results: &Path) -> Result<()> {
    let found = load_results(results)?;
    let rows: Vec<_> = found.iter().map(|r| (r.spec.name.clone(), r)).collect();
    print!("{}", aggregate_table(&rows));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Plan(o) => plan(o),
        Command::Train(o) => train(o),
        Command::Eval { checkpoint, overrides } => eval(checkpoint, overrides),
        Command::Sweep { config, data_dir, out } => sweep(config, data_dir.as_deref(), out.as_deref()),
        Command::Plot { results, kind, out } => plot(results, *kind, out),
        Command::Report { results } => report(results),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
