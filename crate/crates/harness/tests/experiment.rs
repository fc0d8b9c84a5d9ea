use nfe_core::eval::evaluate;
use nfe_core::model::StagedBackbone;
use nfe_core::pai::PaiMethod;
use nfe_core::train::{train, TrainConfig};
use nfe_harness::experiment::{run_experiment_on, run_seed, Stat};
use nfe_harness::ingest::{ingest_dataset, Splits};
use nfe_harness::plots::{accuracy_vs_flops, sorted_by_flops, PlotPoint};
use nfe_harness::report::{aggregate_table, load_results};
use nfe_harness::spec::{DatasetName, ExperimentSpec};
use nfe_harness::sweep::{run_sweep, SweepAxis, SweepSpec};

fn tiny_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.name = "tiny".into();
    spec.dataset.name = DatasetName::Synthetic;
    spec.dataset.subsample = 1.0;
    spec.dataset.synthetic_train_per_class = 12;
    spec.dataset.synthetic_test_per_class = 6;
    spec.dataset.synthetic_image_size = 6;
    spec.backbone.width = 2;
    spec.backbone.num_stages = 3;
    spec.plan.exits = 2;
    spec.train.epochs = 2;
    spec.train.batch_size = 8;
    spec.train.lr_initial = 0.05;
    spec.repeats = 2;
    spec.eval_batch_size = 16;
    spec
}

fn splits(spec: &ExperimentSpec) -> Splits {
    ingest_dataset(&spec.dataset, None).unwrap()
}

#[test]
fn single_exit_dense_run_equals_plain_backbone_pipeline() {
    let mut spec = tiny_spec();
    spec.plan.exits = 1;
    spec.pai.method = PaiMethod::None;
    spec.pai.sparsity = 0.0;
    let data = splits(&spec);
    let seed = 5;
    let nfe = run_seed(&spec, &data, seed, None).unwrap();

    let mut backbone = StagedBackbone::<f32>::new(&spec.backbone_config().unwrap(), seed).unwrap();
    let cfg = TrainConfig { seed, ..spec.train.clone() };
    let logs = train(&mut backbone, &data.train, &cfg, |_| Ok(())).unwrap();
    let report = evaluate(&mut backbone, &data.test, spec.eval_batch_size, 1.0).unwrap();

    assert_eq!(nfe.report, report);
    let losses = |l: &[nfe_core::train::EpochLog]| l.iter().map(|e| e.loss).collect::<Vec<_>>();
    assert_eq!(losses(&nfe.logs), losses(&logs));
    assert_eq!(nfe.flops.ratio, 1.0);
}

#[test]
fn same_spec_and_seed_reproduce() {
    let spec = tiny_spec();
    let data = splits(&spec);
    let a = run_experiment_on(&spec, &data, None).unwrap();
    let b = run_experiment_on(&spec, &splits(&spec), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), spec.repeats);
    assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), spec.seeds());
}

#[test]
fn aggregate_uses_sample_std() {
    let spec = tiny_spec();
    let r = run_experiment_on(&spec, &splits(&spec), None).unwrap();
    let accs: Vec<f64> = r.runs.iter().map(|x| x.report.ensemble_accuracy).collect();
    let mean = (accs[0] + accs[1]) / 2.0;
    let std = ((accs[0] - mean).powi(2) + (accs[1] - mean).powi(2)).sqrt();
    assert!((r.aggregate.ensemble_accuracy.mean - mean).abs() < 1e-15);
    assert!((r.aggregate.ensemble_accuracy.std - std).abs() < 1e-15);
}

#[test]
fn sparsity_sweep_gives_table_shaped_output() {
    let mut base = tiny_spec();
    base.repeats = 1;
    base.train.epochs = 1;
    let sweep = SweepSpec {
        base: base.clone(),
        sweep: SweepAxis::Sparsity {
            values: vec![0.0, 0.25, 0.5, 0.75],
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let entries = run_sweep(&sweep, &splits(&base), Some(dir.path())).unwrap();
    assert_eq!(entries.len(), 4);
    for (e, s) in entries.iter().zip([0.0, 0.25, 0.5, 0.75]) {
        assert_eq!(e.result.spec.pai.sparsity, s);
        assert_eq!(e.result.runs.len(), 1);
        assert!((e.result.runs[0].realized_sparsity - s).abs() < 0.02);
    }
    // FLOPs fall as sparsity rises.
    let f: Vec<f64> = entries.iter().map(|e| e.result.aggregate.flops_ratio.mean).collect();
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");

    let rows: Vec<_> = entries.iter().map(|e| (e.label.clone(), &e.result)).collect();
    let table = aggregate_table(&rows);
    assert_eq!(table.lines().count(), 2 + 4);
    for e in &entries {
        assert!(table.contains(&e.result.spec_hash));
    }
    assert_eq!(load_results(dir.path()).unwrap().len(), 4);
}

#[test]
fn grouping_ratio_sweep_yields_curve_data() {
    let mut base = tiny_spec();
    base.repeats = 1;
    base.train.epochs = 1;
    let sweep = SweepSpec {
        base: base.clone(),
        sweep: SweepAxis::GroupingRatio {
            values: vec![0.1, 0.25, 0.5],
        },
    };
    let entries = run_sweep(&sweep, &splits(&base), None).unwrap();
    let labels: Vec<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels, ["0.1/0.9", "0.25/0.75", "0.5/0.5"]);
    for e in &entries {
        let acc = e.result.aggregate.ensemble_accuracy.mean;
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn plots_are_written_and_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let one = [PlotPoint {
        label: "a".into(),
        flops: 1.0,
        accuracy: Stat { mean: 0.8, std: 0.0 },
    }];
    let path = dir.path().join("one.svg");
    accuracy_vs_flops(&one, &path).unwrap();
    let svg = std::fs::read_to_string(&path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 1);

    let pts: Vec<PlotPoint> = [(0.7, 0.8), (0.5, 0.7), (1.0, 0.9)]
        .iter()
        .map(|&(f, a)| PlotPoint {
            label: format!("{f}"),
            flops: f,
            accuracy: Stat::of(&[a - 0.01, a, a + 0.01]),
        })
        .collect();
    let sorted = sorted_by_flops(&pts);
    assert_eq!(sorted.iter().map(|p| p.flops).collect::<Vec<_>>(), [0.5, 0.7, 1.0]);
    assert!((sorted[0].accuracy.std - 0.01).abs() < 1e-12);
    let path = dir.path().join("three.svg");
    accuracy_vs_flops(&pts, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().matches("<circle").count(), 3);
}
