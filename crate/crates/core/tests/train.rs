mod common;

use common::{build, random_input, toy_resnet};
use ndarray::{array, Array2};
use nfe_core::data::Dataset;
use nfe_core::fission::{FissionPlan, GroupMaskSet};
use nfe_core::model::{fission_transform, Network, StagedBackbone};
use nfe_core::nn::Mode;
use nfe_core::train::{log_softmax, nfe_loss, softmax, train, LossConfig, LrSchedule, TrainConfig};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn two_exit_loss_matches_scalar_arithmetic() {
    // z1 = [2, 0], z2 = [0, 0], y = 0, alpha = 0.5, T = 2
    let z = vec![array![[2.0, 0.0]], array![[0.0, 0.0]]];
    let cfg = LossConfig {
        alpha: 0.5,
        temperature: 2.0,
        ..LossConfig::default()
    };
    let out = nfe_loss(&z, &[0], &cfg).unwrap();
    let ce1 = (1.0 + (-2.0f64).exp()).ln();
    let ce2 = 2f64.ln();
    // softened: q1 = [s(1), s(-1)], q2 = [1/2, 1/2], z_E / T = [0.5, 0]
    let (a, b) = (sigmoid(1.0), sigmoid(-1.0));
    let (ea, eb) = (sigmoid(0.5), sigmoid(-0.5));
    let kl1 = a * (a / ea).ln() + b * (b / eb).ln();
    let kl2 = 0.5 * (0.5 / ea).ln() + 0.5 * (0.5 / eb).ln();
    let expected = ce1 + ce2 + 0.5 * (kl1 + kl2);
    assert!((out.breakdown.total - expected).abs() < 1e-14, "{} vs {expected}", out.breakdown.total);
    assert!((out.breakdown.kl[0] - kl1).abs() < 1e-14);
    assert!((out.breakdown.kl[1] - kl2).abs() < 1e-14);
}

#[test]
fn alpha_zero_is_sum_of_cross_entropies() {
    let z = vec![array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]], array![[0.0, 0.5, 0.1], [-2.0, 0.0, 3.0]]];
    let y = [2, 0];
    let cfg = LossConfig {
        alpha: 0.0,
        ..LossConfig::default()
    };
    let out = nfe_loss(&z, &y, &cfg).unwrap();
    let mut ce = 0.0;
    for zi in &z {
        let ls = log_softmax(zi, 1.0);
        ce -= (ls[[0, 2]] + ls[[1, 0]]) / 2.0;
    }
    assert!((out.breakdown.total - ce).abs() < 1e-14);
}

#[test]
fn identical_exits_give_zero_kl() {
    let zi = array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]];
    let z = vec![zi.clone(), zi.clone(), zi];
    let out = nfe_loss(&z, &[1, 0], &LossConfig::default()).unwrap();
    assert_eq!(out.breakdown.kl_sum(), 0.0);
    assert_eq!(out.breakdown.total, 3.0 * out.breakdown.ce[0]);
}

/// Loss of exit logits with the teacher frozen at `q_e`.
fn frozen_teacher_loss(z: &[Array2<f64>], y: &[usize], q_e: &Array2<f64>, cfg: &LossConfig) -> f64 {
    let b = y.len() as f64;
    let mut total = 0.0;
    for zi in z {
        let ls = log_softmax(zi, 1.0);
        let lq = log_softmax(zi, cfg.temperature);
        for (r, &label) in y.iter().enumerate() {
            total -= ls[[r, label]] / b;
            for k in 0..zi.ncols() {
                let q = lq[[r, k]].exp();
                total += cfg.alpha * q * (lq[[r, k]] - q_e[[r, k]].ln()) / b;
            }
        }
    }
    total
}

#[test]
fn detached_teacher_gradient_has_no_teacher_path() {
    let z = vec![array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]], array![[0.0, 0.5, 0.1], [-2.0, 0.0, 3.0]]];
    let y = [2, 1];
    let cfg = LossConfig::default();
    let out = nfe_loss(&z, &y, &cfg).unwrap();
    let z_e = (&z[0] + &z[1]) / 2.0;
    let q_e = softmax(&z_e, cfg.temperature);
    let h = 1e-6;
    for k in 0..2 {
        for idx in [(0, 0), (1, 2), (0, 1)] {
            let mut zp = z.clone();
            zp[k][idx] += h;
            let mut zm = z.clone();
            zm[k][idx] -= h;
            let fd = (frozen_teacher_loss(&zp, &y, &q_e, &cfg) - frozen_teacher_loss(&zm, &y, &q_e, &cfg)) / (2.0 * h);
            assert!((fd - out.grads[k][idx]).abs() < 1e-8, "{fd} vs {}", out.grads[k][idx]);
        }
    }
    let attached = nfe_loss(
        &z,
        &y,
        &LossConfig {
            detach_teacher: false,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(attached.breakdown.total, out.breakdown.total);
    assert_ne!(attached.grads, out.grads);
}

fn model_loss(model: &mut impl Network<f64>, x: &ndarray::Array4<f64>, y: &[usize], cfg: &LossConfig) -> f64 {
    let (z, _) = model.forward(x, Mode::Train).unwrap();
    nfe_loss(&z, y, cfg).unwrap().breakdown.total
}

fn perturb(model: &mut impl Network<f64>, target: usize, delta: f64) {
    let mut k = 0;
    model.visit_params(&mut |_, p| {
        let n = p.numel();
        if target >= k && target < k + n {
            let flat = p.value.as_slice_mut().unwrap();
            flat[target - k] += delta;
        }
        k += n;
    });
}

fn grad_at(model: &mut impl Network<f64>, target: usize) -> f64 {
    let mut k = 0;
    let mut g = 0.0;
    model.visit_params(&mut |_, p| {
        let n = p.numel();
        if target >= k && target < k + n {
            g = p.grad.as_slice().unwrap()[target - k];
        }
        k += n;
    });
    g
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let (_, mut model) = build::<f64>(&toy_resnet(2, 6), 2, 0.5, 21);
    let x = random_input::<f64>(4, (2, 6, 6), 8);
    let y = vec![0, 2, 1, 2];
    let cfg = LossConfig {
        detach_teacher: false,
        ..LossConfig::default()
    };
    model.zero_grad();
    let (z, trace) = model.forward(&x, Mode::Train).unwrap();
    let out = nfe_loss(&z, &y, &cfg).unwrap();
    model.backward(trace, &out.grads).unwrap();
    let total = model.parameter_count();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for target in sample(&mut rng, total, 20) {
        let analytic = grad_at(&mut model, target);
        perturb(&mut model, target, h);
        let up = model_loss(&mut model, &x, &y, &cfg);
        perturb(&mut model, target, -2.0 * h);
        let down = model_loss(&mut model, &x, &y, &cfg);
        perturb(&mut model, target, h);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

fn toy_data(classes: usize) -> Dataset {
    Dataset::synthetic(10 / classes, classes, (2, 8, 8), 0.3, 4).unwrap()
}

#[test]
fn single_exit_without_distillation_trains_like_the_backbone() {
    let mut cfg_b = toy_resnet(2, 8);
    cfg_b.num_classes = 2;
    let data = toy_data(2);
    assert_eq!(data.len(), 10);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        alpha: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let (mut backbone, mut model) = build::<f64>(&cfg_b, 1, 0.0, 2);
    let a = train(&mut backbone, &data, &cfg, |_| Ok(())).unwrap();
    let b = train(&mut model, &data, &cfg, |_| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(backbone.predict(&data.batch::<f64, ChaCha8Rng>(&[0, 1], None).0).unwrap(),
               model.predict(&data.batch::<f64, ChaCha8Rng>(&[0, 1], None).0).unwrap());
}

#[test]
fn copies_of_one_path_log_zero_distillation() {
    let mut cfg_b = toy_resnet(2, 8);
    cfg_b.num_classes = 2;
    let backbone = StagedBackbone::<f64>::new(&cfg_b, 1).unwrap();
    let plan = FissionPlan::new(2, vec![1, 1], None).unwrap();
    let masks = GroupMaskSet::generate(&plan, &backbone.arch.stage_sizes(), backbone.arch.stem_len(), 0).unwrap();
    let mut model = fission_transform(&backbone, &plan, &masks).unwrap();
    model.heads[1] = model.heads[0].clone();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 5,
        ..TrainConfig::default()
    };
    let logs = train(&mut model, &toy_data(2), &cfg, |_| Ok(())).unwrap();
    for log in &logs {
        assert_eq!(log.kl_total, 0.0);
        assert_eq!(log.per_exit_accuracy[0], log.per_exit_accuracy[1]);
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let data = Dataset::synthetic(8, 3, (2, 8, 8), 0.3, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        lr_initial: 0.05,
        lr_schedule: LrSchedule::HalfThenLinear,
        seed: 1,
        ..TrainConfig::default()
    };
    let run = || {
        let (_, mut model) = build::<f32>(&toy_resnet(2, 8), 2, 0.0, 3);
        train(&mut model, &data, &cfg, |_| Ok(())).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.last().unwrap().loss < a[0].loss);
    assert_eq!(a.len(), 6);
}

#[test]
fn divergence_is_reported() {
    let data = toy_data(2);
    let mut cfg_b = toy_resnet(2, 8);
    cfg_b.num_classes = 2;
    let (_, mut model) = build::<f32>(&cfg_b, 2, 0.0, 0);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        lr_initial: 1e30,
        augment: false,
        ..TrainConfig::default()
    };
    let err = train(&mut model, &data, &cfg, |_| Ok(())).unwrap_err();
    assert!(matches!(err, nfe_core::Error::Divergence { .. }), "{err}");
}
