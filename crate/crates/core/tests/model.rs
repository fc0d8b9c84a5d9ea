mod common;

use common::{build, random_input, toy_resnet};
use ndarray::{array, Array2, Array4, ArrayD, Ix2};
use nfe_core::fission::{partition_from_draws, FissionPlan, GroupMaskSet, Mask, StageMasks};
use nfe_core::model::{checkpoint, count_flops, fission_transform, BackboneConfig, Network, StagedBackbone};
use nfe_core::nn::Mode;
use nfe_core::train::{sgd_step, nfe_loss, LossConfig};
use nfe_core::Error;

#[test]
fn single_exit_dense_model_reproduces_backbone_bitwise() {
    let cfg = toy_resnet(3, 8);
    let (mut backbone, mut model) = build::<f32>(&cfg, 1, 0.0, 4);
    let x = random_input::<f32>(5, (2, 8, 8), 1);
    let a = backbone.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0], b[0]);
    let (ta, _) = backbone.forward(&x, Mode::Train).unwrap();
    let (tb, _) = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(ta[0], tb[0]);
}

#[test]
fn dag_matches_naive_execution() {
    for (exits, sparsity, seed) in [(2, 0.0, 1), (3, 0.5, 2), (4, 0.0, 3), (4, 0.5, 5)] {
        let (_, mut model) = build::<f64>(&toy_resnet(4, 8), exits, sparsity, seed);
        let x = random_input::<f64>(3, (2, 8, 8), seed);
        let dag = model.predict(&x).unwrap();
        assert_eq!(dag.len(), exits);
        for (j, z) in dag.iter().enumerate() {
            assert_eq!(z.dim(), (3, 3));
            assert_eq!(&model.forward_exit_naive(&x, j, Mode::Eval).unwrap(), z);
        }
    }
}

#[test]
fn exits_share_trunk_activations() {
    let (_, mut model) = build::<f64>(&toy_resnet(4, 8), 4, 0.0, 7);
    let x = random_input::<f64>(2, (2, 8, 8), 0);
    let (_, trace) = model.trace(&x, Mode::Eval).unwrap();
    let p0 = model.dag.path_nodes(0);
    let p3 = model.dag.path_nodes(3);
    // exits 1 and 4 (0-based 0 and 3) fall back to group 1 until the last stage
    assert_eq!(p0[..3], p3[..3]);
    assert_ne!(p0[3], p3[3]);
    for s in 0..3 {
        assert_eq!(trace.node_outputs[p0[s]], trace.node_outputs[p3[s]]);
    }
    assert_eq!(trace.node_outputs.len(), 10);
}

fn set(p: &mut ArrayD<f64>, v: Array2<f64>) {
    *p = v.into_dyn();
}

/// Two dense stages without normalization: each exit is a chain of masked
/// matrix products that can be written out by hand.
#[test]
fn two_stage_linear_net_matches_hand_computation() {
    let cfg = BackboneConfig::mlp(3, 2, 2, 2);
    let backbone = StagedBackbone::<f64>::new(&cfg, 0).unwrap();
    let plan = FissionPlan::default_plan(2, 2).unwrap();
    assert_eq!(plan.groups_per_stage(), &[1, 2]);
    let masks = GroupMaskSet {
        plan: plan.clone(),
        seed: 0,
        sparsity: 0.0,
        stem_pai: None,
        stages: vec![
            StageMasks {
                pai: Mask::ones(6),
                groups: vec![Mask::ones(6)],
            },
            StageMasks {
                pai: Mask::ones(4),
                groups: partition_from_draws(&[0, 1, 1, 0], 2).unwrap(),
            },
        ],
    };
    let mut model = fission_transform(&backbone, &plan, &masks).unwrap();
    let w0 = array![[1.0, -1.0, 0.5], [0.25, 2.0, -0.5]];
    let w1 = array![[1.5, -2.0], [0.5, 3.0]];
    let h0 = array![[1.0, 0.0], [-1.0, 2.0]];
    let h1 = array![[0.5, 0.5], [2.0, -1.0]];
    set(&mut model.stages[0][0].value, w0);
    set(&mut model.stages[1][0].value, w1);
    set(&mut model.heads[0].weight.value, h0);
    set(&mut model.heads[1].weight.value, h1);
    model.heads[0].bias.value = array![0.1, -0.1].into_dyn();
    model.heads[1].bias.value = array![0.0, 1.0].into_dyn();

    let x = Array4::from_shape_vec((1, 3, 1, 1), vec![2.0, 1.0, 4.0]).unwrap();
    // stage 0: relu([2 - 1 + 2, 0.5 + 2 - 2]) = [3, 0.5]
    // exit 0, group 0 keeps W1[0,0], W1[1,1]: relu([4.5, 1.5]) = [4.5, 1.5]
    //   head 0: [4.5 + 0.1, -4.5 + 3 - 0.1] = [4.6, -1.6]
    // exit 1, group 1 keeps W1[0,1], W1[1,0]: relu([-1, 1.5]) = [0, 1.5]
    //   head 1: [0.75, -1.5 + 1] = [0.75, -0.5]
    let z = model.predict(&x).unwrap();
    let close = |a: &Array2<f64>, b: Array2<f64>| a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12);
    assert!(close(&z[0], array![[4.6, -1.6]]), "{:?}", z[0]);
    assert!(close(&z[1], array![[0.75, -0.5]]), "{:?}", z[1]);
}

#[test]
fn pruned_weights_stay_zero_under_training() {
    let cfg = toy_resnet(3, 8);
    let (_, mut model) = build::<f64>(&cfg, 3, 0.5, 11);
    let x = random_input::<f64>(4, (2, 8, 8), 3);
    let y = vec![0, 1, 2, 1];
    for _ in 0..3 {
        model.zero_grad();
        let (z, trace) = model.forward(&x, Mode::Train).unwrap();
        let out = nfe_loss(&z, &y, &LossConfig::default()).unwrap();
        model.backward(trace, &out.grads).unwrap();
        sgd_step(&mut model, 0.1, 0.9, 5e-4);
    }
    for (s, ws) in model.stages.iter().enumerate() {
        let pai = &model.masks.stages[s].pai;
        let flat: Vec<f64> = ws.iter().flat_map(|p| p.value.iter().copied().collect::<Vec<_>>()).collect();
        for (i, v) in flat.iter().enumerate() {
            if !pai.get(i) {
                assert_eq!(*v, 0.0);
            }
        }
        for g in 0..model.plan().groups(s) {
            let eff = model.effective_weights(s, g);
            let flat: Vec<f64> = eff.iter().flat_map(|a| a.iter().copied().collect::<Vec<_>>()).collect();
            let m = model.masks.group_mask(s, g);
            assert!(flat.iter().enumerate().all(|(i, v)| m.get(i) || *v == 0.0));
        }
    }
    let stem = model.stem.as_ref().unwrap();
    let pai = model.masks.stem_pai.as_ref().unwrap();
    assert!(stem.conv.value.iter().enumerate().all(|(i, v)| pai.get(i) || *v == 0.0));
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let (_, mut model) = build::<f32>(&toy_resnet(2, 8), 2, 0.5, 9);
    let x = random_input::<f32>(3, (2, 8, 8), 2);
    // move running statistics away from their initial values
    model.forward(&x, Mode::Train).unwrap();
    let before = model.predict(&x).unwrap();
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&mut model, &mut bytes).unwrap();
    let mut loaded = checkpoint::read_checkpoint::<f32, _>(&mut bytes.as_slice()).unwrap();
    assert_eq!(loaded.predict(&x).unwrap(), before);
    assert_eq!(loaded.masks, model.masks);

    bytes.truncate(bytes.len() - 3);
    assert!(matches!(
        checkpoint::read_checkpoint::<f32, _>(&mut bytes.as_slice()),
        Err(Error::Format(_))
    ));
    assert!(checkpoint::read_checkpoint::<f32, _>(&mut &b"garbage!"[..]).is_err());
}

#[test]
fn parameter_accounting() {
    let cfg = toy_resnet(3, 8);
    let (mut backbone, mut model) = build::<f64>(&cfg, 3, 0.0, 1);
    let base = backbone.parameter_count();
    let full = model.parameter_count();
    let head = 8 * 3 + 3;
    // extra heads plus one replicated stage-local state per additional DAG node
    let mut extra_local = 0;
    let mut per_stage = vec![0usize; 3];
    for (s, l) in backbone.locals.iter_mut().enumerate() {
        l.visit_params("x", &mut |_, p| per_stage[s] += p.numel());
    }
    for s in 0..3 {
        let nodes = model.dag.nodes.iter().filter(|n| n.stage == s).count();
        extra_local += (nodes - 1) * per_stage[s];
    }
    assert_eq!(full, base + 2 * head + extra_local);
    assert_eq!(model.active_parameter_count(), full);
}

#[test]
fn fission_rejects_bad_inputs() {
    let cfg = toy_resnet(2, 8);
    let backbone = StagedBackbone::<f64>::new(&cfg, 0).unwrap();
    let plan = FissionPlan::default_plan(2, 2).unwrap();
    let masks =
        GroupMaskSet::generate(&plan, &backbone.arch.stage_sizes(), backbone.arch.stem_len(), 0).unwrap();

    let other = FissionPlan::default_plan(2, 3).unwrap();
    assert!(fission_transform(&backbone, &other, &masks).is_err());

    let wrong = GroupMaskSet::generate(&plan, &[10, 10], backbone.arch.stem_len(), 0).unwrap();
    assert!(matches!(
        fission_transform(&backbone, &plan, &wrong),
        Err(Error::ShapeMismatch { .. })
    ));

    // a stage whose second group lost every weight to pruning
    let mut dead = masks.clone();
    let n = dead.stages[1].pai.len();
    let keep: Vec<bool> = dead.stages[1].groups[0].bits().to_vec();
    dead.stages[1].pai = Mask::from_bits(keep);
    dead.stages[1].groups[1] = Mask::zeros(n);
    assert!(matches!(
        fission_transform(&backbone, &plan, &dead),
        Err(Error::DeadExit { exit: 1, stage: 1, .. })
    ));

    let (_, mut model) = build::<f64>(&cfg, 2, 0.0, 0);
    let x = random_input::<f64>(1, (3, 8, 8), 0);
    assert!(matches!(model.predict(&x), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn flops_of_built_models() {
    let (_, model) = build::<f32>(&toy_resnet(3, 8), 1, 0.0, 0);
    let r = count_flops(&model);
    assert_eq!(r.ratio, 1.0);
    let (_, model) = build::<f32>(&toy_resnet(3, 8), 3, 0.0, 0);
    let r = count_flops(&model);
    assert_eq!(r.conv_ratio, 1.0);
    assert!(r.ratio > 1.0);
    let per_node_sum: u64 = r.per_node.iter().sum();
    assert!(per_node_sum < r.total);
}

#[test]
fn head_weights_are_two_dimensional() {
    let (_, model) = build::<f32>(&toy_resnet(2, 8), 2, 0.0, 0);
    for h in &model.heads {
        assert!(h.weight.value.view().into_dimensionality::<Ix2>().is_ok());
    }
    assert_ne!(model.heads[0].weight.value, model.heads[1].weight.value);
}
