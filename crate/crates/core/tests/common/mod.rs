#![allow(dead_code)]

use ndarray::Array4;
use nfe_core::fission::{FissionPlan, GroupMaskSet, Mask};
use nfe_core::model::{fission_transform, Architecture, BackboneConfig, BackboneKind, MultiExitModel, StagedBackbone};
use nfe_core::pai::PaiMasks;
use nfe_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn toy_resnet(num_stages: usize, input_size: usize) -> BackboneConfig {
    BackboneConfig {
        kind: BackboneKind::SmallResnet,
        in_channels: 2,
        input_size,
        num_classes: 3,
        width: 2,
        blocks_per_stage: 1,
        num_stages,
    }
}

pub fn random_input<F: Scalar>(batch: usize, shape: (usize, usize, usize), seed: u64) -> Array4<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn((batch, shape.0, shape.1, shape.2), |_| {
        F::from_f64_lossy(StandardNormal.sample(&mut rng))
    })
}

/// Independent Bernoulli keep masks with probability `1 - sparsity`.
pub fn bernoulli_pai(arch: &Architecture, sparsity: f64, seed: u64) -> PaiMasks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| Mask::from_bits((0..n).map(|_| rng.random::<f64>() >= sparsity).collect());
    PaiMasks {
        stem: arch.stem_len().map(&mut draw),
        stages: arch.stage_sizes().into_iter().map(&mut draw).collect(),
        sparsity,
    }
}

/// Backbone plus its fissioned model with default plan, optional Bernoulli pruning.
pub fn build<F: Scalar>(
    cfg: &BackboneConfig,
    exits: usize,
    sparsity: f64,
    seed: u64,
) -> (StagedBackbone<F>, MultiExitModel<F>) {
    let backbone = StagedBackbone::<F>::new(cfg, seed).unwrap();
    let plan = FissionPlan::default_plan(exits, backbone.arch.num_stages()).unwrap();
    let mut masks =
        GroupMaskSet::generate(&plan, &backbone.arch.stage_sizes(), backbone.arch.stem_len(), seed + 1).unwrap();
    if sparsity > 0.0 {
        masks = masks.with_pai(&bernoulli_pai(&backbone.arch, sparsity, seed + 2)).unwrap();
    }
    let model = fission_transform(&backbone, &plan, &masks).unwrap();
    (backbone, model)
}
