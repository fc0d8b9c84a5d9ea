use serde::{Deserialize, Serialize};

use super::arch::{Architecture, BlockSpec};
use super::multi_exit::MultiExitModel;
use crate::fission::{ExecutionDag, GroupMaskSet};
use crate::scalar::Scalar;

/// Multiply-accumulate counts per input image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    /// Cost of each DAG node (masked groupable weights, shortcut, normalization).
    pub per_node: Vec<u64>,
    /// Cost of running one exit alone, stem and head included.
    pub per_exit: Vec<u64>,
    /// Whole multi-exit forward, shared prefixes counted once.
    pub total: u64,
    /// Dense single backbone with one head.
    pub dense: u64,
    pub ratio: f64,
    /// Stem plus groupable weights only (no shortcuts, normalization or heads).
    pub conv_total: u64,
    pub conv_dense: u64,
    pub conv_ratio: f64,
}

pub fn count_flops<F: Scalar>(model: &MultiExitModel<F>) -> FlopsReport {
    count_flops_for(&model.arch, &model.masks, &model.dag)
}

/// Theoretical counts from the mask structure: a weight position costs one
/// MAC per output position when it is set in the node's group mask.
pub fn count_flops_for(arch: &Architecture, masks: &GroupMaskSet, dag: &ExecutionDag) -> FlopsReport {
    let (_, h, w) = arch.in_shape;
    let (stem_dense, stem_conv, stem_norm) = match arch.stem_shape() {
        Some(shape) => {
            let nnz = masks.stem_pai.as_ref().map_or(0, |m| m.count_ones());
            let dense: usize = shape.iter().product();
            ((dense * h * w) as u64, (nnz * h * w) as u64, (shape[0] * h * w) as u64)
        }
        None => (0, 0, 0),
    };
    let head = (arch.feature_dim * arch.num_classes) as u64;

    // per stage: (positions per groupable tensor, extra shortcut+norm cost)
    let layout: Vec<(Vec<usize>, Vec<usize>, u64)> = arch
        .stages
        .iter()
        .map(|spec| {
            let mut lens = Vec::new();
            let mut positions = Vec::new();
            let mut extra = 0u64;
            for b in &spec.blocks {
                lens.extend(b.groupable_shapes().iter().map(|s| s.iter().product::<usize>()));
                positions.extend(b.groupable_positions());
                if let BlockSpec::Residual { in_channels, out_channels, out_hw, .. } = *b {
                    let hw = (out_hw.0 * out_hw.1) as u64;
                    extra += 2 * out_channels as u64 * hw;
                    if b.has_projection() {
                        extra += (in_channels * out_channels) as u64 * hw + out_channels as u64 * hw;
                    }
                }
            }
            (lens, positions, extra)
        })
        .collect();

    let masked_cost = |stage: usize, bits: &[bool]| -> u64 {
        let (lens, positions, _) = &layout[stage];
        let mut off = 0;
        lens.iter()
            .zip(positions)
            .map(|(&n, &p)| {
                let nnz = bits[off..off + n].iter().filter(|&&b| b).count();
                off += n;
                (nnz * p) as u64
            })
            .sum()
    };

    let mut conv_total = stem_conv;
    let per_node: Vec<u64> = dag
        .nodes
        .iter()
        .map(|node| {
            let c = masked_cost(node.stage, masks.group_mask(node.stage, node.group).bits());
            conv_total += c;
            c + layout[node.stage].2
        })
        .collect();
    let stage_dense: u64 = layout
        .iter()
        .map(|(lens, pos, _)| lens.iter().zip(pos).map(|(&n, &p)| (n * p) as u64).sum::<u64>())
        .sum();
    let extras: u64 = layout.iter().map(|l| l.2).sum();
    let conv_dense = stem_dense + stage_dense;
    let dense = conv_dense + stem_norm + extras + head;
    let total = stem_conv + stem_norm + per_node.iter().sum::<u64>() + head * dag.num_exits() as u64;
    let per_exit = (0..dag.num_exits())
        .map(|j| stem_conv + stem_norm + dag.path_nodes(j).iter().map(|&n| per_node[n]).sum::<u64>() + head)
        .collect();
    FlopsReport {
        per_node,
        per_exit,
        total,
        dense,
        ratio: total as f64 / dense as f64,
        conv_total,
        conv_dense,
        conv_ratio: conv_total as f64 / conv_dense as f64,
    }
}
