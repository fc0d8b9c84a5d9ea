use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, BackboneConfig};
use super::backbone::StagedBackbone;
use super::stage::{
    check_input, head_backward, head_forward, masked_accumulate, masked_copy, stage_backward, stage_forward,
    stem_backward, stem_forward, visit_bn_buffers, visit_bn_params, HeadCache, StageCache, StageLocal, Stem,
    StemCache,
};
use super::Network;
use crate::error::{Error, Result};
use crate::fission::{ExecutionDag, FissionPlan, GroupMaskSet};
use crate::nn::{Linear, Mode, Param};
use crate::scalar::Scalar;

/// Seed offset for heads 2..N, which are drawn fresh rather than copied.
const HEAD_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Backbone weights shared by `N` exits through per-stage group masks.
///
/// Stage weights are stored once; node `(stage, group, lineage)` uses
/// `W_stage ∘ M_stage^group`. Normalization layers and projection shortcuts
/// are replicated per DAG node, heads per exit.
#[derive(Clone, Debug)]
pub struct MultiExitModel<F> {
    pub config: BackboneConfig,
    pub arch: Architecture,
    pub masks: GroupMaskSet,
    pub dag: ExecutionDag,
    pub stem: Option<Stem<F>>,
    pub stages: Vec<Vec<Param<F>>>,
    pub nodes: Vec<StageLocal<F>>,
    pub heads: Vec<Linear<F>>,
}

/// Activations of one DAG forward pass, plus the caches needed for backward
/// when run in train mode.
#[derive(Debug)]
pub struct ForwardTrace<F> {
    /// Output of every DAG node, indexed like `dag.nodes`.
    pub node_outputs: Vec<Array4<F>>,
    stem_weight: Option<ArrayD<F>>,
    stem: Option<StemCache<F>>,
    weights: Vec<Vec<Vec<ArrayD<F>>>>,
    nodes: Vec<Option<StageCache<F>>>,
    heads: Vec<HeadCache<F>>,
    mode: Mode,
}

/// Builds the multi-exit model: shared weights are taken from `backbone`
/// with pruned positions zeroed; every DAG node gets a copy of its stage's
/// normalization and shortcut state; exit 0 keeps the backbone head, later
/// exits get freshly initialized heads.
pub fn fission_transform<F: Scalar>(
    backbone: &StagedBackbone<F>,
    plan: &FissionPlan,
    masks: &GroupMaskSet,
) -> Result<MultiExitModel<F>> {
    plan.validate()?;
    if plan != &masks.plan {
        return Err(Error::InvalidPlan("plan differs from the mask set's plan".into()));
    }
    if plan.num_stages() != backbone.arch.num_stages() {
        return Err(Error::shape(
            "stage count",
            &[backbone.arch.num_stages()],
            &[plan.num_stages()],
        ));
    }
    let sizes = backbone.arch.stage_sizes();
    if masks.stage_sizes() != sizes {
        return Err(Error::shape("stage mask sizes", &sizes, &masks.stage_sizes()));
    }
    match (backbone.arch.stem_len(), &masks.stem_pai) {
        (None, None) => {}
        (Some(n), Some(m)) if m.len() == n => {}
        (n, m) => {
            return Err(Error::shape(
                "stem mask",
                &[n.unwrap_or(0)],
                &[m.as_ref().map_or(0, |m| m.len())],
            ))
        }
    }
    masks.validate()?;
    masks.check_live_exits()?;
    let dag = ExecutionDag::build(plan)?;

    let stem = backbone.stem.clone().map(|mut s| {
        let bits = masks.stem_pai.as_ref().expect("checked above").bits();
        s.conv.value = masked_copy(&s.conv.value, bits);
        s
    });
    let stages = backbone
        .stages
        .iter()
        .enumerate()
        .map(|(i, ws)| {
            let bits = masks.stages[i].pai.bits();
            let mut off = 0;
            ws.iter()
                .map(|p| {
                    let n = p.numel();
                    let q = Param::new(masked_copy(&p.value, &bits[off..off + n]));
                    off += n;
                    q
                })
                .collect()
        })
        .collect();
    let nodes = dag.nodes.iter().map(|n| backbone.locals[n.stage].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(masks.seed ^ HEAD_SEED_SALT);
    let heads = (0..plan.num_exits())
        .map(|j| {
            if j == 0 {
                backbone.head.clone()
            } else {
                Linear::init(backbone.arch.feature_dim, backbone.arch.num_classes, &mut rng)
            }
        })
        .collect();
    Ok(MultiExitModel {
        config: backbone.config.clone(),
        arch: backbone.arch.clone(),
        masks: masks.clone(),
        dag,
        stem,
        stages,
        nodes,
        heads,
    })
}

impl<F: Scalar> MultiExitModel<F> {
    pub fn plan(&self) -> &FissionPlan {
        &self.masks.plan
    }

    /// `W_stage ∘ M_stage^group`, split into the stage's tensors.
    pub fn effective_weights(&self, stage: usize, group: usize) -> Vec<ArrayD<F>> {
        let bits = self.masks.group_mask(stage, group).bits();
        let mut off = 0;
        self.stages[stage]
            .iter()
            .map(|p| {
                let n = p.numel();
                let w = masked_copy(&p.value, &bits[off..off + n]);
                off += n;
                w
            })
            .collect()
    }

    fn effective_stem(&self) -> Option<ArrayD<F>> {
        self.stem
            .as_ref()
            .map(|s| masked_copy(&s.conv.value, self.masks.stem_pai.as_ref().expect("stem mask").bits()))
    }

    /// Reference execution of a single exit: walks stages in order with the
    /// exit's group at each stage, recomputing every shared prefix.
    pub fn forward_exit_naive(&mut self, x: &Array4<F>, exit: usize, mode: Mode) -> Result<Array2<F>> {
        check_input(x, self.arch.in_shape)?;
        if exit >= self.heads.len() {
            return Err(Error::OutOfRange(format!("exit {exit} of {}", self.heads.len())));
        }
        let stem_w = self.effective_stem();
        let mut h = match (&mut self.stem, &stem_w) {
            (Some(stem), Some(w)) => stem_forward(stem, w, x, mode).0,
            _ => x.clone(),
        };
        let mut lineage = None;
        for stage in 0..self.arch.num_stages() {
            let group = self.masks.plan.group_for(stage, exit)?;
            let node = self
                .dag
                .nodes
                .iter()
                .position(|n| n.stage == stage && n.group == group && n.lineage == lineage)
                .ok_or_else(|| Error::InvalidPlan(format!("no node for exit {exit} at stage {stage}")))?;
            let w = self.effective_weights(stage, group);
            h = stage_forward(&self.arch.stages[stage], &w, &mut self.nodes[node], h, mode).0;
            lineage = Some(node);
        }
        Ok(head_forward(&self.heads[exit], &h).0)
    }

    /// Forward over the execution DAG, keeping every node output.
    pub fn trace(&mut self, x: &Array4<F>, mode: Mode) -> Result<(Vec<Array2<F>>, ForwardTrace<F>)> {
        check_input(x, self.arch.in_shape)?;
        let stem_weight = self.effective_stem();
        let (stem_out, stem_cache) = match (&mut self.stem, &stem_weight) {
            (Some(stem), Some(w)) => stem_forward(stem, w, x, mode),
            _ => (x.clone(), None),
        };
        let weights: Vec<Vec<Vec<ArrayD<F>>>> = (0..self.arch.num_stages())
            .map(|s| (0..self.masks.plan.groups(s)).map(|g| self.effective_weights(s, g)).collect())
            .collect();
        let n = self.dag.len();
        let mut outputs: Vec<Array4<F>> = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        for id in 0..n {
            let node = &self.dag.nodes[id];
            let input = match node.lineage {
                Some(p) => outputs[p].clone(),
                None => stem_out.clone(),
            };
            let (y, c) = stage_forward(
                &self.arch.stages[node.stage],
                &weights[node.stage][node.group],
                &mut self.nodes[id],
                input,
                mode,
            );
            outputs.push(y);
            caches.push(c);
        }
        let (logits, head_caches): (Vec<_>, Vec<_>) = self
            .heads
            .iter()
            .zip(&self.dag.exit_heads)
            .map(|(h, &node)| head_forward(h, &outputs[node]))
            .unzip();
        Ok((
            logits,
            ForwardTrace {
                node_outputs: outputs,
                stem_weight,
                stem: stem_cache,
                weights,
                nodes: caches,
                heads: head_caches,
                mode,
            },
        ))
    }

    /// Zeroes every stored weight at a pruned position.
    pub fn enforce_masks(&mut self) {
        if let (Some(stem), Some(m)) = (&mut self.stem, &self.masks.stem_pai) {
            zero_unset(&mut stem.conv.value, m.bits());
        }
        for (ws, sm) in self.stages.iter_mut().zip(&self.masks.stages) {
            let bits = sm.pai.bits();
            let mut off = 0;
            for p in ws {
                let n = p.numel();
                zero_unset(&mut p.value, &bits[off..off + n]);
                off += n;
            }
        }
    }

    /// Sum of element counts over all unique parameter tensors.
    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.numel());
        n
    }

    /// Nonzero weights kept by the pruning masks plus all non-groupable parameters.
    pub fn active_parameter_count(&mut self) -> usize {
        let stem_pruned = self.masks.stem_pai.as_ref().map_or(0, |m| m.len() - m.count_ones());
        let stage_pruned: usize = self.masks.stages.iter().map(|s| s.pai.len() - s.pai.count_ones()).sum();
        self.parameter_count() - stem_pruned - stage_pruned
    }
}

fn zero_unset<F: Scalar>(w: &mut ArrayD<F>, bits: &[bool]) {
    for (v, &b) in w.as_slice_mut().expect("standard layout").iter_mut().zip(bits) {
        if !b {
            *v = F::zero();
        }
    }
}

impl<F: Scalar> Network<F> for MultiExitModel<F> {
    type Trace = ForwardTrace<F>;

    fn num_exits(&self) -> usize {
        self.heads.len()
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn forward(&mut self, x: &Array4<F>, mode: Mode) -> Result<(Vec<Array2<F>>, Self::Trace)> {
        self.trace(x, mode)
    }

    fn backward(&mut self, trace: Self::Trace, dlogits: &[Array2<F>]) -> Result<()> {
        if trace.mode != Mode::Train {
            return Err(Error::InvalidConfig("backward needs a train-mode forward".into()));
        }
        if dlogits.len() != self.heads.len() {
            return Err(Error::shape("logit gradients", &[self.heads.len()], &[dlogits.len()]));
        }
        let n = self.dag.len();
        let mut grads: Vec<Option<Array4<F>>> = (0..n).map(|_| None).collect();
        let add = |slot: &mut Option<Array4<F>>, d: Array4<F>| match slot {
            Some(acc) => *acc += &d,
            None => *slot = Some(d),
        };
        for (j, (head, cache)) in self.heads.iter_mut().zip(&trace.heads).enumerate() {
            let d = head_backward(head, cache, &dlogits[j]);
            add(&mut grads[self.dag.exit_heads[j]], d);
        }
        let mut d_stem: Option<Array4<F>> = None;
        let ForwardTrace {
            node_outputs,
            stem_weight,
            stem,
            weights,
            nodes,
            ..
        } = trace;
        drop(node_outputs);
        for (id, cache) in nodes.into_iter().enumerate().rev() {
            let node = &self.dag.nodes[id];
            let d = grads[id].take().expect("every node reaches an exit");
            let (dx, wg) = stage_backward(
                &self.arch.stages[node.stage],
                &weights[node.stage][node.group],
                &mut self.nodes[id],
                cache.expect("train cache"),
                d,
            );
            let bits = self.masks.group_mask(node.stage, node.group).bits();
            let mut off = 0;
            for (p, g) in self.stages[node.stage].iter_mut().zip(&wg) {
                let len = p.numel();
                masked_accumulate(&mut p.grad, g, &bits[off..off + len]);
                off += len;
            }
            match node.lineage {
                Some(parent) => add(&mut grads[parent], dx),
                None => add(&mut d_stem, dx),
            }
        }
        if let (Some(s), Some(cache), Some(w), Some(d)) = (&mut self.stem, stem, stem_weight, d_stem) {
            let g = stem_backward(s, &w, cache, d);
            let bits = self.masks.stem_pai.as_ref().expect("stem mask").bits();
            masked_accumulate(&mut s.conv.grad, &g, bits);
        }
        Ok(())
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        if let Some(stem) = &mut self.stem {
            f("stem.conv", &mut stem.conv);
            visit_bn_params("stem.bn", &mut stem.bn, f);
        }
        for (s, ws) in self.stages.iter_mut().enumerate() {
            for (t, p) in ws.iter_mut().enumerate() {
                f(&format!("stage{s}.w{t}"), p);
            }
        }
        for (id, l) in self.nodes.iter_mut().enumerate() {
            l.visit_params(&format!("node{id}"), f);
        }
        for (j, h) in self.heads.iter_mut().enumerate() {
            f(&format!("head{j}.weight"), &mut h.weight);
            f(&format!("head{j}.bias"), &mut h.bias);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Array1<F>)) {
        if let Some(stem) = &mut self.stem {
            visit_bn_buffers("stem.bn", &mut stem.bn, f);
        }
        for (id, l) in self.nodes.iter_mut().enumerate() {
            l.visit_buffers(&format!("node{id}"), f);
        }
    }

    fn after_step(&mut self) {
        self.enforce_masks();
    }
}
