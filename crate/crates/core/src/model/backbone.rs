use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, BackboneConfig, BlockSpec};
use super::stage::{
    check_input, head_backward, head_forward, kaiming, kaiming_conv, stage_backward, stage_forward, stem_backward,
    stem_forward, visit_bn_buffers, visit_bn_params, HeadCache, StageCache, StageLocal, Stem, StemCache,
};
use super::Network;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Linear, Mode, Param};
use crate::scalar::Scalar;

/// Dense single-exit network with explicit stage boundaries.
#[derive(Clone, Debug)]
pub struct StagedBackbone<F> {
    pub config: BackboneConfig,
    pub arch: Architecture,
    pub stem: Option<Stem<F>>,
    /// Groupable weights of each stage, in [`super::StageSpec::groupable_shapes`] order.
    pub stages: Vec<Vec<Param<F>>>,
    pub locals: Vec<StageLocal<F>>,
    pub head: Linear<F>,
}

#[derive(Debug)]
pub struct BackboneTrace<F> {
    stem: Option<StemCache<F>>,
    stages: Vec<Option<StageCache<F>>>,
    head: HeadCache<F>,
    mode: Mode,
}

impl<F: Scalar> StagedBackbone<F> {
    /// Kaiming-normal (fan-out) convolutions, Kaiming-normal (fan-in) dense
    /// layers, unit/zero normalization, uniform head.
    pub fn new(config: &BackboneConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::from_config(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = arch.stem_shape().map(|shape| Stem {
            conv: kaiming_conv(shape, &mut rng),
            bn: BatchNorm::new(shape[0]),
        });
        let mut stages = Vec::with_capacity(arch.num_stages());
        let mut locals = Vec::with_capacity(arch.num_stages());
        for spec in &arch.stages {
            let mut ws = Vec::new();
            for block in &spec.blocks {
                for shape in block.groupable_shapes() {
                    ws.push(match block {
                        BlockSpec::Residual { .. } => kaiming_conv([shape[0], shape[1], shape[2], shape[3]], &mut rng),
                        BlockSpec::Dense { .. } => kaiming(&shape, shape[1] as f64, &mut rng),
                    });
                }
            }
            stages.push(ws);
            locals.push(StageLocal::init(spec, &mut rng));
        }
        let head = Linear::init(arch.feature_dim, arch.num_classes, &mut rng);
        Ok(StagedBackbone {
            config: config.clone(),
            arch,
            stem,
            stages,
            locals,
            head,
        })
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.numel());
        n
    }

    /// Flattened groupable weights of one stage.
    pub fn stage_flat(&self, stage: usize) -> Vec<F> {
        self.stages[stage]
            .iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    pub(crate) fn effective_stage(&self, stage: usize) -> Vec<ArrayD<F>> {
        self.stages[stage].iter().map(|p| p.value.clone()).collect()
    }
}

impl<F: Scalar> Network<F> for StagedBackbone<F> {
    type Trace = BackboneTrace<F>;

    fn num_exits(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn forward(&mut self, x: &Array4<F>, mode: Mode) -> Result<(Vec<Array2<F>>, Self::Trace)> {
        check_input(x, self.arch.in_shape)?;
        let (mut h, stem_cache) = match &mut self.stem {
            Some(stem) => {
                let w = stem.conv.value.clone();
                stem_forward(stem, &w, x, mode)
            }
            None => (x.clone(), None),
        };
        let mut caches = Vec::with_capacity(self.stages.len());
        for s in 0..self.stages.len() {
            let w = self.effective_stage(s);
            let (y, c) = stage_forward(&self.arch.stages[s], &w, &mut self.locals[s], h, mode);
            caches.push(c);
            h = y;
        }
        let (z, head) = head_forward(&self.head, &h);
        Ok((
            vec![z],
            BackboneTrace {
                stem: stem_cache,
                stages: caches,
                head,
                mode,
            },
        ))
    }

    fn backward(&mut self, trace: Self::Trace, dlogits: &[Array2<F>]) -> Result<()> {
        if trace.mode != Mode::Train {
            return Err(Error::InvalidConfig("backward needs a train-mode forward".into()));
        }
        if dlogits.len() != 1 {
            return Err(Error::shape("logit gradients", &[1], &[dlogits.len()]));
        }
        let mut d = head_backward(&mut self.head, &trace.head, &dlogits[0]);
        for (s, cache) in trace.stages.into_iter().enumerate().rev() {
            let w = self.effective_stage(s);
            let (dx, grads) = stage_backward(&self.arch.stages[s], &w, &mut self.locals[s], cache.expect("train cache"), d);
            for (p, g) in self.stages[s].iter_mut().zip(grads) {
                p.grad += &g;
            }
            d = dx;
        }
        if let (Some(stem), Some(cache)) = (&mut self.stem, trace.stem) {
            let w = stem.conv.value.clone();
            let g = stem_backward(stem, &w, cache, d);
            stem.conv.grad += &g;
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
        for (s, l) in self.locals.iter_mut().enumerate() {
            l.visit_params(&format!("stage{s}.local"), f);
        }
        f("head0.weight", &mut self.head.weight);
        f("head0.bias", &mut self.head.bias);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Array1<F>)) {
        if let Some(stem) = &mut self.stem {
            visit_bn_buffers("stem.bn", &mut stem.bn, f);
        }
        for (s, l) in self.locals.iter_mut().enumerate() {
            l.visit_buffers(&format!("stage{s}.local"), f);
        }
    }
}
