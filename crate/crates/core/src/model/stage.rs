//! Forward/backward kernels for the stem, one stage and one head, shared by
//! the dense backbone and the multi-exit model.

use ndarray::{Array2, Array4, ArrayD, ArrayViewMut4, Ix2, Ix4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{BlockSpec, StageSpec};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, BnCache,
    Linear, Mode, Param,
};
use crate::scalar::Scalar;

/// 1x1 projection shortcut with its own normalization.
#[derive(Clone, Debug)]
pub struct Shortcut<F> {
    pub conv: Param<F>,
    pub bn: BatchNorm<F>,
}

/// Per-block state that is not grouped: normalization layers and projection
/// shortcuts. The multi-exit model keeps one copy per DAG node.
#[derive(Clone, Debug)]
pub enum BlockLocal<F> {
    Residual {
        bn1: BatchNorm<F>,
        bn2: BatchNorm<F>,
        shortcut: Option<Shortcut<F>>,
    },
    Dense,
}

#[derive(Clone, Debug)]
pub struct StageLocal<F> {
    pub blocks: Vec<BlockLocal<F>>,
}

#[derive(Clone, Debug)]
pub struct Stem<F> {
    pub conv: Param<F>,
    pub bn: BatchNorm<F>,
}

pub(crate) fn kaiming_conv<F: Scalar, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Param<F> {
    let fan_out = (shape[0] * shape[2] * shape[3]) as f64;
    kaiming(&shape, fan_out, rng)
}

pub(crate) fn kaiming<F: Scalar, R: Rng + ?Sized>(shape: &[usize], fan: f64, rng: &mut R) -> Param<F> {
    let normal = Normal::new(0.0, (2.0 / fan).sqrt()).expect("positive std");
    let n: usize = shape.iter().product();
    let v: Vec<F> = (0..n).map(|_| F::from_f64_lossy(normal.sample(rng))).collect();
    Param::new(ArrayD::from_shape_vec(shape.to_vec(), v).expect("shape matches length"))
}

impl<F: Scalar> StageLocal<F> {
    pub(crate) fn init<R: Rng + ?Sized>(spec: &StageSpec, rng: &mut R) -> Self {
        let blocks = spec
            .blocks
            .iter()
            .map(|b| match *b {
                BlockSpec::Residual { in_channels, out_channels, .. } => BlockLocal::Residual {
                    bn1: BatchNorm::new(out_channels),
                    bn2: BatchNorm::new(out_channels),
                    shortcut: b.has_projection().then(|| Shortcut {
                        conv: kaiming_conv([out_channels, in_channels, 1, 1], rng),
                        bn: BatchNorm::new(out_channels),
                    }),
                },
                BlockSpec::Dense { .. } => BlockLocal::Dense,
            })
            .collect();
        StageLocal { blocks }
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let BlockLocal::Residual { bn1, bn2, shortcut } = b {
                visit_bn_params(&format!("{prefix}.b{i}.bn1"), bn1, f);
                visit_bn_params(&format!("{prefix}.b{i}.bn2"), bn2, f);
                if let Some(sc) = shortcut {
                    f(&format!("{prefix}.b{i}.shortcut.conv"), &mut sc.conv);
                    visit_bn_params(&format!("{prefix}.b{i}.shortcut.bn"), &mut sc.bn, f);
                }
            }
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::Array1<F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let BlockLocal::Residual { bn1, bn2, shortcut } = b {
                visit_bn_buffers(&format!("{prefix}.b{i}.bn1"), bn1, f);
                visit_bn_buffers(&format!("{prefix}.b{i}.bn2"), bn2, f);
                if let Some(sc) = shortcut {
                    visit_bn_buffers(&format!("{prefix}.b{i}.shortcut.bn"), &mut sc.bn, f);
                }
            }
        }
    }
}

pub(crate) fn visit_bn_params<F: Scalar>(prefix: &str, bn: &mut BatchNorm<F>, f: &mut dyn FnMut(&str, &mut Param<F>)) {
    f(&format!("{prefix}.gamma"), &mut bn.gamma);
    f(&format!("{prefix}.beta"), &mut bn.beta);
}

pub(crate) fn visit_bn_buffers<F: Scalar>(
    prefix: &str,
    bn: &mut BatchNorm<F>,
    f: &mut dyn FnMut(&str, &mut ndarray::Array1<F>),
) {
    f(&format!("{prefix}.running_mean"), &mut bn.running_mean);
    f(&format!("{prefix}.running_var"), &mut bn.running_var);
}

fn bn_forward<F: Scalar>(bn: &mut BatchNorm<F>, x: &Array4<F>, mode: Mode) -> (Array4<F>, Option<BnCache<F>>) {
    match mode {
        Mode::Train => {
            let (y, c) = bn.forward_train(x);
            (y, Some(c))
        }
        Mode::Eval => (bn.forward_eval(x), None),
    }
}

fn view4<F: Scalar>(w: &ArrayD<F>) -> ndarray::ArrayView4<'_, F> {
    w.view().into_dimensionality::<Ix4>().expect("4-d weight")
}

fn view_mut4<F: Scalar>(w: &mut ArrayD<F>) -> ArrayViewMut4<'_, F> {
    w.view_mut().into_dimensionality::<Ix4>().expect("4-d weight")
}

#[derive(Debug)]
pub(crate) enum BlockCache<F> {
    Residual {
        x: Array4<F>,
        bn1: BnCache<F>,
        r1: Array4<F>,
        bn2: BnCache<F>,
        sc: Option<BnCache<F>>,
        y: Array4<F>,
    },
    Dense {
        x_shape: (usize, usize, usize, usize),
        x2: Array2<F>,
        y: Array4<F>,
    },
}

#[derive(Debug)]
pub(crate) struct StageCache<F> {
    blocks: Vec<BlockCache<F>>,
}

/// Runs one stage with the given (already masked) groupable weights, in the
/// order of [`StageSpec::groupable_shapes`].
pub(crate) fn stage_forward<F: Scalar>(
    spec: &StageSpec,
    weights: &[ArrayD<F>],
    local: &mut StageLocal<F>,
    x: Array4<F>,
    mode: Mode,
) -> (Array4<F>, Option<StageCache<F>>) {
    let mut x = x;
    let mut caches = Vec::with_capacity(spec.blocks.len());
    let mut wi = 0;
    for (block, lb) in spec.blocks.iter().zip(local.blocks.iter_mut()) {
        match (block, lb) {
            (BlockSpec::Residual { stride, .. }, BlockLocal::Residual { bn1, bn2, shortcut }) => {
                let (w1, w2) = (view4(&weights[wi]), view4(&weights[wi + 1]));
                wi += 2;
                let h1 = conv2d(&x, w1, *stride, 1);
                let (mut r1, c1) = bn_forward(bn1, &h1, mode);
                drop(h1);
                relu(&mut r1);
                let h2 = conv2d(&r1, w2, 1, 1);
                let (mut out, c2) = bn_forward(bn2, &h2, mode);
                drop(h2);
                let csc = match shortcut {
                    Some(sc) => {
                        let s = conv2d(&x, view4(&sc.conv.value), *stride, 0);
                        let (s, c) = bn_forward(&mut sc.bn, &s, mode);
                        out += &s;
                        c
                    }
                    None => {
                        out += &x;
                        None
                    }
                };
                relu(&mut out);
                if mode == Mode::Train {
                    caches.push(BlockCache::Residual {
                        x,
                        bn1: c1.expect("train cache"),
                        r1,
                        bn2: c2.expect("train cache"),
                        sc: csc,
                        y: out.clone(),
                    });
                }
                x = out;
            }
            (BlockSpec::Dense { out_features, relu: act, .. }, BlockLocal::Dense) => {
                let w = weights[wi].view().into_dimensionality::<Ix2>().expect("2-d weight");
                wi += 1;
                let shape = x.dim();
                let x2 = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((shape.0, shape.1 * shape.2 * shape.3))
                    .expect("flatten");
                let y2 = x2.dot(&w.t());
                let mut y = y2.into_shape_with_order((shape.0, *out_features, 1, 1)).expect("unflatten");
                if *act {
                    relu(&mut y);
                }
                if mode == Mode::Train {
                    caches.push(BlockCache::Dense {
                        x_shape: shape,
                        x2,
                        y: y.clone(),
                    });
                }
                x = y;
            }
            _ => unreachable!("block local state does not match its spec"),
        }
    }
    let cache = (mode == Mode::Train).then_some(StageCache { blocks: caches });
    (x, cache)
}

/// Backward through one stage. Returns the input gradient and the gradients
/// of the groupable weights (unmasked; the caller applies the mask).
pub(crate) fn stage_backward<F: Scalar>(
    spec: &StageSpec,
    weights: &[ArrayD<F>],
    local: &mut StageLocal<F>,
    cache: StageCache<F>,
    dy: Array4<F>,
) -> (Array4<F>, Vec<ArrayD<F>>) {
    let mut grads: Vec<ArrayD<F>> = weights.iter().map(|w| ArrayD::zeros(w.raw_dim())).collect();
    let mut d = dy;
    let mut wi = weights.len();
    for ((block, lb), bc) in spec
        .blocks
        .iter()
        .zip(local.blocks.iter_mut())
        .zip(cache.blocks)
        .rev()
    {
        match (block, lb, bc) {
            (
                BlockSpec::Residual { stride, .. },
                BlockLocal::Residual { bn1, bn2, shortcut },
                BlockCache::Residual { x, bn1: c1, r1, bn2: c2, sc, y },
            ) => {
                wi -= 2;
                relu_backward(&mut d, &y);
                drop(y);
                let dh2 = bn2.backward(&c2, &d);
                let (g1, g2) = grads.split_at_mut(wi + 1);
                let mut dr1 = conv2d_backward(&r1, view4(&weights[wi + 1]), &dh2, 1, 1, view_mut4(&mut g2[0]));
                drop(dh2);
                relu_backward(&mut dr1, &r1);
                let dh1 = bn1.backward(&c1, &dr1);
                drop(dr1);
                let mut dx = conv2d_backward(&x, view4(&weights[wi]), &dh1, *stride, 1, view_mut4(&mut g1[wi]));
                match (shortcut, sc) {
                    (Some(s), Some(csc)) => {
                        let ds = s.bn.backward(&csc, &d);
                        dx += &conv2d_backward(&x, view4(&s.conv.value), &ds, *stride, 0, view_mut4(&mut s.conv.grad));
                    }
                    _ => dx += &d,
                }
                d = dx;
            }
            (
                BlockSpec::Dense { relu: act, .. },
                BlockLocal::Dense,
                BlockCache::Dense { x_shape, x2, y },
            ) => {
                wi -= 1;
                if *act {
                    relu_backward(&mut d, &y);
                }
                let (b, o) = (d.dim().0, d.dim().1);
                let d2 = d.into_shape_with_order((b, o)).expect("flatten");
                let w = weights[wi].view().into_dimensionality::<Ix2>().expect("2-d weight");
                let mut g = grads[wi].view_mut().into_dimensionality::<Ix2>().expect("2-d grad");
                g += &d2.t().dot(&x2);
                let dx2 = d2.dot(&w);
                d = dx2.into_shape_with_order(x_shape).expect("unflatten");
            }
            _ => unreachable!("cache does not match its block"),
        }
    }
    (d, grads)
}

#[derive(Debug)]
pub(crate) struct StemCache<F> {
    x: Array4<F>,
    bn: BnCache<F>,
    y: Array4<F>,
}

pub(crate) fn stem_forward<F: Scalar>(
    stem: &mut Stem<F>,
    weight: &ArrayD<F>,
    x: &Array4<F>,
    mode: Mode,
) -> (Array4<F>, Option<StemCache<F>>) {
    let h = conv2d(x, view4(weight), 1, 1);
    let (mut y, c) = bn_forward(&mut stem.bn, &h, mode);
    relu(&mut y);
    let cache = c.map(|bn| StemCache {
        x: x.clone(),
        bn,
        y: y.clone(),
    });
    (y, cache)
}

/// Returns the gradient of the (masked) stem weight.
pub(crate) fn stem_backward<F: Scalar>(
    stem: &mut Stem<F>,
    weight: &ArrayD<F>,
    cache: StemCache<F>,
    dy: Array4<F>,
) -> ArrayD<F> {
    let mut d = dy;
    relu_backward(&mut d, &cache.y);
    let dh = stem.bn.backward(&cache.bn, &d);
    let mut g = ArrayD::zeros(weight.raw_dim());
    conv2d_backward(&cache.x, view4(weight), &dh, 1, 1, view_mut4(&mut g));
    g
}

#[derive(Debug)]
pub(crate) struct HeadCache<F> {
    pooled: Array2<F>,
    shape: (usize, usize, usize, usize),
}

pub(crate) fn head_forward<F: Scalar>(head: &Linear<F>, x: &Array4<F>) -> (Array2<F>, HeadCache<F>) {
    let pooled = global_avg_pool(x);
    let z = head.forward(&pooled);
    (z, HeadCache { pooled, shape: x.dim() })
}

pub(crate) fn head_backward<F: Scalar>(head: &mut Linear<F>, cache: &HeadCache<F>, dz: &Array2<F>) -> Array4<F> {
    let dp = head.backward(&cache.pooled, dz);
    global_avg_pool_backward(&dp, cache.shape)
}

/// Copies `src` into a new array with entries outside `bits` set to zero.
pub(crate) fn masked_copy<F: Scalar>(src: &ArrayD<F>, bits: &[bool]) -> ArrayD<F> {
    let src = src.as_standard_layout();
    let data: Vec<F> = src
        .as_slice()
        .expect("standard layout")
        .iter()
        .zip(bits)
        .map(|(&v, &b)| if b { v } else { F::zero() })
        .collect();
    ArrayD::from_shape_vec(src.raw_dim(), data).expect("same length")
}

/// `dst += src` on positions set in `bits`.
pub(crate) fn masked_accumulate<F: Scalar>(dst: &mut ArrayD<F>, src: &ArrayD<F>, bits: &[bool]) {
    let dst = dst.as_slice_mut().expect("standard layout");
    let src = src.as_standard_layout();
    for ((d, &s), &b) in dst.iter_mut().zip(src.as_slice().expect("standard layout")).zip(bits) {
        if b {
            *d += s;
        }
    }
}

pub(crate) fn check_input<F: Scalar>(x: &Array4<F>, expected: (usize, usize, usize)) -> Result<()> {
    let (_, c, h, w) = x.dim();
    if (c, h, w) != expected {
        return Err(Error::shape("input", &[expected.0, expected.1, expected.2], &[c, h, w]));
    }
    if x.dim().0 == 0 {
        return Err(Error::Empty("input batch".into()));
    }
    Ok(())
}
