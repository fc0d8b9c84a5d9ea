use ndarray::{Array1, Array4};

use super::param::Param;
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, height, width)`.
#[derive(Clone, Debug)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

#[derive(Clone, Debug)]
pub struct BnCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(&[channels], F::one()),
            beta: Param::filled(&[channels], F::zero()),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let eps = F::from_f64_lossy(BN_EPS);
        let mut y = x.as_standard_layout().into_owned();
        let ys = y.as_slice_mut().unwrap();
        for ch in 0..c {
            let scale = self.gamma.value[ch] / (self.running_var[ch] + eps).sqrt();
            let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
            for bi in 0..b {
                for v in &mut ys[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    /// Normalizes with batch statistics and updates the running estimates
    /// (unbiased variance, momentum 0.1).
    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let (b, c, h, w) = x.dim();
        let hw = h * w;
        let m = b * hw;
        let mf = F::from_usize(m).unwrap();
        let eps = F::from_f64_lossy(BN_EPS);
        let momentum = F::from_f64_lossy(BN_MOMENTUM);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let mut xhat = Array4::<F>::zeros((b, c, h, w));
        let mut y = Array4::<F>::zeros((b, c, h, w));
        let mut inv_std = Array1::<F>::zeros(c);
        {
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for ch in 0..c {
                let chunks = (0..b).map(|bi| (bi * c + ch) * hw);
                let mut sum = F::zero();
                for start in chunks.clone() {
                    for &v in &xs[start..start + hw] {
                        sum += v;
                    }
                }
                let mean = sum / mf;
                let mut sq = F::zero();
                for start in chunks.clone() {
                    for &v in &xs[start..start + hw] {
                        let d = v - mean;
                        sq += d * d;
                    }
                }
                let var = sq / mf;
                let istd = F::one() / (var + eps).sqrt();
                inv_std[ch] = istd;
                let (gamma, beta) = (self.gamma.value[ch], self.beta.value[ch]);
                for start in chunks {
                    for i in start..start + hw {
                        let n = (xs[i] - mean) * istd;
                        xh[i] = n;
                        ys[i] = gamma * n + beta;
                    }
                }
                let unbiased = if m > 1 { sq / F::from_usize(m - 1).unwrap() } else { var };
                self.running_mean[ch] = (F::one() - momentum) * self.running_mean[ch] + momentum * mean;
                self.running_var[ch] = (F::one() - momentum) * self.running_var[ch] + momentum * unbiased;
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (b, c, h, w) = dy.dim();
        let hw = h * w;
        let mf = F::from_usize(b * hw).unwrap();
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let mut dx = Array4::<F>::zeros((b, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        for ch in 0..c {
            let chunks = (0..b).map(|bi| (bi * c + ch) * hw);
            let (mut dgamma, mut dbeta) = (F::zero(), F::zero());
            for start in chunks.clone() {
                for i in start..start + hw {
                    dgamma += dys[i] * xh[i];
                    dbeta += dys[i];
                }
            }
            self.gamma.grad[ch] += dgamma;
            self.beta.grad[ch] += dbeta;
            let k = self.gamma.value[ch] * cache.inv_std[ch] / mf;
            for start in chunks {
                for i in start..start + hw {
                    dxs[i] = k * (mf * dys[i] - dbeta - xh[i] * dgamma);
                }
            }
        }
        dx
    }
}
