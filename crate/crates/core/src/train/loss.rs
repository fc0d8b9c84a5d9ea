use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Distillation weight.
    pub alpha: f64,
    /// Softening temperature of the distillation term.
    pub temperature: f64,
    /// Apply the temperature to the cross-entropy term as well.
    pub ce_uses_temperature: bool,
    /// Scale the distillation term by `T^2`.
    pub kl_t_squared: bool,
    /// Stop gradients through the ensemble teacher.
    pub detach_teacher: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            temperature: 3.0,
            ce_uses_temperature: false,
            kl_t_squared: false,
            detach_teacher: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        check_temperature(self.temperature)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {t}")));
    }
    Ok(())
}

/// Row-wise `log_softmax(z / t)`.
pub fn log_softmax(z: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut out = z.mapv(|v| v / t);
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise `softmax(z / t)`.
pub fn softmax(z: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut out = z.mapv(|v| v / t);
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean of the exit logits, computed as `z_1 + mean(z_i - z_1)` so that
/// identical exits give back `z_1` bit for bit.
pub fn ensemble_logits<F: Scalar>(exits: &[Array2<F>]) -> Result<Array2<F>> {
    let first = exits.first().ok_or_else(|| Error::Empty("no exit logits".into()))?;
    for z in exits {
        if z.dim() != first.dim() {
            return Err(Error::shape(
                "exit logits",
                &[first.nrows(), first.ncols()],
                &[z.nrows(), z.ncols()],
            ));
        }
    }
    let n = F::from_usize(exits.len()).expect("exit count");
    let mut acc = Array2::<F>::zeros(first.dim());
    for z in &exits[1..] {
        acc += &(z - first);
    }
    Ok(first + &acc.mapv(|v| v / n))
}

/// `softmax(z_E / T)`: the soft targets shared by all exits.
pub fn teacher_signal(z_e: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    check_temperature(temperature)?;
    Ok(softmax(z_e, temperature))
}

/// Batch-mean loss terms per exit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: Vec<f64>,
    /// Distillation term of each exit before the `alpha` (and optional `T^2`) factor.
    pub kl: Vec<f64>,
}

impl LossBreakdown {
    pub fn ce_sum(&self) -> f64 {
        self.ce.iter().sum()
    }

    pub fn kl_sum(&self) -> f64 {
        self.kl.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<F> {
    pub breakdown: LossBreakdown,
    /// Gradient of `total` with respect to each exit's logits.
    pub grads: Vec<Array2<F>>,
}

/// `mean_b Σ_i [CE(softmax(z_i), y) + α·KL(q_i ‖ q_E)]` with
/// `q = softmax(z / T)` and its gradients with respect to every `z_i`.
pub fn nfe_loss<F: Scalar>(exits: &[Array2<F>], labels: &[usize], cfg: &LossConfig) -> Result<LossOutput<F>> {
    cfg.validate()?;
    let z_e = ensemble_logits(exits)?;
    let (b, c) = z_e.dim();
    if labels.len() != b {
        return Err(Error::shape("labels", &[b], &[labels.len()]));
    }
    if b == 0 {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidLabel { label, classes: c });
    }
    let n = exits.len();
    let bf = b as f64;
    let t = cfg.temperature;
    let t_ce = if cfg.ce_uses_temperature { t } else { 1.0 };
    let scale = if cfg.kl_t_squared { t * t } else { 1.0 };

    let to64 = |z: &Array2<F>| z.mapv(|v| v.as_f64());
    let ls_e = log_softmax(&to64(&z_e), t);
    let q_e = ls_e.mapv(f64::exp);

    let mut breakdown = LossBreakdown {
        total: 0.0,
        ce: Vec::with_capacity(n),
        kl: Vec::with_capacity(n),
    };
    let mut grads: Vec<Array2<f64>> = Vec::with_capacity(n);
    // Σ_i (q_E - q_i) per sample, weighted later; only needed without detachment
    let mut teacher_acc = Array2::<f64>::zeros((b, c));

    for z in exits {
        let z = to64(z);
        let ls_ce = log_softmax(&z, t_ce);
        let mut g = ls_ce.mapv(f64::exp);
        let mut ce = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            ce -= ls_ce[[r, y]];
            g[[r, y]] -= 1.0;
        }
        g.mapv_inplace(|v| v / (t_ce * bf));

        let ls_i = log_softmax(&z, t);
        let q_i = ls_i.mapv(f64::exp);
        let mut kl = 0.0;
        if cfg.alpha != 0.0 || !cfg.detach_teacher {
            for r in 0..b {
                let diff: Vec<f64> = (0..c).map(|k| ls_i[[r, k]] - ls_e[[r, k]]).collect();
                let kl_r: f64 = (0..c).map(|k| q_i[[r, k]] * diff[k]).sum();
                kl += kl_r;
                let w = cfg.alpha * scale / (t * bf);
                for k in 0..c {
                    g[[r, k]] += w * q_i[[r, k]] * (diff[k] - kl_r);
                }
            }
            if !cfg.detach_teacher {
                teacher_acc += &(&q_e - &q_i);
            }
        } else {
            // alpha = 0 with a detached teacher: the term is still reported
            for r in 0..b {
                kl += (0..c).map(|k| q_i[[r, k]] * (ls_i[[r, k]] - ls_e[[r, k]])).sum::<f64>();
            }
        }
        breakdown.ce.push(ce / bf);
        breakdown.kl.push(kl / bf);
        grads.push(g);
    }
    if !cfg.detach_teacher && cfg.alpha != 0.0 {
        let w = cfg.alpha * scale / (n as f64 * t * bf);
        let extra = teacher_acc.mapv(|v| v * w);
        for g in &mut grads {
            *g += &extra;
        }
    }
    breakdown.total = breakdown.ce_sum() + cfg.alpha * scale * breakdown.kl_sum();
    Ok(LossOutput {
        breakdown,
        grads: grads.into_iter().map(|g| g.mapv(F::from_f64_lossy)).collect(),
    })
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(z: &Array2<f64>) -> Vec<usize> {
    z.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ensemble_examples() {
        let z = ensemble_logits(&[array![[1.0, 3.0]], array![[3.0, 1.0]]]).unwrap();
        assert_eq!(z, array![[2.0, 2.0]]);
        let one = array![[0.3, -1.7, 2.2]];
        assert_eq!(ensemble_logits(&[one.clone()]).unwrap(), one);
        assert!(ensemble_logits(&[array![[1.0]], array![[1.0, 2.0]]]).is_err());
        assert!(ensemble_logits::<f64>(&[]).is_err());
    }

    #[test]
    fn teacher_examples() {
        let q = teacher_signal(&array![[2.0, 2.0]], 7.0).unwrap();
        assert_eq!(q, array![[0.5, 0.5]]);
        let t = 3.0;
        let q = teacher_signal(&array![[0.0, 3f64.ln() * t]], t).unwrap();
        assert!((q[[0, 0]] - 0.25).abs() < 1e-12 && (q[[0, 1]] - 0.75).abs() < 1e-12);
        let q = teacher_signal(&array![[0.0, 50.0, -20.0]], 1e6).unwrap();
        assert!(q.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-3));
        assert!(teacher_signal(&array![[0.0]], 0.0).is_err());
    }

    #[test]
    fn invalid_inputs() {
        let z = vec![array![[0.0, 1.0]]];
        assert!(matches!(
            nfe_loss(&z, &[2], &LossConfig::default()),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
        let cfg = LossConfig {
            alpha: -1.0,
            ..LossConfig::default()
        };
        assert!(nfe_loss(&z, &[0], &cfg).is_err());
    }
}
