//! Pruning-at-initialization masks: SNIP saliency ranking and ERK random
//! topologies. Both keep exactly `ceil((1 - S) * P)` of the `P` prunable
//! weights; excluded layers stay dense.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fission::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaiMethod {
    Snip,
    Erk,
    #[default]
    None,
}

impl std::str::FromStr for PaiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snip" => Ok(PaiMethod::Snip),
            "erk" => Ok(PaiMethod::Erk),
            "none" => Ok(PaiMethod::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown pruning method `{other}` (expected snip, erk or none)"
            ))),
        }
    }
}

impl std::fmt::Display for PaiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PaiMethod::Snip => "snip",
            PaiMethod::Erk => "erk",
            PaiMethod::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaiConfig {
    pub method: PaiMethod,
    pub sparsity: f64,
    pub saliency_batches: usize,
}

impl Default for PaiConfig {
    fn default() -> Self {
        PaiConfig {
            method: PaiMethod::None,
            sparsity: 0.0,
            saliency_batches: 1,
        }
    }
}

impl PaiConfig {
    pub fn validate(&self) -> Result<()> {
        check_sparsity(self.sparsity)?;
        if self.saliency_batches == 0 {
            return Err(Error::InvalidConfig("saliency_batches must be at least 1".into()));
        }
        if self.method == PaiMethod::None && self.sparsity > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sparsity {} requested without a pruning method",
                self.sparsity
            )));
        }
        Ok(())
    }
}

/// Pruning masks for the stem and for each stage's groupable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PaiMasks {
    pub stem: Option<Mask>,
    pub stages: Vec<Mask>,
    pub sparsity: f64,
}

/// A prunable weight tensor with its gradient at initialization.
#[derive(Clone, Copy, Debug)]
pub struct SaliencyLayer<'a> {
    pub name: &'a str,
    pub weights: &'a [f64],
    pub grads: &'a [f64],
}

/// A prunable weight tensor described by its shape
/// (`[out, in, kernel...]` or `[out, in]`).
#[derive(Clone, Debug)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        LayerShape {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidSparsity(sparsity));
    }
    Ok(())
}

/// Number of weights kept out of `total` at sparsity `S`: `ceil((1 - S) * total)`.
///
/// A 1e-9 slack absorbs the representation error of decimal sparsities
/// (e.g. `1 - 0.7` is slightly above 0.3).
pub fn keep_count(sparsity: f64, total: usize) -> usize {
    let exact = (1.0 - sparsity) * total as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Global SNIP ranking by `|w * dL/dw|` over non-excluded layers.
///
/// Ties are broken by larger `|w|` first, then by lower flat index
/// (layers concatenated in the given order).
pub fn snip_mask(
    layers: &[SaliencyLayer<'_>],
    sparsity: f64,
    exclude: &HashSet<String>,
) -> Result<Vec<Mask>> {
    check_sparsity(sparsity)?;
    if layers.is_empty() {
        return Err(Error::Empty("no gradients for saliency scoring".into()));
    }
    for l in layers {
        if l.weights.len() != l.grads.len() {
            return Err(Error::shape(
                &format!("saliency layer `{}`", l.name),
                &[l.weights.len()],
                &[l.grads.len()],
            ));
        }
    }

    // (saliency, |w|, flat index, layer, offset)
    let mut scored: Vec<(f64, f64, usize, usize, usize)> = Vec::new();
    let mut flat = 0usize;
    for (li, l) in layers.iter().enumerate() {
        if !exclude.contains(l.name) {
            for (off, (&w, &g)) in l.weights.iter().zip(l.grads).enumerate() {
                let s = (w * g).abs();
                let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
                scored.push((s, w.abs(), flat + off, li, off));
            }
        }
        flat += l.weights.len();
    }
    if scored.is_empty() {
        return Err(Error::Empty("every layer is excluded from pruning".into()));
    }

    let keep = keep_count(sparsity, scored.len());
    let order = |a: &(f64, f64, usize, usize, usize), b: &(f64, f64, usize, usize, usize)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.cmp(&b.2))
    };
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep, order);
    }

    let mut bits: Vec<Vec<bool>> = layers
        .iter()
        .map(|l| vec![exclude.contains(l.name); l.weights.len()])
        .collect();
    for &(_, _, _, li, off) in &scored[..keep] {
        bits[li][off] = true;
    }
    Ok(bits.into_iter().map(Mask::from_bits).collect())
}

/// Erdős–Rényi-Kernel score of one layer:
/// `(fan_in + fan_out + kernel_area) / (fan_in * fan_out * kernel_area)`.
fn erk_score(shape: &[usize]) -> f64 {
    let (fan_out, fan_in) = (shape[0] as f64, shape.get(1).copied().unwrap_or(1) as f64);
    let area = shape.iter().skip(2).product::<usize>() as f64;
    (fan_in + fan_out + area) / (fan_in * fan_out * area)
}

/// Per-layer ERK densities meeting the global budget `(1 - S) * P`; layers
/// whose density would exceed one are made dense and the rest rescaled.
pub fn erk_densities(layers: &[LayerShape], sparsity: f64, exclude: &HashSet<String>) -> Result<Vec<f64>> {
    check_sparsity(sparsity)?;
    if layers.iter().any(|l| l.shape.is_empty() || l.numel() == 0) {
        return Err(Error::InvalidConfig("ERK layers need non-empty shapes".into()));
    }
    let prunable: Vec<usize> = (0..layers.len())
        .filter(|&i| !exclude.contains(&layers[i].name))
        .collect();
    let total: usize = prunable.iter().map(|&i| layers[i].numel()).sum();
    let target = (1.0 - sparsity) * total as f64;

    let mut dense: HashSet<usize> = HashSet::new();
    let mut eps;
    loop {
        let dense_params: f64 = dense.iter().map(|&i| layers[i].numel() as f64).sum();
        let divisor: f64 = prunable
            .iter()
            .filter(|i| !dense.contains(i))
            .map(|&i| erk_score(&layers[i].shape) * layers[i].numel() as f64)
            .sum();
        let rhs = target - dense_params;
        if rhs < -1e-9 {
            return Err(Error::BudgetInfeasible(format!(
                "dense layers alone exceed the budget of {target:.1} weights"
            )));
        }
        if divisor == 0.0 {
            eps = 0.0;
            break;
        }
        eps = rhs / divisor;
        let saturated: Vec<usize> = prunable
            .iter()
            .copied()
            .filter(|i| !dense.contains(i) && eps * erk_score(&layers[*i].shape) > 1.0)
            .collect();
        if saturated.is_empty() {
            break;
        }
        dense.extend(saturated);
    }

    Ok(layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if exclude.contains(&l.name) || dense.contains(&i) {
                1.0
            } else {
                eps * erk_score(&l.shape)
            }
        })
        .collect())
}

/// ERK masks: per-layer counts from [`erk_densities`] rounded by largest
/// remainder to hit the exact global budget, positions uniform per layer.
pub fn erk_mask<R: Rng + ?Sized>(
    layers: &[LayerShape],
    sparsity: f64,
    exclude: &HashSet<String>,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    let densities = erk_densities(layers, sparsity, exclude)?;
    let prunable: Vec<usize> = (0..layers.len())
        .filter(|&i| !exclude.contains(&layers[i].name))
        .collect();
    let total: usize = prunable.iter().map(|&i| layers[i].numel()).sum();
    let target = keep_count(sparsity, total);

    let mut counts: Vec<usize> = vec![0; layers.len()];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for &i in &prunable {
        let real = densities[i] * layers[i].numel() as f64;
        counts[i] = (real.floor() as usize).min(layers[i].numel());
        remainders.push((real - counts[i] as f64, i));
    }
    let assigned: usize = prunable.iter().map(|&i| counts[i]).sum();
    let mut missing = target.checked_sub(assigned).ok_or_else(|| {
        Error::BudgetInfeasible(format!("rounded counts {assigned} exceed target {target}"))
    })?;
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if missing == 0 {
            break;
        }
        if counts[i] < layers[i].numel() {
            counts[i] += 1;
            missing -= 1;
        }
    }
    if missing > 0 {
        return Err(Error::BudgetInfeasible(format!(
            "{missing} weights could not be placed after redistribution"
        )));
    }

    Ok(layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let n = l.numel();
            if exclude.contains(&l.name) {
                return Mask::ones(n);
            }
            let mut bits = vec![false; n];
            for pos in rand::seq::index::sample(rng, n, counts[i]) {
                bits[pos] = true;
            }
            Mask::from_bits(bits)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn none() -> HashSet<String> {
        HashSet::new()
    }

    #[test]
    fn snip_top_half() {
        let w = [1.0, 1.0, 1.0, 1.0];
        let g = [3.0, 1.0, 2.0, 4.0];
        let layers = [SaliencyLayer { name: "a", weights: &w, grads: &g }];
        let m = snip_mask(&layers, 0.5, &none()).unwrap();
        assert_eq!(m[0].to_u8(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn snip_zero_gradient_tie_break() {
        let w = [0.5, -2.0, 0.5, 1.0, -0.5];
        let g = [0.0; 5];
        let layers = [SaliencyLayer { name: "a", weights: &w, grads: &g }];
        let m = snip_mask(&layers, 0.4, &none()).unwrap();
        // keep 3: |w| = 2.0, 1.0, then the lowest index among the 0.5 ties
        assert_eq!(m[0].to_u8(), vec![1, 1, 0, 1, 0]);
    }

    #[test]
    fn snip_errors() {
        let w = [1.0];
        let layers = [SaliencyLayer { name: "a", weights: &w, grads: &w }];
        assert!(snip_mask(&layers, 1.0, &none()).is_err());
        assert!(snip_mask(&[], 0.5, &none()).is_err());
        let bad = [SaliencyLayer { name: "a", weights: &w, grads: &[] }];
        assert!(snip_mask(&bad, 0.5, &none()).is_err());
    }

    #[test]
    fn snip_excluded_layers_stay_dense() {
        let w = [1.0; 6];
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let layers = [
            SaliencyLayer { name: "conv", weights: &w[..4], grads: &g[..4] },
            SaliencyLayer { name: "fc", weights: &w[4..], grads: &g[4..] },
        ];
        let ex: HashSet<String> = ["fc".to_string()].into();
        let m = snip_mask(&layers, 0.5, &ex).unwrap();
        assert_eq!(m[0].to_u8(), vec![0, 0, 1, 1]);
        assert_eq!(m[1].to_u8(), vec![1, 1]);
    }

    #[test]
    fn zero_sparsity_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![LayerShape::new("a", &[4, 3, 3, 3]), LayerShape::new("b", &[10, 4])];
        let m = erk_mask(&layers, 0.0, &none(), &mut rng).unwrap();
        assert!(m.iter().all(|m| m.count_ones() == m.len()));
        let w = vec![0.1; 108];
        let g = vec![0.0; 108];
        let s = snip_mask(&[SaliencyLayer { name: "a", weights: &w, grads: &g }], 0.0, &none()).unwrap();
        assert_eq!(s[0].count_ones(), 108);
    }

    #[test]
    fn erk_equal_layers_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![LayerShape::new("a", &[8, 8, 3, 3]), LayerShape::new("b", &[8, 8, 3, 3])];
        let d = erk_densities(&layers, 0.5, &none()).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        let m = erk_mask(&layers, 0.5, &none(), &mut rng).unwrap();
        assert_eq!(m[0].count_ones() + m[1].count_ones(), 576);
    }

    #[test]
    fn erk_larger_layer_is_sparser() {
        let layers = vec![LayerShape::new("small", &[10, 10, 3, 3]), LayerShape::new("big", &[100, 10, 3, 3])];
        let d = erk_densities(&layers, 0.5, &none()).unwrap();
        assert!(d[1] < d[0], "{d:?}");
    }

    #[test]
    fn erk_saturation_redistributes() {
        // the tiny layer would need density > 1 and is clamped
        let layers = vec![LayerShape::new("tiny", &[2, 2]), LayerShape::new("big", &[200, 200, 3, 3])];
        let d = erk_densities(&layers, 0.1, &none()).unwrap();
        assert_eq!(d[0], 1.0);
        assert!(d[1] < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = erk_mask(&layers, 0.1, &none(), &mut rng).unwrap();
        let total = 4 + 360_000;
        assert_eq!(m[0].count_ones() + m[1].count_ones(), keep_count(0.1, total));
    }

    #[test]
    fn keep_count_handles_decimal_error() {
        assert_eq!(keep_count(0.7, 10), 3);
        assert_eq!(keep_count(0.9, 100_000), 10_000);
        assert_eq!(keep_count(0.5, 7), 4);
        assert_eq!(keep_count(0.0, 7), 7);
    }

    #[test]
    fn config_validation() {
        assert!(PaiConfig { method: PaiMethod::None, sparsity: 0.5, saliency_batches: 1 }.validate().is_err());
        assert!(PaiConfig { method: PaiMethod::Snip, sparsity: 1.0, saliency_batches: 1 }.validate().is_err());
        assert!(PaiConfig { method: PaiMethod::Snip, sparsity: 0.5, saliency_batches: 0 }.validate().is_err());
        assert!(PaiConfig { method: PaiMethod::Erk, sparsity: 0.5, saliency_batches: 1 }.validate().is_ok());
        assert_eq!("SNIP".parse::<PaiMethod>().unwrap(), PaiMethod::Snip);
    }
}
