//! Accuracy, calibration and diversity metrics for exits and their ensemble.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::train::{argmax_rows, ensemble_logits, softmax};

pub const DEFAULT_ECE_BINS: usize = 15;
pub const PROB_FLOOR: f64 = 1e-12;

/// Class predicted by `softmax(mean logits)` (lowest index on ties) and the
/// ensemble probabilities.
pub fn ensemble_predict(exits: &[Array2<f64>]) -> Result<(Vec<usize>, Array2<f64>)> {
    let p = softmax(&ensemble_logits(exits)?, 1.0);
    Ok((argmax_rows(&p), p))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_len(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::Empty("accuracy over no samples".into()));
    }
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / preds.len() as f64)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("sample count", &[a], &[b]));
    }
    Ok(())
}

/// Expected calibration error over `num_bins` equal-width, right-inclusive
/// confidence bins (`(k/M, (k+1)/M]`, with confidence 0 in the first bin).
pub fn ece(probs: &Array2<f64>, labels: &[usize], num_bins: usize) -> Result<f64> {
    check_len(probs.nrows(), labels.len())?;
    if probs.nrows() == 0 {
        return Err(Error::Empty("ECE over no samples".into()));
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    let preds = argmax_rows(probs);
    for (r, row) in probs.axis_iter(Axis(0)).enumerate() {
        let conf = row[preds[r]];
        let bin = ((conf * num_bins as f64).ceil() as usize).clamp(1, num_bins) - 1;
        count[bin] += 1;
        conf_sum[bin] += conf;
        correct[bin] += usize::from(preds[r] == labels[r]);
    }
    let n = probs.nrows() as f64;
    Ok((0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (correct[b] as f64 / c - conf_sum[b] / c).abs()
        })
        .sum())
}

/// Mean negative log-likelihood of the true class, probabilities floored at 1e-12.
pub fn nll(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_len(probs.nrows(), labels.len())?;
    if probs.nrows() == 0 {
        return Err(Error::Empty("NLL over no samples".into()));
    }
    let mut s = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.ncols() {
            return Err(Error::InvalidLabel {
                label: y,
                classes: probs.ncols(),
            });
        }
        s -= probs[[r, y]].max(PROB_FLOOR).ln();
    }
    Ok(s / probs.nrows() as f64)
}

/// Fraction of samples the two members classify differently.
pub fn prediction_disagreement(a: &[usize], b: &[usize]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Empty("disagreement over no samples".into()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

/// Per-sample cosine similarity of two members' probability rows, averaged.
pub fn cosine_similarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("probabilities", &[a.nrows(), a.ncols()], &[b.nrows(), b.ncols()]));
    }
    if a.nrows() == 0 {
        return Err(Error::Empty("cosine similarity over no samples".into()));
    }
    let mut s = 0.0;
    for (ra, rb) in a.axis_iter(Axis(0)).zip(b.axis_iter(Axis(0))) {
        let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::InvalidConfig("cosine similarity of a zero vector".into()));
        }
        s += ra.dot(&rb) / (na * nb);
    }
    Ok(s / a.nrows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_exit_accuracy: Vec<f64>,
    pub ensemble_accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub pairwise_pd: Vec<Vec<f64>>,
    pub pairwise_cs: Vec<Vec<f64>>,
    pub flops_ratio: f64,
}

impl EvalReport {
    /// Metrics of the exit logits on a labelled set. Accuracy, NLL and ECE
    /// use `T = 1` probabilities; NLL and ECE are those of the ensemble.
    pub fn from_logits(exits: &[Array2<f64>], labels: &[usize], flops_ratio: f64, ece_bins: usize) -> Result<Self> {
        let (ens_pred, ens_prob) = ensemble_predict(exits)?;
        check_len(ens_pred.len(), labels.len())?;
        let probs: Vec<Array2<f64>> = exits.iter().map(|z| softmax(z, 1.0)).collect();
        let preds: Vec<Vec<usize>> = exits.iter().map(argmax_rows).collect();
        let n = exits.len();
        let mut pd = vec![vec![0.0; n]; n];
        let mut cs = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                pd[i][j] = prediction_disagreement(&preds[i], &preds[j])?;
                pd[j][i] = pd[i][j];
                cs[i][j] = cosine_similarity(&probs[i], &probs[j])?;
                cs[j][i] = cs[i][j];
            }
        }
        Ok(EvalReport {
            per_exit_accuracy: preds.iter().map(|p| accuracy(p, labels)).collect::<Result<_>>()?,
            ensemble_accuracy: accuracy(&ens_pred, labels)?,
            nll: nll(&ens_prob, labels)?,
            ece: ece(&ens_prob, labels, ece_bins)?,
            pairwise_pd: pd,
            pairwise_cs: cs,
            flops_ratio,
        })
    }

    /// Mean PD and CS over distinct exit pairs (`None` for a single exit).
    pub fn mean_diversity(&self) -> Option<(f64, f64)> {
        let n = self.per_exit_accuracy.len();
        if n < 2 {
            return None;
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let (mut pd, mut cs) = (0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                pd += self.pairwise_pd[i][j];
                cs += self.pairwise_cs[i][j];
            }
        }
        Some((pd / pairs, cs / pairs))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Column header of [`format_table`].
pub const TABLE_HEADER: [&str; 7] = ["Method", "Acc (%)", "NLL", "ECE", "FLOPs", "PD", "CS"];

/// Plain-text table with one row per labelled report.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|(name, r)| {
            let (pd, cs) = r
                .mean_diversity()
                .map_or(("-".to_string(), "-".to_string()), |(p, c)| (format!("{p:.3}"), format!("{c:.3}")));
            [
                name.clone(),
                format!("{:.2}", 100.0 * r.ensemble_accuracy),
                format!("{:.3}", r.nll),
                format!("{:.3}", r.ece),
                format!("{:.2}x", r.flops_ratio),
                pd,
                cs,
            ]
        })
        .collect();
    let mut widths: Vec<usize> = TABLE_HEADER.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = line(TABLE_HEADER.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Eval-mode logits of every exit over `data`, in dataset order.
pub fn collect_logits<F: Scalar, N: Network<F>>(
    net: &mut N,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<Array2<f64>>> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut parts: Vec<Vec<Array2<f64>>> = vec![Vec::new(); net.num_exits()];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch::<F, rand_chacha::ChaCha8Rng>(chunk, None);
        for (j, z) in net.predict(&x)?.into_iter().enumerate() {
            parts[j].push(z.mapv(|v| v.as_f64()));
        }
    }
    parts
        .into_iter()
        .map(|p| {
            let views: Vec<_> = p.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidConfig(e.to_string()))
        })
        .collect()
}

/// Evaluates a network on a labelled set.
pub fn evaluate<F: Scalar, N: Network<F>>(
    net: &mut N,
    data: &Dataset,
    batch_size: usize,
    flops_ratio: f64,
) -> Result<EvalReport> {
    let logits = collect_logits(net, data, batch_size)?;
    EvalReport::from_logits(&logits, &data.labels, flops_ratio, DEFAULT_ECE_BINS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ensemble_examples() {
        let (p, _) = ensemble_predict(&[array![[2.0, 0.0]], array![[0.0, 1.0]]]).unwrap();
        assert_eq!(p, vec![0]);
        let (p, _) = ensemble_predict(&[array![[1.0, 1.0]]]).unwrap();
        assert_eq!(p, vec![0]);
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(prediction_disagreement(&[1, 2], &[1, 2]).unwrap(), 0.0);
        assert_eq!(prediction_disagreement(&[0, 1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(prediction_disagreement(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 0.5);
        assert!(prediction_disagreement(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = array![[0.2, 0.8], [0.6, 0.4]];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&array![[1.0, 0.0]], &array![[0.0, 1.0]]).unwrap(), 0.0);
        let v = cosine_similarity(&array![[0.5, 0.5]], &array![[1.0, 0.0]]).unwrap();
        assert!((v - 0.5 / 0.5f64.sqrt()).abs() < 1e-12);
        assert!(cosine_similarity(&array![[0.0, 0.0]], &array![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn nll_examples() {
        assert!(nll(&array![[1.0, 0.0], [0.0, 1.0]], &[0, 1]).unwrap() < 1e-9);
        let u = Array2::from_elem((3, 5), 0.2);
        assert!((nll(&u, &[0, 3, 4]).unwrap() - 5f64.ln()).abs() < 1e-12);
        let v = nll(&array![[0.5, 0.5], [0.75, 0.25]], &[0, 1]).unwrap();
        assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!(nll(&array![[0.0, 1.0]], &[0]).unwrap().is_finite());
    }

    #[test]
    fn ece_examples() {
        // confident and right
        assert_eq!(ece(&array![[1.0, 0.0], [0.0, 1.0]], &[0, 1], 15).unwrap(), 0.0);
        assert!(ece(&Array2::zeros((0, 2)), &[], 15).is_err());
    }

    #[test]
    fn single_exit_report_matches_exit() {
        let z = array![[2.0, 0.0, 1.0], [0.0, 0.5, 0.2], [1.0, 3.0, 0.0]];
        let r = EvalReport::from_logits(&[z], &[0, 2, 1], 1.0, 15).unwrap();
        assert_eq!(r.ensemble_accuracy, r.per_exit_accuracy[0]);
        assert_eq!(r.pairwise_pd, vec![vec![0.0]]);
        assert!(r.mean_diversity().is_none());
        let table = format_table(&[("single".into(), r)]);
        assert!(table.starts_with("Method"));
        assert!(table.contains("66.67"));
    }
}
