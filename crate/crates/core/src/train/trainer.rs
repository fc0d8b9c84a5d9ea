use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{argmax_rows, ensemble_logits, nfe_loss};
use super::optim::sgd_step;
use super::schedule::lr_at;
use crate::data::{shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::nn::Mode;
use crate::scalar::Scalar;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub per_exit_ce: Vec<f64>,
    /// Unscaled distillation term of each exit.
    pub per_exit_kl: Vec<f64>,
    /// `CE_i + α·KL_i` (times `T^2` when enabled).
    pub per_exit_loss: Vec<f64>,
    /// Training accuracy of each exit on the augmented batches.
    pub per_exit_accuracy: Vec<f64>,
    pub ensemble_accuracy: f64,
    pub kl_total: f64,
}

/// Runs one epoch of SGD over a shuffled pass of `data`.
pub fn train_epoch<F: Scalar, N: Network<F>>(
    net: &mut N,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochLog> {
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if data.num_classes != net.num_classes() {
        return Err(Error::shape("class count", &[net.num_classes()], &[data.num_classes]));
    }
    let lr = lr_at(epoch, cfg)?;
    let loss_cfg = cfg.loss();
    let scale = if cfg.kl_t_squared { cfg.temperature * cfg.temperature } else { 1.0 };
    let n = net.num_exits();
    let mut ce = vec![0.0; n];
    let mut kl = vec![0.0; n];
    let mut correct = vec![0usize; n];
    let mut ens_correct = 0usize;
    let mut loss_sum = 0.0;
    for (bi, idx) in shuffled_batches(data.len(), cfg.batch_size, rng).iter().enumerate() {
        let (x, y) = data.batch::<F, _>(idx, cfg.augment.then_some(&mut *rng));
        net.zero_grad();
        let (logits, trace) = net.forward(&x, Mode::Train)?;
        let out = nfe_loss(&logits, &y, &loss_cfg)?;
        let total = out.breakdown.total;
        if !total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: bi,
                loss: total,
            });
        }
        net.backward(trace, &out.grads)?;
        sgd_step(net, lr, cfg.momentum, cfg.weight_decay);

        let b = idx.len() as f64;
        loss_sum += total * b;
        for j in 0..n {
            ce[j] += out.breakdown.ce[j] * b;
            kl[j] += out.breakdown.kl[j] * b;
            let z = logits[j].mapv(|v| v.as_f64());
            correct[j] += argmax_rows(&z).iter().zip(&y).filter(|(p, t)| p == t).count();
        }
        let z_e = ensemble_logits(&logits)?.mapv(|v| v.as_f64());
        ens_correct += argmax_rows(&z_e).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    let total = data.len() as f64;
    let per_exit_ce: Vec<f64> = ce.iter().map(|v| v / total).collect();
    let per_exit_kl: Vec<f64> = kl.iter().map(|v| v / total).collect();
    Ok(EpochLog {
        epoch,
        lr,
        loss: loss_sum / total,
        per_exit_loss: per_exit_ce
            .iter()
            .zip(&per_exit_kl)
            .map(|(c, k)| c + cfg.alpha * scale * k)
            .collect(),
        kl_total: per_exit_kl.iter().sum(),
        per_exit_ce,
        per_exit_kl,
        per_exit_accuracy: correct.iter().map(|&c| c as f64 / total).collect(),
        ensemble_accuracy: ens_correct as f64 / total,
    })
}

/// Trains for `cfg.epochs` epochs. The data order and augmentation are drawn
/// from a single generator seeded with `cfg.seed`; `on_epoch` sees each log
/// line as it is produced.
pub fn train<F: Scalar, N: Network<F>>(
    net: &mut N,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let log = train_epoch(net, data, cfg, epoch, &mut rng)?;
        log::info!(
            "epoch {epoch}: lr {:.5} loss {:.4} ensemble acc {:.4}",
            log.lr,
            log.loss,
            log.ensemble_accuracy
        );
        on_epoch(&log)?;
        logs.push(log);
    }
    Ok(logs)
}
