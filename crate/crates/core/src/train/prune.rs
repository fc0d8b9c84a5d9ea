use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{nfe_loss, LossConfig};
use crate::data::{shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::fission::Mask;
use crate::model::{Network, StagedBackbone};
use crate::nn::Mode;
use crate::pai::{erk_mask, snip_mask, LayerShape, PaiConfig, PaiMasks, PaiMethod, SaliencyLayer};
use crate::scalar::Scalar;

/// Prunable tensors of a backbone: the stem convolution and every groupable
/// stage weight. Shortcuts, normalization and the head stay dense.
fn prunable<F: Scalar>(backbone: &StagedBackbone<F>) -> Vec<(String, Vec<usize>, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    if let Some(stem) = &backbone.stem {
        out.push((
            "stem.conv".to_string(),
            stem.conv.shape().to_vec(),
            stem.conv.value.iter().map(|v| v.as_f64()).collect(),
            stem.conv.grad.iter().map(|v| v.as_f64()).collect(),
        ));
    }
    for (s, ws) in backbone.stages.iter().enumerate() {
        for (t, p) in ws.iter().enumerate() {
            out.push((
                format!("stage{s}.w{t}"),
                p.shape().to_vec(),
                p.value.iter().map(|v| v.as_f64()).collect(),
                p.grad.iter().map(|v| v.as_f64()).collect(),
            ));
        }
    }
    out
}

/// Computes pruning-at-initialization masks for `backbone`.
///
/// SNIP scores use cross-entropy gradients accumulated over
/// `cfg.saliency_batches` unaugmented batches drawn with `seed`; the
/// backbone itself is left untouched.
pub fn prune_at_init<F: Scalar>(
    backbone: &StagedBackbone<F>,
    cfg: &PaiConfig,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<PaiMasks> {
    cfg.validate()?;
    let layer_masks: Vec<Mask> = match cfg.method {
        PaiMethod::None => prunable(backbone).iter().map(|l| Mask::ones(l.2.len())).collect(),
        PaiMethod::Erk => {
            let shapes: Vec<LayerShape> = prunable(backbone)
                .iter()
                .map(|(n, s, _, _)| LayerShape::new(n.clone(), s))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            erk_mask(&shapes, cfg.sparsity, &HashSet::new(), &mut rng)?
        }
        PaiMethod::Snip => {
            if data.is_empty() {
                return Err(Error::Empty("SNIP needs data".into()));
            }
            let mut net = backbone.clone();
            net.zero_grad();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = shuffled_batches(data.len(), batch_size, &mut rng);
            let ce = LossConfig {
                alpha: 0.0,
                ..LossConfig::default()
            };
            for idx in batches.iter().cycle().take(cfg.saliency_batches) {
                let (x, y) = data.batch::<F, ChaCha8Rng>(idx, None);
                let (logits, trace) = net.forward(&x, Mode::Train)?;
                let out = nfe_loss(&logits, &y, &ce)?;
                net.backward(trace, &out.grads)?;
            }
            let layers = prunable(&net);
            let saliency: Vec<SaliencyLayer<'_>> = layers
                .iter()
                .map(|(n, _, w, g)| SaliencyLayer {
                    name: n,
                    weights: w,
                    grads: g,
                })
                .collect();
            snip_mask(&saliency, cfg.sparsity, &HashSet::new())?
        }
    };
    let mut it = layer_masks.into_iter();
    let stem = backbone.stem.as_ref().map(|_| it.next().expect("stem mask"));
    let stages = backbone
        .stages
        .iter()
        .map(|ws| {
            let bits: Vec<bool> = ws
                .iter()
                .flat_map(|_| it.next().expect("stage mask").bits().to_vec())
                .collect();
            Mask::from_bits(bits)
        })
        .collect();
    Ok(PaiMasks {
        stem,
        stages,
        sparsity: cfg.sparsity,
    })
}
