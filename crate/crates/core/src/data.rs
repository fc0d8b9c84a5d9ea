//! In-memory image classification datasets, batching and augmentation.

use ndarray::{s, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Zero padding used by the random-crop augmentation.
pub const CROP_PADDING: usize = 4;

/// Images in NCHW layout with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Array4<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::shape("labels", &[images.dim().0], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel {
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dim();
        (c, h, w)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Keeps `round(fraction * n_c)` randomly chosen samples of every class
    /// `c`, preserving the original order.
    pub fn stratified_subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("subsample fraction {fraction} not in (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            let k = (fraction * idx.len() as f64).round() as usize;
            idx.shuffle(&mut rng);
            keep.extend_from_slice(&idx[..k]);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }

    /// Per-channel mean and (population) standard deviation.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.image_shape().0;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let v = self.images.slice(s![.., ch, .., ..]);
            let n = v.len() as f64;
            let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
            mean[ch] = m;
            std[ch] = var.sqrt();
        }
        (mean, std)
    }

    pub fn normalize(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let c = self.image_shape().0;
        if mean.len() != c || std.len() != c {
            return Err(Error::shape("channel statistics", &[c], &[mean.len().min(std.len())]));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("channel std must be positive".into()));
        }
        for ch in 0..c {
            let (m, sd) = (mean[ch] as f32, std[ch] as f32);
            self.images
                .slice_mut(s![.., ch, .., ..])
                .mapv_inplace(|x| (x - m) / sd);
        }
        Ok(())
    }

    /// Gathers a batch; with `augment`, each image is randomly shifted
    /// within a zero-padded border and flipped horizontally with p = 0.5.
    pub fn batch<F: Scalar, R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        augment: Option<&mut R>,
    ) -> (Array4<F>, Vec<usize>) {
        let (c, h, w) = self.image_shape();
        let mut out = Array4::<F>::zeros((indices.len(), c, h, w));
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        match augment {
            None => {
                for (b, &i) in indices.iter().enumerate() {
                    out.slice_mut(s![b, .., .., ..])
                        .assign(&self.images.slice(s![i, .., .., ..]).mapv(|v| F::from_f64_lossy(v as f64)));
                }
            }
            Some(rng) => {
                let p = CROP_PADDING as i64;
                for (b, &i) in indices.iter().enumerate() {
                    let dy = rng.random_range(-p..=p) as isize;
                    let dx = rng.random_range(-p..=p) as isize;
                    let flip = rng.random_bool(0.5);
                    for ch in 0..c {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for x in 0..w {
                                let xx = if flip { w - 1 - x } else { x };
                                let sx = xx as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                out[[b, ch, y, x]] =
                                    F::from_f64_lossy(self.images[[i, ch, sy as usize, sx as usize]] as f64);
                            }
                        }
                    }
                }
            }
        }
        (out, labels)
    }

    /// Gaussian class prototypes plus isotropic noise: a learnable stand-in
    /// for image data in tests and dry runs.
    pub fn synthetic(
        per_class: usize,
        num_classes: usize,
        shape: (usize, usize, usize),
        noise: f64,
        seed: u64,
    ) -> Result<Dataset> {
        if per_class == 0 || num_classes < 2 {
            return Err(Error::InvalidConfig("synthetic data needs samples and >= 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let (c, h, w) = shape;
        let dim = c * h * w;
        let protos: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let n = per_class * num_classes;
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % num_classes;
            labels.push(y);
            data.extend(protos[y].iter().map(|&p| (p + noise * normal.sample(&mut rng)) as f32));
        }
        Dataset::new(
            Array4::from_shape_vec((n, c, h, w), data).expect("sized above"),
            labels,
            num_classes,
        )
    }
}

/// Splits `0..n` into consecutive batches of an order shuffled by `rng`.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
