use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::schedule::LrSchedule;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub momentum: f64,
    pub lr_initial: f64,
    pub lr_schedule: LrSchedule,
    /// Epochs at which the milestone schedule divides the rate by 10.
    pub milestones: Vec<usize>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub seed: u64,
    pub ce_uses_temperature: bool,
    pub kl_t_squared: bool,
    pub detach_teacher: bool,
    /// Random-crop (4-pixel padding) and horizontal-flip augmentation.
    pub augment: bool,
    /// Accepted for config compatibility; enabling it is rejected.
    pub cutmix: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            momentum: 0.9,
            lr_initial: 0.1,
            lr_schedule: LrSchedule::MilestoneDecay,
            milestones: vec![75, 130, 180],
            weight_decay: 5e-4,
            batch_size: 128,
            epochs: 200,
            alpha: 1.0,
            temperature: 3.0,
            seed: 0,
            ce_uses_temperature: false,
            kl_t_squared: false,
            detach_teacher: true,
            augment: true,
            cutmix: false,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            temperature: self.temperature,
            ce_uses_temperature: self.ce_uses_temperature,
            kl_t_squared: self.kl_t_squared,
            detach_teacher: self.detach_teacher,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if !(self.lr_initial > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "need lr_initial > 0, momentum in [0, 1), weight_decay >= 0".into(),
            ));
        }
        if self.cutmix {
            return Err(Error::InvalidConfig("cutmix augmentation is not supported".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.momentum, c.lr_initial, c.batch_size), (0.9, 0.1, 128));
        assert_eq!((c.weight_decay, c.alpha, c.temperature), (5e-4, 1.0, 3.0));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            TrainConfig { alpha: -0.5, ..TrainConfig::default() },
            TrainConfig { temperature: 0.0, ..TrainConfig::default() },
            TrainConfig { cutmix: true, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
