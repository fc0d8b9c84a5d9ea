use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Divide by 10 at each milestone epoch.
    #[serde(alias = "milestone-decay")]
    MilestoneDecay,
    /// Constant for the first half, then linear from `0.1·lr` at 50% to
    /// `0.01·lr` at 90% of training, constant afterwards.
    #[serde(alias = "half-then-linear")]
    HalfThenLinear,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "milestone_decay" | "milestone-decay" => Ok(LrSchedule::MilestoneDecay),
            "half_then_linear" | "half-then-linear" => Ok(LrSchedule::HalfThenLinear),
            other => Err(Error::InvalidConfig(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Learning rate used throughout `epoch` (0-based).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::OutOfRange(format!("epoch {epoch} of {}", cfg.epochs)));
    }
    let lr = cfg.lr_initial;
    Ok(match cfg.lr_schedule {
        LrSchedule::MilestoneDecay => {
            let passed = cfg.milestones.iter().filter(|&&m| epoch >= m).count() as i32;
            lr * 0.1f64.powi(passed)
        }
        LrSchedule::HalfThenLinear => {
            let f = epoch as f64 / cfg.epochs as f64;
            if f < 0.5 {
                lr
            } else if f < 0.9 {
                lr * (0.1 + (f - 0.5) / 0.4 * (0.01 - 0.1))
            } else {
                lr * 0.01
            }
        }
    })
}
