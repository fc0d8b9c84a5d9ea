//! Ensemble knowledge-distillation training: loss, schedules, optimizer and
//! the epoch loop.

mod config;
mod loss;
mod optim;
mod prune;
mod schedule;
mod trainer;

pub use config::TrainConfig;
pub use loss::{
    argmax_rows, ensemble_logits, log_softmax, nfe_loss, softmax, teacher_signal, LossBreakdown, LossConfig,
    LossOutput,
};
pub use optim::sgd_step;
pub use prune::prune_at_init;
pub use schedule::{lr_at, LrSchedule};
pub use trainer::{train, train_epoch, EpochLog};
