//! Staged backbones and their multi-exit (fissioned) counterparts.

mod arch;
mod backbone;
pub mod checkpoint;
mod flops;
mod multi_exit;
mod stage;

pub use arch::{Architecture, BackboneConfig, BackboneKind, BlockSpec, StageSpec, STEM_KERNEL};
pub use backbone::{BackboneTrace, StagedBackbone};
pub use flops::{count_flops, FlopsReport};
pub use multi_exit::{fission_transform, ForwardTrace, MultiExitModel};
pub use stage::{BlockLocal, Shortcut, StageLocal, Stem};

use ndarray::{Array1, Array2, Array4};

use crate::error::Result;
use crate::nn::{Mode, Param};
use crate::scalar::Scalar;

/// Interface used by the trainer: forward to per-exit logits, backward from
/// per-exit logit gradients into parameter gradients.
pub trait Network<F: Scalar> {
    type Trace;

    fn num_exits(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn forward(&mut self, x: &Array4<F>, mode: Mode) -> Result<(Vec<Array2<F>>, Self::Trace)>;

    /// Requires a trace from a train-mode forward.
    fn backward(&mut self, trace: Self::Trace, dlogits: &[Array2<F>]) -> Result<()>;

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Array1<F>));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    /// Hook run after every optimizer step.
    fn after_step(&mut self) {}

    fn predict(&mut self, x: &Array4<F>) -> Result<Vec<Array2<F>>> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}
