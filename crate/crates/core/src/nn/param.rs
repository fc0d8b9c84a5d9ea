use ndarray::{ArrayD, IxDyn};

use crate::scalar::Scalar;

/// Trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    pub velocity: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: ArrayD::zeros(IxDyn(&shape)),
            velocity: ArrayD::zeros(IxDyn(&shape)),
        }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Param::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}
