use ndarray::{Array2, Array4, Axis, Ix2};
use rand::Rng;

use super::param::Param;
use crate::scalar::Scalar;

/// Fully connected layer `y = x W^T + b`, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Scalar> Linear<F> {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization for weight and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<F> {
            (0..n)
                .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let w = draw(inputs * outputs);
        let b = draw(outputs);
        Linear {
            weight: Param::new(ndarray::ArrayD::from_shape_vec(vec![outputs, inputs], w).unwrap()),
            bias: Param::new(ndarray::ArrayD::from_shape_vec(vec![outputs], b).unwrap()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.dot(&w.t());
        y += &self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y
    }

    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dx = dy.dot(&w);
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        gw += &dy.t().dot(x);
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        gb += &dy.sum_axis(Axis(0));
        dx
    }
}

/// Mean over the spatial axes: `[b, c, h, w] -> [b, c]`.
pub fn global_avg_pool<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (b, c, h, w) = x.dim();
    let n = F::from_usize(h * w).unwrap();
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    Array2::from_shape_fn((b, c), |(bi, ci)| {
        let start = (bi * c + ci) * h * w;
        let mut s = F::zero();
        for &v in &xs[start..start + h * w] {
            s += v;
        }
        s / n
    })
}

pub fn global_avg_pool_backward<F: Scalar>(dy: &Array2<F>, shape: (usize, usize, usize, usize)) -> Array4<F> {
    let (b, c, h, w) = shape;
    let n = F::from_usize(h * w).unwrap();
    Array4::from_shape_fn((b, c, h, w), |(bi, ci, _, _)| dy[[bi, ci]] / n)
}
