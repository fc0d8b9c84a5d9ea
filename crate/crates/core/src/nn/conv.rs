use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, ArrayViewMut2, ArrayViewMut4};

use crate::scalar::Scalar;

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(x: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        let (c, h, w) = (x[1], x[2], x[3]);
        Geom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: conv_output_size(h, k, stride, pad),
            ow: conv_output_size(w, k, stride, pad),
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    #[inline]
    fn src(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

fn im2col<F: Scalar>(img: &[F], g: &Geom, cols: &mut [F]) {
    let ohw = g.cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * ohw;
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        dst.fill(F::zero());
                        continue;
                    };
                    let src = &img[(ci * g.h + iy) * g.w..(ci * g.h + iy + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        *d = match g.src(ox, kx, g.w) {
                            Some(ix) => src[ix],
                            None => F::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Scalar>(cols: &[F], g: &Geom, img: &mut [F]) {
    let ohw = g.cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * ohw;
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut img[(ci * g.h + iy) * g.w..(ci * g.h + iy + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution without bias, square kernel. `w` is `[out, in, k, k]`.
pub fn conv2d<F: Scalar>(x: &Array4<F>, w: ArrayView4<F>, stride: usize, pad: usize) -> Array4<F> {
    let (b, cout, k) = (x.shape()[0], w.shape()[0], w.shape()[2]);
    let g = Geom::new(x.shape(), k, stride, pad);
    assert_eq!(w.shape()[1], g.c, "conv2d input channels");
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let wmat = w.to_shape((cout, g.rows())).expect("contiguous weights");
    let mut out = Array4::<F>::zeros((b, cout, g.oh, g.ow));
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    let img_len = g.c * g.h * g.w;
    let out_len = cout * g.cols();
    let out_slice = out.as_slice_mut().expect("fresh array");
    for bi in 0..b {
        im2col(&xs[bi * img_len..(bi + 1) * img_len], &g, cols.as_slice_mut().unwrap());
        let mut dst = ArrayViewMut2::from_shape((cout, g.cols()), &mut out_slice[bi * out_len..(bi + 1) * out_len])
            .expect("output block");
        general_mat_mul(F::one(), &wmat, &cols, F::zero(), &mut dst);
    }
    out
}

/// Backward pass of [`conv2d`]: accumulates the weight gradient into `dw`
/// and returns the input gradient.
pub fn conv2d_backward<F: Scalar>(
    x: &Array4<F>,
    w: ArrayView4<F>,
    dy: &Array4<F>,
    stride: usize,
    pad: usize,
    mut dw: ArrayViewMut4<F>,
) -> Array4<F> {
    let (b, cout, k) = (x.shape()[0], w.shape()[0], w.shape()[2]);
    let g = Geom::new(x.shape(), k, stride, pad);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let wmat = w.to_shape((cout, g.rows())).expect("contiguous weights");
    let wt = wmat.t();
    let mut dwmat = dw.view_mut().into_shape_with_order((cout, g.rows())).expect("contiguous weight grad");
    let mut dx = Array4::<F>::zeros(x.raw_dim());
    let mut cols = Array2::<F>::zeros((g.rows(), g.cols()));
    let mut dcols = Array2::<F>::zeros((g.rows(), g.cols()));
    let img_len = g.c * g.h * g.w;
    let out_len = cout * g.cols();
    let dxs = dx.as_slice_mut().expect("fresh array");
    for bi in 0..b {
        let dyb = ArrayView2::from_shape((cout, g.cols()), &dys[bi * out_len..(bi + 1) * out_len]).unwrap();
        im2col(&xs[bi * img_len..(bi + 1) * img_len], &g, cols.as_slice_mut().unwrap());
        general_mat_mul(F::one(), &dyb, &cols.t(), F::one(), &mut dwmat);
        general_mat_mul(F::one(), &wt, &dyb, F::zero(), &mut dcols);
        col2im(dcols.as_slice().unwrap(), &g, &mut dxs[bi * img_len..(bi + 1) * img_len]);
    }
    dx
}
