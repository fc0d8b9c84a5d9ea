use crate::model::Network;
use crate::scalar::Scalar;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `d = g + wd·w; v = μ·v + d; w -= lr·v`.
///
/// Pruned weights hold zero value, zero gradient and zero velocity, so the
/// update leaves them at zero.
pub fn sgd_step<F: Scalar, N: Network<F> + ?Sized>(net: &mut N, lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (
        F::from_f64_lossy(lr),
        F::from_f64_lossy(momentum),
        F::from_f64_lossy(weight_decay),
    );
    net.visit_params(&mut |_, p| {
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut p.velocity)
            .for_each(|w, &g, v| {
                let d = g + wd * *w;
                *v = mu * *v + d;
                *w -= lr * *v;
            });
    });
    net.after_step();
}
