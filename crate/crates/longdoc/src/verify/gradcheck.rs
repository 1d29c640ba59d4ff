//! Central finite-difference gradient checking.

use crate::matrix::Matrix;

/// Default perturbation step for central differences.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Differences below this are treated as pure FD noise: a central
/// difference of an f64-evaluated loss carries roughly `1e-12 / (2 step)`
/// of cancellation error, so tiny absolute gaps say nothing.
pub const ABS_NOISE_FLOOR: f64 = 1e-7;

/// Gradient of `loss` with respect to `x` by central differences,
/// perturbing one coordinate at a time.
pub fn numeric_gradient(mut loss: impl FnMut(&Matrix) -> f64, x: &Matrix, step: f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.rows() * x.cols() {
        let orig = probe.data()[idx];
        probe.data_mut()[idx] = orig + step;
        let up = loss(&probe);
        probe.data_mut()[idx] = orig - step;
        let down = loss(&probe);
        probe.data_mut()[idx] = orig;
        grad.data_mut()[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// Relative error between an analytic and a numeric gradient entry, with
/// an absolute floor so FD noise around zero does not read as a mismatch.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_NOISE_FLOOR {
        return 0.0;
    }
    diff / f64::max(analytic.abs(), numeric.abs())
}

/// Worst relative error over all entries of two gradients.
pub fn max_rel_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Convenience: numeric gradient vs analytic gradient for one tensor.
pub fn check(
    loss: impl FnMut(&Matrix) -> f64,
    x: &Matrix,
    analytic: &Matrix,
    step: f64,
) -> f64 {
    max_rel_error(analytic, &numeric_gradient(loss, x, step))
}
