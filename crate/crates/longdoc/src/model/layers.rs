//! Dense layer primitives with hand-derived backward passes.

use crate::matrix::Matrix;

use super::LN_EPS;

/// x W + b with b broadcast over rows (b is 1 x out).
pub(crate) fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.matmul(w);
    for i in 0..y.rows() {
        for (v, &bv) in y.row_mut(i).iter_mut().zip(b.row(0)) {
            *v += bv;
        }
    }
    y
}

pub(crate) struct LinearGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

pub(crate) fn linear_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> LinearGrads {
    LinearGrads {
        dx: dy.matmul_transpose_b(w),
        dw: x.matmul_transpose_a(dy),
        db: dy.col_sums(),
    }
}

/// Per-row layer norm: out = gamma * (x - mean) / sqrt(var + eps) + beta.
pub(crate) struct LnTrace {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub out: Matrix,
}

pub(crate) fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> LnTrace {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(s);
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat.set(i, j, h);
            out.set(i, j, gamma.get(0, j) * h + beta.get(0, j));
        }
    }
    LnTrace { xhat, inv_std, out }
}

/// Returns (dx, dgamma, dbeta). Per row, with dh = dy * gamma:
/// dx = inv_std * (dh - mean(dh) - xhat * mean(dh * xhat)).
pub(crate) fn layer_norm_backward(
    trace: &LnTrace,
    gamma: &Matrix,
    dy: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let (n, d) = trace.xhat.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dgamma = Matrix::zeros(1, d);
    let mut dbeta = Matrix::zeros(1, d);
    for i in 0..n {
        let xh = trace.xhat.row(i);
        let dyr = dy.row(i);
        let mut mean_dh = 0.0;
        let mut mean_dh_xh = 0.0;
        for j in 0..d {
            let dh = dyr[j] * gamma.get(0, j);
            mean_dh += dh;
            mean_dh_xh += dh * xh[j];
            dgamma.set(0, j, dgamma.get(0, j) + dyr[j] * xh[j]);
            dbeta.set(0, j, dbeta.get(0, j) + dyr[j]);
        }
        mean_dh /= d as f64;
        mean_dh_xh /= d as f64;
        for j in 0..d {
            let dh = dyr[j] * gamma.get(0, j);
            dx.set(i, j, trace.inv_std[i] * (dh - mean_dh - xh[j] * mean_dh_xh));
        }
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU: 0.5 x (1 + tanh(c (x + a x^3))).
pub(crate) fn gelu(x: &Matrix) -> Matrix {
    x.map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub(crate) fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let u = GELU_C * (v + GELU_A * v * v * v);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *g *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    }
    dx
}
