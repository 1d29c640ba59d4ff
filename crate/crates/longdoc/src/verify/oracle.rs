//! Explicit-loop reference implementations of every attention mechanism.
//!
//! These are deliberately naive: per-row exp/sum loops, O(N^2) similarity
//! matrices, no max-subtraction, no reordering tricks. The production
//! kernels are tested against them, so nothing here may share code with
//! the kernel implementations beyond raw matrix storage.

use crate::matrix::Matrix;

pub const DEGENERATE_EPS: f64 = 1e-12;

/// Row-wise softmax(Q K^T / sqrt(d)) computed with explicit loops.
pub fn softmax_weights(q: &Matrix, k: &Matrix) -> Matrix {
    let n = q.rows();
    let d = q.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut w = Matrix::zeros(n, k.rows());
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..k.rows() {
            let mut dot = 0.0;
            for c in 0..d {
                dot += q.get(i, c) * k.get(j, c);
            }
            let e = (dot * scale).exp();
            w.set(i, j, e);
            row_sum += e;
        }
        for j in 0..k.rows() {
            w.set(i, j, w.get(i, j) / row_sum);
        }
    }
    w
}

/// softmax(Q K^T / sqrt(d)) V.
pub fn softmax_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    apply_weights(&softmax_weights(q, k), v)
}

/// softmax(Q (P_K K)^T / sqrt(d)) (P_V V) with every product spelled out.
pub fn linformer_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    p_k: &Matrix,
    p_v: &Matrix,
) -> Matrix {
    let kp = project(p_k, k);
    let vp = project(p_v, v);
    apply_weights(&softmax_weights(q, &kp), &vp)
}

/// (softmax(Q K^T / sqrt(d)) ⊙ B) V, optionally renormalizing rows after
/// the bias. Returns the output and the indices of rows whose post-bias
/// mass fell below [`DEGENERATE_EPS`] (renormalized mode only).
pub fn biased_softmax_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    bias: &Matrix,
    renormalize: bool,
) -> (Matrix, Vec<usize>) {
    let n = q.rows();
    let mut w = softmax_weights(q, k);
    for i in 0..n {
        for j in 0..n {
            w.set(i, j, w.get(i, j) * bias.get(i, j));
        }
    }
    let mut degenerate = Vec::new();
    if renormalize {
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                row_sum += w.get(i, j);
            }
            if row_sum < DEGENERATE_EPS {
                degenerate.push(i);
                for j in 0..n {
                    w.set(i, j, 0.0);
                }
            } else {
                for j in 0..n {
                    w.set(i, j, w.get(i, j) / row_sum);
                }
            }
        }
    }
    (apply_weights(&w, v), degenerate)
}

/// ReLU-similarity attention via the explicit N x N path: W = ReLU(Q)
/// ReLU(K)^T, optionally ⊙ B, rows normalized by their sum. Rows whose
/// sum is below [`DEGENERATE_EPS`] come back as zeros and are reported.
pub fn relu_similarity_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    bias: Option<&Matrix>,
) -> (Matrix, Vec<usize>) {
    let n = q.rows();
    let d = q.cols();
    let mut out = Matrix::zeros(n, v.cols());
    let mut degenerate = Vec::new();
    for i in 0..n {
        let mut weights = vec![0.0; k.rows()];
        let mut row_sum = 0.0;
        for (j, w) in weights.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..d {
                s += q.get(i, c).max(0.0) * k.get(j, c).max(0.0);
            }
            if let Some(b) = bias {
                s *= b.get(i, j);
            }
            *w = s;
            row_sum += s;
        }
        if row_sum < DEGENERATE_EPS {
            degenerate.push(i);
            continue;
        }
        for (j, w) in weights.iter().enumerate() {
            for c in 0..v.cols() {
                out.set(i, c, out.get(i, c) + w / row_sum * v.get(j, c));
            }
        }
    }
    (out, degenerate)
}

fn project(p: &Matrix, m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(p.rows(), m.cols());
    for i in 0..p.rows() {
        for j in 0..m.cols() {
            let mut acc = 0.0;
            for t in 0..p.cols() {
                acc += p.get(i, t) * m.get(t, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn apply_weights(w: &Matrix, v: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(w.rows(), v.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let wij = w.get(i, j);
            for c in 0..v.cols() {
                out.set(i, c, out.get(i, c) + wij * v.get(j, c));
            }
        }
    }
    out
}
