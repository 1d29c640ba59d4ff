//! Forward and backward passes for the three attention mechanisms.
//!
//! `full_attention` is the O(N^2) softmax baseline. `linformer_attention`
//! projects keys and values down to k rows before the softmax, giving
//! O(Nk). `cosformer_attention` replaces exp with a ReLU kernel so the
//! key/value aggregate can be computed once and reused by every query row,
//! giving O(N d^2); a separable bias folds into the same path by stacking
//! the feature map, one block per expansion term.
//!
//! Backward passes recompute the forward internally (inputs are cheap at
//! the scales involved) and return analytic gradients of the scalar loss
//! `<upstream, out>`; the linear-path backward never materializes an N x N
//! intermediate either.

use thiserror::Error;

use crate::bias::FeatureExpansion;
use crate::matrix::Matrix;

/// Rows whose attention mass falls below this are zeroed and reported
/// instead of dividing by ~0.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("{array} contains a non-finite value")]
    NonFinite { array: &'static str },
    #[error("{array} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        array: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("projected length k={k} must satisfy 1 <= k <= N={n}")]
    BadProjectedLength { k: usize, n: usize },
    #[error("bias entry at ({i}, {j}) is {value}, outside [0, 1]")]
    BiasOutOfRange { i: usize, j: usize, value: f64 },
    #[error("feature expansion is for sequence length {got}, input has {expected}")]
    ExpansionLength { expected: usize, got: usize },
}

/// Per-head query/key/value tensors, shape N x d each.
#[derive(Debug, Clone)]
pub struct AttentionInput {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

impl AttentionInput {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self, AttentionError> {
        for (name, m) in [("K", &k), ("V", &v)] {
            if m.shape() != q.shape() {
                return Err(AttentionError::ShapeMismatch {
                    array: name,
                    expected: q.shape(),
                    got: m.shape(),
                });
            }
        }
        for (name, m) in [("Q", &q), ("K", &k), ("V", &v)] {
            if !m.all_finite() {
                return Err(AttentionError::NonFinite { array: name });
            }
        }
        Ok(AttentionInput { q, k, v })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }
}

/// Down-projections P_K, P_V (each k x N) for the low-rank path.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    p_k: Matrix,
    p_v: Matrix,
}

impl ProjectionPair {
    pub fn new(p_k: Matrix, p_v: Matrix) -> Result<Self, AttentionError> {
        if p_v.shape() != p_k.shape() {
            return Err(AttentionError::ShapeMismatch {
                array: "P_V",
                expected: p_k.shape(),
                got: p_v.shape(),
            });
        }
        let (k, n) = p_k.shape();
        if k == 0 || k > n {
            return Err(AttentionError::BadProjectedLength { k, n });
        }
        for (name, m) in [("P_K", &p_k), ("P_V", &p_v)] {
            if !m.all_finite() {
                return Err(AttentionError::NonFinite { array: name });
            }
        }
        Ok(ProjectionPair { p_k, p_v })
    }

    /// Identity projections (k = N): collapses the low-rank path back to
    /// full attention.
    pub fn identity(n: usize) -> Self {
        ProjectionPair {
            p_k: Matrix::identity(n),
            p_v: Matrix::identity(n),
        }
    }

    /// Random-normal projections with entries scaled by 1/sqrt(N).
    pub fn random(k: usize, n: usize, rng: &mut impl rand::Rng) -> Result<Self, AttentionError> {
        let std = 1.0 / (n as f64).sqrt();
        ProjectionPair::new(
            Matrix::random_normal(k, n, std, rng),
            Matrix::random_normal(k, n, std, rng),
        )
    }

    pub fn k(&self) -> usize {
        self.p_k.rows()
    }

    pub fn n(&self) -> usize {
        self.p_k.cols()
    }

    pub fn p_k(&self) -> &Matrix {
        &self.p_k
    }

    pub fn p_v(&self) -> &Matrix {
        &self.p_v
    }
}

/// Attention result. `attn` carries the materialized weights where the
/// path computes them anyway (N x N for the softmax paths, N x k for the
/// low-rank path); the linear path never forms them. `degenerate_rows`
/// lists query rows whose weight mass fell below [`DEGENERATE_EPS`] and
/// were therefore zeroed.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Matrix,
    pub attn: Option<Matrix>,
    pub degenerate_rows: Vec<usize>,
}

/// Which mechanism to run, with the per-mechanism extras it needs.
#[derive(Debug, Clone, Copy)]
pub enum AttentionVariant<'a> {
    Full,
    Biased {
        bias: &'a Matrix,
        renormalize: bool,
    },
    Linformer {
        proj: &'a ProjectionPair,
    },
    Cosformer {
        expansion: Option<&'a FeatureExpansion>,
    },
}

/// Gradients of `<upstream, out>` with respect to the inputs; projection
/// gradients are present only for the low-rank variant.
#[derive(Debug)]
pub struct AttentionGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dp_k: Option<Matrix>,
    pub dp_v: Option<Matrix>,
}

fn softmax_rows_in_place(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// softmax(Q K^T / sqrt(d)) V. Materializes the N x N weights.
pub fn full_attention(input: &AttentionInput) -> AttentionOutput {
    let mut scores = input.q.matmul_transpose_b(&input.k);
    scores.scale(1.0 / (input.d() as f64).sqrt());
    softmax_rows_in_place(&mut scores);
    let out = scores.matmul(&input.v);
    AttentionOutput {
        out,
        attn: Some(scores),
        degenerate_rows: Vec::new(),
    }
}

/// (softmax(Q K^T / sqrt(d)) ⊙ B) V. With `renormalize` the post-bias rows
/// are rescaled to sum to 1, restoring the convex-combination property the
/// element-wise product destroys; rows left with mass below
/// [`DEGENERATE_EPS`] are zeroed and reported.
pub fn biased_full_attention(
    input: &AttentionInput,
    bias: &Matrix,
    renormalize: bool,
) -> Result<AttentionOutput, AttentionError> {
    let n = input.n();
    if bias.shape() != (n, n) {
        return Err(AttentionError::ShapeMismatch {
            array: "bias",
            expected: (n, n),
            got: bias.shape(),
        });
    }
    for i in 0..n {
        for (j, &b) in bias.row(i).iter().enumerate() {
            if !(-1e-9..=1.0 + 1e-9).contains(&b) {
                return Err(AttentionError::BiasOutOfRange { i, j, value: b });
            }
        }
    }
    let mut weights = input.q.matmul_transpose_b(&input.k);
    weights.scale(1.0 / (input.d() as f64).sqrt());
    softmax_rows_in_place(&mut weights);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let row = weights.row_mut(i);
        for (w, &b) in row.iter_mut().zip(bias.row(i)) {
            *w *= b;
        }
        if renormalize {
            let sum: f64 = row.iter().sum();
            if sum < DEGENERATE_EPS {
                degenerate.push(i);
                row.fill(0.0);
            } else {
                for w in row.iter_mut() {
                    *w /= sum;
                }
            }
        }
    }
    let out = weights.matmul(&input.v);
    Ok(AttentionOutput {
        out,
        attn: Some(weights),
        degenerate_rows: degenerate,
    })
}

/// softmax(Q (P_K K)^T / sqrt(d)) (P_V V): keys and values are first
/// projected down to k rows, so only N x k weights ever exist.
pub fn linformer_attention(
    input: &AttentionInput,
    proj: &ProjectionPair,
) -> Result<AttentionOutput, AttentionError> {
    if proj.n() != input.n() {
        return Err(AttentionError::ShapeMismatch {
            array: "P_K",
            expected: (proj.k(), input.n()),
            got: proj.p_k.shape(),
        });
    }
    let kp = proj.p_k.matmul(&input.k);
    let vp = proj.p_v.matmul(&input.v);
    let mut scores = input.q.matmul_transpose_b(&kp);
    scores.scale(1.0 / (input.d() as f64).sqrt());
    softmax_rows_in_place(&mut scores);
    let out = scores.matmul(&vp);
    Ok(AttentionOutput {
        out,
        attn: Some(scores),
        degenerate_rows: Vec::new(),
    })
}

/// ReLU feature map, optionally stacked with bias-expansion multipliers:
/// block n of the query features is g_n[i] * ReLU(Q_i), and of the key
/// features h_n[j] * ReLU(K_j), so the feature dot product equals
/// B_ij * (ReLU(Q_i) . ReLU(K_j)).
fn cosformer_features(
    input: &AttentionInput,
    expansion: Option<&FeatureExpansion>,
) -> Result<(Matrix, Matrix), AttentionError> {
    let relu = |v: f64| v.max(0.0);
    let fq = input.q.map(relu);
    let fk = input.k.map(relu);
    match expansion {
        None => Ok((fq, fk)),
        Some(exp) => {
            let n = input.n();
            if exp.seq_len() != n {
                return Err(AttentionError::ExpansionLength {
                    expected: n,
                    got: exp.seq_len(),
                });
            }
            let d = input.d();
            let t = exp.num_terms();
            let mut sq = Matrix::zeros(n, t * d);
            let mut sk = Matrix::zeros(n, t * d);
            for i in 0..n {
                for (b, term) in exp.terms().iter().enumerate() {
                    for c in 0..d {
                        sq.set(i, b * d + c, term.g[i] * fq.get(i, c));
                        sk.set(i, b * d + c, term.h[i] * fk.get(i, c));
                    }
                }
            }
            Ok((sq, sk))
        }
    }
}

/// Shared linear-attention core: out_i = (F_Q[i] . Z) / (F_Q[i] . z) with
/// Z = F_K^T V and z = F_K^T 1, both accumulated once.
fn linear_attention_core(fq: &Matrix, fk: &Matrix, v: &Matrix) -> (Matrix, Vec<usize>) {
    let agg = fk.matmul_transpose_a(v); // D x d_v
    let key_mass = fk.col_sums(); // 1 x D
    let mut out = Matrix::zeros(fq.rows(), v.cols());
    let mut degenerate = Vec::new();
    for i in 0..fq.rows() {
        let qrow = fq.row(i);
        let den: f64 = qrow.iter().zip(key_mass.row(0)).map(|(a, b)| a * b).sum();
        if den < DEGENERATE_EPS {
            degenerate.push(i);
            continue;
        }
        let orow = out.row_mut(i);
        for (c, &qc) in qrow.iter().enumerate() {
            if qc == 0.0 {
                continue;
            }
            for (o, &z) in orow.iter_mut().zip(agg.row(c)) {
                *o += qc * z;
            }
        }
        for o in orow.iter_mut() {
            *o /= den;
        }
    }
    (out, degenerate)
}

/// Kernelized linear attention: similarity ReLU(Q_i) . ReLU(K_j), rows
/// normalized by their total mass, computed by aggregating the key/value
/// side first so cost is O(N d^2) (times the number of expansion terms
/// when a separable bias is folded in). No N x N array is formed.
pub fn cosformer_attention(
    input: &AttentionInput,
    expansion: Option<&FeatureExpansion>,
) -> Result<AttentionOutput, AttentionError> {
    let (fq, fk) = cosformer_features(input, expansion)?;
    let (out, degenerate_rows) = linear_attention_core(&fq, &fk, &input.v);
    Ok(AttentionOutput {
        out,
        attn: None,
        degenerate_rows,
    })
}

pub fn attention_forward(
    variant: AttentionVariant<'_>,
    input: &AttentionInput,
) -> Result<AttentionOutput, AttentionError> {
    match variant {
        AttentionVariant::Full => Ok(full_attention(input)),
        AttentionVariant::Biased { bias, renormalize } => {
            biased_full_attention(input, bias, renormalize)
        }
        AttentionVariant::Linformer { proj } => linformer_attention(input, proj),
        AttentionVariant::Cosformer { expansion } => cosformer_attention(input, expansion),
    }
}

/// Row-wise softmax backward: given dL/dA and A = softmax(S), returns
/// dL/dS where dS_ij = A_ij (dA_ij - sum_k dA_ik A_ik). Consumes `da` in
/// place.
fn softmax_backward_in_place(da: &mut Matrix, a: &Matrix) {
    for i in 0..a.rows() {
        let arow = a.row(i);
        let grow = da.row_mut(i);
        let inner: f64 = grow.iter().zip(arow).map(|(g, w)| g * w).sum();
        for (g, &w) in grow.iter_mut().zip(arow) {
            *g = w * (*g - inner);
        }
    }
}

pub fn attention_backward(
    variant: AttentionVariant<'_>,
    input: &AttentionInput,
    upstream: &Matrix,
) -> Result<AttentionGrads, AttentionError> {
    if upstream.shape() != input.v.shape() {
        return Err(AttentionError::ShapeMismatch {
            array: "upstream",
            expected: input.v.shape(),
            got: upstream.shape(),
        });
    }
    let scale = 1.0 / (input.d() as f64).sqrt();
    match variant {
        AttentionVariant::Full => {
            let attn = full_attention(input).attn.expect("full path has weights");
            let dv = attn.matmul_transpose_a(upstream);
            let mut ds = upstream.matmul_transpose_b(&input.v); // dA
            softmax_backward_in_place(&mut ds, &attn);
            let mut dq = ds.matmul(&input.k);
            dq.scale(scale);
            let mut dk = ds.matmul_transpose_a(&input.q);
            dk.scale(scale);
            Ok(AttentionGrads {
                dq,
                dk,
                dv,
                dp_k: None,
                dp_v: None,
            })
        }
        AttentionVariant::Biased { bias, renormalize } => {
            // Recompute the pre-bias softmax A, the biased W = A ⊙ B, and
            // (when renormalizing) the row masses.
            let mut a = input.q.matmul_transpose_b(&input.k);
            a.scale(scale);
            softmax_rows_in_place(&mut a);
            let w = a.hadamard(bias);
            let result = biased_full_attention(input, bias, renormalize)?;
            let final_weights = result.attn.expect("biased path has weights");
            let dv = final_weights.matmul_transpose_a(upstream);
            let mut dw = upstream.matmul_transpose_b(&input.v); // d final weights
            if renormalize {
                // final_i = w_i / r_i with r_i its row sum, so
                // dW_ij = (dFinal_ij - sum_k dFinal_ik Final_ik) / r_i.
                for i in 0..w.rows() {
                    if result.degenerate_rows.contains(&i) {
                        dw.row_mut(i).fill(0.0);
                        continue;
                    }
                    let r: f64 = w.row(i).iter().sum();
                    let frow = final_weights.row(i);
                    let grow = dw.row_mut(i);
                    let inner: f64 = grow.iter().zip(frow).map(|(g, f)| g * f).sum();
                    for g in grow.iter_mut() {
                        *g = (*g - inner) / r;
                    }
                }
            }
            let mut ds = dw.hadamard(bias); // dA
            softmax_backward_in_place(&mut ds, &a);
            let mut dq = ds.matmul(&input.k);
            dq.scale(scale);
            let mut dk = ds.matmul_transpose_a(&input.q);
            dk.scale(scale);
            Ok(AttentionGrads {
                dq,
                dk,
                dv,
                dp_k: None,
                dp_v: None,
            })
        }
        AttentionVariant::Linformer { proj } => {
            let kp = proj.p_k.matmul(&input.k);
            let vp = proj.p_v.matmul(&input.v);
            let attn = linformer_attention(input, proj)?
                .attn
                .expect("low-rank path has weights");
            let dvp = attn.matmul_transpose_a(upstream); // k x d
            let mut ds = upstream.matmul_transpose_b(&vp); // N x k
            softmax_backward_in_place(&mut ds, &attn);
            let mut dq = ds.matmul(&kp);
            dq.scale(scale);
            let mut dkp = ds.matmul_transpose_a(&input.q); // k x d
            dkp.scale(scale);
            let dk = proj.p_k.matmul_transpose_a(&dkp);
            let dp_k = dkp.matmul_transpose_b(&input.k);
            let dv = proj.p_v.matmul_transpose_a(&dvp);
            let dp_v = dvp.matmul_transpose_b(&input.v);
            Ok(AttentionGrads {
                dq,
                dk,
                dv,
                dp_k: Some(dp_k),
                dp_v: Some(dp_v),
            })
        }
        AttentionVariant::Cosformer { expansion } => {
            let (fq, fk) = cosformer_features(input, expansion)?;
            let (dfq, dfk, dv) = linear_attention_backward(&fq, &fk, &input.v, upstream);
            let (dq_relu, dk_relu) = match expansion {
                None => (dfq, dfk),
                Some(exp) => {
                    // Fold the per-term blocks back onto the shared ReLU
                    // features: dF[i][c] = sum_n mult_n[i] * dPsi[i][n*d+c].
                    let d = input.d();
                    let fold = |dpsi: &Matrix, per_g: bool| {
                        Matrix::from_fn(input.n(), d, |i, c| {
                            exp.terms()
                                .iter()
                                .enumerate()
                                .map(|(b, term)| {
                                    let m = if per_g { term.g[i] } else { term.h[i] };
                                    m * dpsi.get(i, b * d + c)
                                })
                                .sum()
                        })
                    };
                    (fold(&dfq, true), fold(&dfk, false))
                }
            };
            // Chain through ReLU: zero where the pre-activation was <= 0.
            let mask_by = |g: &Matrix, src: &Matrix| {
                Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if src.get(i, j) > 0.0 {
                        g.get(i, j)
                    } else {
                        0.0
                    }
                })
            };
            Ok(AttentionGrads {
                dq: mask_by(&dq_relu, &input.q),
                dk: mask_by(&dk_relu, &input.k),
                dv,
                dp_k: None,
                dp_v: None,
            })
        }
    }
}

/// Backward of [`linear_attention_core`], still linear in N: with
/// Z = F_K^T V, z = F_K^T 1, r_i = F_Q[i].z and out_i = (F_Q[i].Z)/r_i,
/// dZ = F_Q^T R, dz_i-contributions and the rest follow the quotient rule,
/// where R holds upstream rows scaled by 1/r_i (zero for degenerate rows).
fn linear_attention_backward(
    fq: &Matrix,
    fk: &Matrix,
    v: &Matrix,
    upstream: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let n = fq.rows();
    let agg = fk.matmul_transpose_a(v); // Z: D x d_v
    let key_mass = fk.col_sums(); // z: 1 x D
    let mut scaled_up = Matrix::zeros(n, v.cols()); // R
    let mut den_coeff = vec![0.0; n]; // c_i = -(upstream_i . out_i) / r_i
    for i in 0..n {
        let qrow = fq.row(i);
        let den: f64 = qrow.iter().zip(key_mass.row(0)).map(|(a, b)| a * b).sum();
        if den < DEGENERATE_EPS {
            continue;
        }
        // out_i reconstructed on the fly to avoid storing it.
        let mut up_dot_out = 0.0;
        for (c, &qc) in qrow.iter().enumerate() {
            if qc == 0.0 {
                continue;
            }
            let zrow = agg.row(c);
            for (u, &z) in upstream.row(i).iter().zip(zrow) {
                up_dot_out += u * qc * z;
            }
        }
        up_dot_out /= den;
        den_coeff[i] = -up_dot_out / den;
        let srow = scaled_up.row_mut(i);
        for (s, &u) in srow.iter_mut().zip(upstream.row(i)) {
            *s = u / den;
        }
    }
    let dagg = fq.matmul_transpose_a(&scaled_up); // dZ: D x d_v
    let mut dfq = scaled_up.matmul_transpose_b(&agg); // R Z^T: N x D
    for i in 0..n {
        let c = den_coeff[i];
        if c == 0.0 {
            continue;
        }
        for (g, &m) in dfq.row_mut(i).iter_mut().zip(key_mass.row(0)) {
            *g += c * m;
        }
    }
    // dz = sum_i c_i F_Q[i]; dF_K = V dZ^T + 1 (x) dz.
    let mut dkey_mass = vec![0.0; fq.cols()];
    for i in 0..n {
        let c = den_coeff[i];
        if c == 0.0 {
            continue;
        }
        for (dz, &q) in dkey_mass.iter_mut().zip(fq.row(i)) {
            *dz += c * q;
        }
    }
    let _scratch = crate::matrix::probe::ScratchGuard::for_f64(dkey_mass.len() + n);
    let mut dfk = v.matmul_transpose_b(&dagg); // N x D
    for i in 0..n {
        for (g, &dz) in dfk.row_mut(i).iter_mut().zip(&dkey_mass) {
            *g += dz;
        }
    }
    let dv = fk.matmul(&dagg);
    (dfq, dfk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::{dense_bias, expand_separable, BiasPattern, BiasSpec, TokenPosition};
    use crate::matrix::probe;
    use crate::verify::{gradcheck, oracle};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, d: usize, seed: u64) -> AttentionInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionInput::new(
            Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
            Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
            Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
        )
        .unwrap()
    }

    /// Positive inputs keep ReLU away from its kink so finite differences
    /// stay valid, and keep every row non-degenerate.
    fn positive_input(n: usize, d: usize, seed: u64) -> AttentionInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionInput::new(
            Matrix::random_uniform(n, d, 0.1, 1.0, &mut rng),
            Matrix::random_uniform(n, d, 0.1, 1.0, &mut rng),
            Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut q = Matrix::zeros(2, 2);
        q.set(0, 1, f64::NAN);
        let err = AttentionInput::new(q, Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap_err();
        assert_eq!(err, AttentionError::NonFinite { array: "Q" });
    }

    #[test]
    fn zero_queries_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Matrix::random_uniform(3, 2, -1.0, 1.0, &mut rng);
        let v = Matrix::random_uniform(3, 2, -1.0, 1.0, &mut rng);
        let input = AttentionInput::new(Matrix::zeros(3, 2), k, v.clone()).unwrap();
        let out = full_attention(&input).out;
        for i in 0..3 {
            for c in 0..2 {
                let mean = (v.get(0, c) + v.get(1, c) + v.get(2, c)) / 3.0;
                assert_abs_diff_eq!(out.get(i, c), mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_token_is_identity() {
        let input = AttentionInput::new(
            Matrix::from_rows(&[vec![0.3]]),
            Matrix::from_rows(&[vec![-2.0]]),
            Matrix::from_rows(&[vec![5.0]]),
        )
        .unwrap();
        let res = full_attention(&input);
        assert_abs_diff_eq!(res.out.get(0, 0), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(res.attn.unwrap().get(0, 0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn full_matches_bruteforce_oracle() {
        let input = random_input(8, 4, 2);
        let out = full_attention(&input).out;
        let expected = oracle::softmax_attention(input.q(), input.k(), input.v());
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn full_attn_rows_sum_to_one_and_outputs_are_convex() {
        let input = random_input(16, 4, 3);
        let res = full_attention(&input);
        let attn = res.attn.unwrap();
        for i in 0..16 {
            let s: f64 = attn.row(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
            for c in 0..4 {
                let col: Vec<f64> = (0..16).map(|j| input.v().get(j, c)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(res.out.get(i, c) >= lo - 1e-12 && res.out.get(i, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn linformer_identity_collapses_to_full() {
        let input = random_input(12, 4, 4);
        let low_rank = linformer_attention(&input, &ProjectionPair::identity(12)).unwrap();
        let full = full_attention(&input);
        assert!(low_rank.out.max_abs_diff(&full.out) < 1e-12);
    }

    #[test]
    fn linformer_row_selector_projection() {
        // P = [[1, 0]] keeps only key/value row 0, so every query attends
        // to a single row and the output is V_0 everywhere.
        let input = random_input(2, 3, 5);
        let p = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let proj = ProjectionPair::new(p.clone(), p).unwrap();
        let out = linformer_attention(&input, &proj).unwrap().out;
        for i in 0..2 {
            for c in 0..3 {
                assert_abs_diff_eq!(out.get(i, c), input.v().get(0, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linformer_matches_naive_oracle() {
        let input = random_input(16, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let proj = ProjectionPair::random(4, 16, &mut rng).unwrap();
        let out = linformer_attention(&input, &proj).unwrap().out;
        let expected = oracle::linformer_attention(
            input.q(),
            input.k(),
            input.v(),
            proj.p_k(),
            proj.p_v(),
        );
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn linformer_rejects_mismatched_projection() {
        let input = random_input(8, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let proj = ProjectionPair::random(2, 9, &mut rng).unwrap();
        assert!(linformer_attention(&input, &proj).is_err());
    }

    #[test]
    fn cosformer_single_token() {
        let input = AttentionInput::new(
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![5.0]]),
        )
        .unwrap();
        let res = cosformer_attention(&input, None).unwrap();
        assert_abs_diff_eq!(res.out.get(0, 0), 5.0, epsilon = 1e-15);
        assert!(res.degenerate_rows.is_empty());
    }

    #[test]
    fn cosformer_identical_keys_give_equal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let key_row: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
        let k = Matrix::from_rows(&vec![key_row; n]);
        let q = Matrix::random_uniform(n, 3, 0.1, 1.0, &mut rng);
        let v = Matrix::random_uniform(n, 3, -1.0, 1.0, &mut rng);
        let out = cosformer_attention(&AttentionInput::new(q, k, v).unwrap(), None)
            .unwrap()
            .out;
        for i in 1..n {
            for c in 0..3 {
                assert_abs_diff_eq!(out.get(i, c), out.get(0, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cosformer_matches_explicit_oracle() {
        let input = positive_input(12, 3, 10);
        let out = cosformer_attention(&input, None).unwrap().out;
        let (expected, degenerate) =
            oracle::relu_similarity_attention(input.q(), input.k(), input.v(), None);
        assert!(degenerate.is_empty());
        assert!(out.max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn cosformer_zeroes_and_reports_degenerate_rows() {
        let q = Matrix::from_rows(&[vec![-1.0, -0.5], vec![0.5, 0.5]]);
        let k = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 0.9]]);
        let v = Matrix::from_rows(&[vec![3.0, -1.0], vec![2.0, 2.0]]);
        let res =
            cosformer_attention(&AttentionInput::new(q, k, v).unwrap(), None).unwrap();
        assert_eq!(res.degenerate_rows, vec![0]);
        assert_eq!(res.out.row(0), &[0.0, 0.0]);
        assert!(res.out.row(1).iter().all(|v| v.is_finite() && *v != 0.0));
    }

    #[test]
    fn cosformer_with_squircle_expansion_matches_biased_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let positions: Vec<TokenPosition> = (0..n)
            .map(|i| {
                TokenPosition::new(
                    i as f64,
                    rng.random_range(0.0..=1000.0),
                    rng.random_range(0.0..=1000.0),
                )
            })
            .collect();
        let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, positions).unwrap();
        let expansion = expand_separable(&spec).unwrap();
        let input = positive_input(n, 3, 12);
        let out = cosformer_attention(&input, Some(&expansion)).unwrap().out;
        let bias = dense_bias(&spec);
        let (expected, degenerate) =
            oracle::relu_similarity_attention(input.q(), input.k(), input.v(), Some(&bias));
        assert!(degenerate.is_empty());
        assert!(out.max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn cosformer_rejects_wrong_expansion_length() {
        let positions: Vec<TokenPosition> =
            (0..4).map(|i| TokenPosition::new(i as f64, 0.0, 0.0)).collect();
        let spec = BiasSpec::new(BiasPattern::Cosine1d, 4.0, positions).unwrap();
        let expansion = expand_separable(&spec).unwrap();
        let input = positive_input(5, 2, 13);
        assert!(matches!(
            cosformer_attention(&input, Some(&expansion)),
            Err(AttentionError::ExpansionLength { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn biased_all_ones_equals_full() {
        let input = random_input(6, 3, 14);
        let biased =
            biased_full_attention(&input, &Matrix::ones(6, 6), true).unwrap();
        let full = full_attention(&input);
        assert!(biased.out.max_abs_diff(&full.out) < 1e-12);
    }

    #[test]
    fn biased_identity_bias_with_renorm_returns_v() {
        let input = random_input(5, 3, 15);
        let out = biased_full_attention(&input, &Matrix::identity(5), true)
            .unwrap()
            .out;
        assert!(out.max_abs_diff(input.v()) < 1e-12);
    }

    #[test]
    fn biased_matches_loop_oracle_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 9;
        let positions: Vec<TokenPosition> = (0..n)
            .map(|i| {
                TokenPosition::new(
                    i as f64,
                    rng.random_range(0.0..=1000.0),
                    rng.random_range(0.0..=1000.0),
                )
            })
            .collect();
        let bias = dense_bias(&BiasSpec::new(BiasPattern::Squircle, 1000.0, positions).unwrap());
        let input = random_input(n, 4, 17);
        for renorm in [true, false] {
            let out = biased_full_attention(&input, &bias, renorm).unwrap().out;
            let (expected, _) =
                oracle::biased_softmax_attention(input.q(), input.k(), input.v(), &bias, renorm);
            assert!(out.max_abs_diff(&expected) < 1e-12);
        }
    }

    #[test]
    fn biased_rejects_bad_shape_and_range() {
        let input = random_input(4, 2, 18);
        assert!(biased_full_attention(&input, &Matrix::ones(3, 3), true).is_err());
        let mut bias = Matrix::ones(4, 4);
        bias.set(1, 2, 1.5);
        assert!(matches!(
            biased_full_attention(&input, &bias, true),
            Err(AttentionError::BiasOutOfRange { i: 1, j: 2, .. })
        ));
    }

    #[test]
    fn efficient_paths_never_materialize_n_by_n() {
        let n = 64;
        let d = 4;
        let input = positive_input(n, d, 19);
        let nn_bytes = (n * n * 8) as u64;

        probe::reset();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let proj = ProjectionPair::random(8, n, &mut rng).unwrap();
        let _ = linformer_attention(&input, &proj).unwrap();
        let up = Matrix::ones(n, d);
        let _ = attention_backward(AttentionVariant::Linformer { proj: &proj }, &input, &up)
            .unwrap();
        assert!(probe::snapshot().largest_block_bytes < nn_bytes);

        probe::reset();
        let _ = cosformer_attention(&input, None).unwrap();
        let _ = attention_backward(AttentionVariant::Cosformer { expansion: None }, &input, &up)
            .unwrap();
        assert!(probe::snapshot().largest_block_bytes < nn_bytes);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let input = positive_input(5, 3, 21);
        let up = Matrix::zeros(5, 3);
        for variant in [
            AttentionVariant::Full,
            AttentionVariant::Cosformer { expansion: None },
        ] {
            let g = attention_backward(variant, &input, &up).unwrap();
            for m in [&g.dq, &g.dk, &g.dv] {
                assert_eq!(m.max_abs_diff(&Matrix::zeros(5, 3)), 0.0);
            }
        }
    }

    /// Scalar loss <upstream, out> for finite differencing one input slot.
    fn loss_for(
        variant: AttentionVariant<'_>,
        q: &Matrix,
        k: &Matrix,
        v: &Matrix,
        up: &Matrix,
    ) -> f64 {
        let input = AttentionInput::new(q.clone(), k.clone(), v.clone()).unwrap();
        let out = attention_forward(variant, &input).unwrap().out;
        out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
    }

    fn grad_check_variant(variant: AttentionVariant<'_>, input: &AttentionInput, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = Matrix::random_uniform(input.n(), input.d(), -1.0, 1.0, &mut rng);
        let grads = attention_backward(variant, input, &up).unwrap();
        let (q, k, v) = (input.q(), input.k(), input.v());
        let eq = gradcheck::check(
            |x| loss_for(variant, x, k, v, &up),
            q,
            &grads.dq,
            gradcheck::DEFAULT_STEP,
        );
        let ek = gradcheck::check(
            |x| loss_for(variant, q, x, v, &up),
            k,
            &grads.dk,
            gradcheck::DEFAULT_STEP,
        );
        let ev = gradcheck::check(
            |x| loss_for(variant, q, k, x, &up),
            v,
            &grads.dv,
            gradcheck::DEFAULT_STEP,
        );
        assert!(eq < 1e-4, "dQ rel error {eq}");
        assert!(ek < 1e-4, "dK rel error {ek}");
        assert!(ev < 1e-4, "dV rel error {ev}");
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        grad_check_variant(AttentionVariant::Full, &random_input(4, 2, 22), 23);
    }

    #[test]
    fn biased_backward_matches_finite_differences() {
        let n = 5;
        let positions: Vec<TokenPosition> = (0..n)
            .map(|i| TokenPosition::new(i as f64, (i * 200) as f64, ((n - i) * 150) as f64))
            .collect();
        let bias = dense_bias(&BiasSpec::new(BiasPattern::Cross, 1000.0, positions).unwrap());
        let input = random_input(n, 2, 24);
        for renorm in [true, false] {
            grad_check_variant(
                AttentionVariant::Biased {
                    bias: &bias,
                    renormalize: renorm,
                },
                &input,
                25,
            );
        }
    }

    #[test]
    fn linformer_backward_matches_finite_differences() {
        let input = random_input(6, 2, 26);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let proj = ProjectionPair::random(3, 6, &mut rng).unwrap();
        let variant = AttentionVariant::Linformer { proj: &proj };
        grad_check_variant(variant, &input, 28);

        // Projection gradients get their own finite-difference pass.
        let up = Matrix::random_uniform(6, 2, -1.0, 1.0, &mut rng);
        let grads = attention_backward(variant, &input, &up).unwrap();
        let loss_pk = |x: &Matrix| {
            let p = ProjectionPair::new(x.clone(), proj.p_v().clone()).unwrap();
            let out = linformer_attention(&input, &p).unwrap().out;
            out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let e = gradcheck::check(
            loss_pk,
            proj.p_k(),
            grads.dp_k.as_ref().unwrap(),
            gradcheck::DEFAULT_STEP,
        );
        assert!(e < 1e-4, "dP_K rel error {e}");
        let loss_pv = |x: &Matrix| {
            let p = ProjectionPair::new(proj.p_k().clone(), x.clone()).unwrap();
            let out = linformer_attention(&input, &p).unwrap().out;
            out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let e = gradcheck::check(
            loss_pv,
            proj.p_v(),
            grads.dp_v.as_ref().unwrap(),
            gradcheck::DEFAULT_STEP,
        );
        assert!(e < 1e-4, "dP_V rel error {e}");
    }

    #[test]
    fn cosformer_backward_matches_finite_differences() {
        grad_check_variant(
            AttentionVariant::Cosformer { expansion: None },
            &positive_input(6, 2, 29),
            30,
        );
    }

    #[test]
    fn cosformer_expansion_backward_matches_finite_differences() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let positions: Vec<TokenPosition> = (0..n)
            .map(|i| {
                TokenPosition::new(
                    i as f64,
                    rng.random_range(0.0..=1000.0),
                    rng.random_range(0.0..=1000.0),
                )
            })
            .collect();
        let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, positions).unwrap();
        let expansion = expand_separable(&spec).unwrap();
        grad_check_variant(
            AttentionVariant::Cosformer {
                expansion: Some(&expansion),
            },
            &positive_input(n, 2, 32),
            33,
        );
    }

    #[test]
    fn degenerate_rows_blocked_from_gradient_flow() {
        // Row 0 of Q is all-negative: its output is pinned at zero, so no
        // gradient may reach it and finite differences agree (the zero
        // region is flat).
        let q = Matrix::from_rows(&[vec![-0.5, -0.9], vec![0.4, 0.6], vec![0.7, 0.3]]);
        let k = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.2, 0.8], vec![0.9, 0.4]]);
        let v = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![-0.25, 0.75]]);
        let input = AttentionInput::new(q, k, v).unwrap();
        let up = Matrix::ones(3, 2);
        let grads =
            attention_backward(AttentionVariant::Cosformer { expansion: None }, &input, &up)
                .unwrap();
        assert_eq!(grads.dq.row(0), &[0.0, 0.0]);
        grad_check_variant(AttentionVariant::Cosformer { expansion: None }, &input, 34);
    }
}
