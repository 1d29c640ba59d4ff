//! Named equivalence and gradient suites behind the `verify` subcommand.
//!
//! Each check compares a production kernel against the naive oracles in
//! [`super::oracle`] or against finite differences, and reports pass/fail
//! with a diagnostic instead of panicking, so a run always produces the
//! full list.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradcheck, oracle};
use crate::attention::{
    attention_backward, attention_forward, biased_full_attention, cosformer_attention,
    full_attention, linformer_attention, AttentionInput, AttentionVariant, ProjectionPair,
};
use crate::bias::{
    approximate_cross_expansion, dense_bias, expand_separable, BiasPattern, BiasSpec,
    TokenPosition,
};
use crate::matrix::{probe, Matrix};

/// Deliberate kernel perturbations, used to prove the suites detect a
/// broken kernel. All zeros in normal operation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KernelOverrides {
    /// Added to every full-attention output entry before comparison.
    pub full_output_shift: f64,
    /// Added to every cosformer output entry before comparison.
    pub cosformer_output_shift: f64,
    /// Added to every analytic dQ entry before finite-difference checks.
    pub dq_shift: f64,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let passed = self.checks.iter().filter(|c| c.passed).count();
        writeln!(f, "{} suite: {passed}/{} checks passed", self.suite, self.checks.len())?;
        for check in &self.checks {
            if check.passed {
                writeln!(f, "  ok   {}", check.name)?;
            } else {
                writeln!(f, "  FAIL {} — {}", check.name, check.detail)?;
            }
        }
        Ok(())
    }
}

fn run_case(
    checks: &mut Vec<CheckOutcome>,
    name: &'static str,
    f: impl FnOnce() -> Result<(), String>,
) {
    let result = catch_unwind(AssertUnwindSafe(f));
    let (passed, detail) = match result {
        Ok(Ok(())) => (true, String::new()),
        Ok(Err(detail)) => (false, detail),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".to_string());
            (false, format!("panicked: {msg}"))
        }
    };
    checks.push(CheckOutcome {
        name,
        passed,
        detail,
    });
}

fn ensure(cond: bool, detail: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail())
    }
}

fn random_input(n: usize, d: usize, rng: &mut ChaCha8Rng) -> AttentionInput {
    AttentionInput::new(
        Matrix::random_uniform(n, d, -1.0, 1.0, rng),
        Matrix::random_uniform(n, d, -1.0, 1.0, rng),
        Matrix::random_uniform(n, d, -1.0, 1.0, rng),
    )
    .expect("random input is valid")
}

fn positive_input(n: usize, d: usize, rng: &mut ChaCha8Rng) -> AttentionInput {
    AttentionInput::new(
        Matrix::random_uniform(n, d, 0.05, 1.0, rng),
        Matrix::random_uniform(n, d, 0.05, 1.0, rng),
        Matrix::random_uniform(n, d, -1.0, 1.0, rng),
    )
    .expect("random input is valid")
}

fn random_layout(n: usize, rng: &mut ChaCha8Rng) -> Vec<TokenPosition> {
    (0..n)
        .map(|i| {
            TokenPosition::new(
                i as f64,
                rng.random_range(0.0..=1000.0),
                rng.random_range(0.0..=1000.0),
            )
        })
        .collect()
}

/// Oracle-equivalence and invariant checks for the attention kernels and
/// the bias constructions.
pub fn run_equivalence_suite(overrides: &KernelOverrides) -> SuiteReport {
    let o = *overrides;
    let mut checks = Vec::new();

    run_case(&mut checks, "full attention vs brute-force softmax oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..25 {
            let n = rng.random_range(1..=32);
            let d = rng.random_range(1..=8);
            let input = random_input(n, d, &mut rng);
            let mut out = full_attention(&input).out;
            if o.full_output_shift != 0.0 {
                out = out.map(|v| v + o.full_output_shift);
            }
            let want = oracle::softmax_attention(input.q(), input.k(), input.v());
            let diff = out.max_abs_diff(&want);
            ensure(diff <= 1e-12, || {
                format!("case {case} (N={n}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "full attention rows sum to 1 and outputs stay convex", || {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..25 {
            let n = rng.random_range(2..=32);
            let d = rng.random_range(1..=8);
            let input = random_input(n, d, &mut rng);
            let res = full_attention(&input);
            let attn = res.attn.as_ref().expect("full path keeps weights");
            for i in 0..n {
                let s: f64 = attn.row(i).iter().sum();
                ensure((s - 1.0).abs() <= 1e-9, || {
                    format!("row {i} sums to {s}")
                })?;
                for c in 0..d {
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for j in 0..n {
                        lo = lo.min(input.v().get(j, c));
                        hi = hi.max(input.v().get(j, c));
                    }
                    let got = res.out.get(i, c);
                    ensure(got >= lo - 1e-12 && got <= hi + 1e-12, || {
                        format!("out[{i}][{c}] = {got} outside V column range [{lo}, {hi}]")
                    })?;
                }
            }
        }
        Ok(())
    });

    run_case(&mut checks, "linformer identity projection collapses to full attention", || {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for case in 0..100 {
            let n = rng.random_range(1..=32);
            let d = rng.random_range(1..=8);
            let input = random_input(n, d, &mut rng);
            let low = linformer_attention(&input, &ProjectionPair::identity(n))
                .map_err(|e| e.to_string())?;
            let full = full_attention(&input);
            let diff = low.out.max_abs_diff(&full.out);
            ensure(diff <= 1e-12, || {
                format!("case {case} (N={n}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "linformer vs naive projected-softmax oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        for case in 0..25 {
            let n = rng.random_range(2..=32);
            let k = rng.random_range(1..=n);
            let d = rng.random_range(1..=8);
            let input = random_input(n, d, &mut rng);
            let proj = ProjectionPair::random(k, n, &mut rng).map_err(|e| e.to_string())?;
            let out = linformer_attention(&input, &proj)
                .map_err(|e| e.to_string())?
                .out;
            let want = oracle::linformer_attention(
                input.q(),
                input.k(),
                input.v(),
                proj.p_k(),
                proj.p_v(),
            );
            let diff = out.max_abs_diff(&want);
            ensure(diff <= 1e-12, || {
                format!("case {case} (N={n}, k={k}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "cosformer vs explicit ReLU-similarity oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        for case in 0..50 {
            let n = rng.random_range(1..=64);
            let d = rng.random_range(1..=16);
            let input = positive_input(n, d, &mut rng);
            let res = cosformer_attention(&input, None).map_err(|e| e.to_string())?;
            let mut out = res.out;
            if o.cosformer_output_shift != 0.0 {
                out = out.map(|v| v + o.cosformer_output_shift);
            }
            let (want, degenerate) =
                oracle::relu_similarity_attention(input.q(), input.k(), input.v(), None);
            ensure(res.degenerate_rows == degenerate, || {
                format!("case {case}: degenerate rows disagree with oracle")
            })?;
            let diff = out.max_abs_diff(&want);
            ensure(diff <= 1e-10, || {
                format!("case {case} (N={n}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "cosformer degenerate rows zeroed and reported", || {
        // Mixed-sign queries so some rows die after ReLU.
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let mut saw_degenerate = false;
        for _ in 0..50 {
            let n = rng.random_range(2..=24);
            let d = rng.random_range(1..=4);
            let q = Matrix::random_uniform(n, d, -1.0, 0.4, &mut rng);
            let k = Matrix::random_uniform(n, d, 0.0, 1.0, &mut rng);
            let v = Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng);
            let input = AttentionInput::new(q, k, v).expect("valid");
            let res = cosformer_attention(&input, None).map_err(|e| e.to_string())?;
            let (want, degenerate) =
                oracle::relu_similarity_attention(input.q(), input.k(), input.v(), None);
            ensure(res.degenerate_rows == degenerate, || {
                "degenerate rows disagree with oracle".to_string()
            })?;
            saw_degenerate |= !degenerate.is_empty();
            for &i in &res.degenerate_rows {
                ensure(res.out.row(i).iter().all(|&v| v == 0.0), || {
                    format!("degenerate row {i} not zeroed")
                })?;
            }
            ensure(res.out.max_abs_diff(&want) <= 1e-10, || {
                "output disagrees with oracle".to_string()
            })?;
        }
        ensure(saw_degenerate, || {
            "fixture never produced a degenerate row".to_string()
        })
    });

    run_case(&mut checks, "cosformer with cosine1d expansion vs biased oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        for case in 0..25 {
            let n = rng.random_range(2..=48);
            let d = rng.random_range(1..=8);
            let positions: Vec<TokenPosition> =
                (0..n).map(|i| TokenPosition::new(i as f64, 0.0, 0.0)).collect();
            let spec = BiasSpec::new(BiasPattern::Cosine1d, n as f64, positions)
                .map_err(|e| e.to_string())?;
            let expansion = expand_separable(&spec).map_err(|e| e.to_string())?;
            let input = positive_input(n, d, &mut rng);
            let out = cosformer_attention(&input, Some(&expansion))
                .map_err(|e| e.to_string())?
                .out;
            let bias = dense_bias(&spec);
            let (want, _) =
                oracle::relu_similarity_attention(input.q(), input.k(), input.v(), Some(&bias));
            let diff = out.max_abs_diff(&want);
            ensure(diff <= 1e-10, || {
                format!("case {case} (N={n}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "cosformer with squircle expansion vs biased oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        for case in 0..25 {
            let n = rng.random_range(2..=48);
            let d = rng.random_range(1..=8);
            let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, random_layout(n, &mut rng))
                .map_err(|e| e.to_string())?;
            let expansion = expand_separable(&spec).map_err(|e| e.to_string())?;
            ensure(expansion.num_terms() == 4, || {
                format!("squircle expansion has {} terms, expected 4", expansion.num_terms())
            })?;
            let input = positive_input(n, d, &mut rng);
            let out = cosformer_attention(&input, Some(&expansion))
                .map_err(|e| e.to_string())?
                .out;
            let bias = dense_bias(&spec);
            let (want, _) =
                oracle::relu_similarity_attention(input.q(), input.k(), input.v(), Some(&bias));
            let diff = out.max_abs_diff(&want);
            ensure(diff <= 1e-10, || {
                format!("case {case} (N={n}, d={d}): max abs diff {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "biased full attention vs naive loop oracle (both modes)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        for case in 0..25 {
            let n = rng.random_range(2..=24);
            let d = rng.random_range(1..=8);
            let pattern = if case % 2 == 0 {
                BiasPattern::Squircle
            } else {
                BiasPattern::Cross
            };
            let spec = BiasSpec::new(pattern, 1000.0, random_layout(n, &mut rng))
                .map_err(|e| e.to_string())?;
            let bias = dense_bias(&spec);
            let input = random_input(n, d, &mut rng);
            for renorm in [true, false] {
                let out = biased_full_attention(&input, &bias, renorm)
                    .map_err(|e| e.to_string())?
                    .out;
                let (want, _) = oracle::biased_softmax_attention(
                    input.q(),
                    input.k(),
                    input.v(),
                    &bias,
                    renorm,
                );
                let diff = out.max_abs_diff(&want);
                ensure(diff <= 1e-12, || {
                    format!("case {case} renorm={renorm}: max abs diff {diff:.3e}")
                })?;
            }
        }
        Ok(())
    });

    run_case(&mut checks, "biased attention with all-ones bias equals full attention", || {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let input = random_input(16, 4, &mut rng);
        let biased = biased_full_attention(&input, &Matrix::ones(16, 16), true)
            .map_err(|e| e.to_string())?;
        let diff = biased.out.max_abs_diff(&full_attention(&input).out);
        ensure(diff <= 1e-12, || format!("max abs diff {diff:.3e}"))
    });

    run_case(&mut checks, "efficient paths never allocate an NxN buffer", || {
        let n = 128;
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let input = positive_input(n, d, &mut rng);
        let up = Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng);
        let nn_bytes = (n * n * 8) as u64;

        probe::reset();
        let proj = ProjectionPair::random(16, n, &mut rng).map_err(|e| e.to_string())?;
        linformer_attention(&input, &proj).map_err(|e| e.to_string())?;
        attention_backward(AttentionVariant::Linformer { proj: &proj }, &input, &up)
            .map_err(|e| e.to_string())?;
        let largest = probe::snapshot().largest_block_bytes;
        ensure(largest < nn_bytes, || {
            format!("low-rank path allocated a {largest}-byte block (NxN = {nn_bytes})")
        })?;

        probe::reset();
        let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, random_layout(n, &mut rng))
            .map_err(|e| e.to_string())?;
        let expansion = expand_separable(&spec).map_err(|e| e.to_string())?;
        cosformer_attention(&input, Some(&expansion)).map_err(|e| e.to_string())?;
        attention_backward(
            AttentionVariant::Cosformer {
                expansion: Some(&expansion),
            },
            &input,
            &up,
        )
        .map_err(|e| e.to_string())?;
        let largest = probe::snapshot().largest_block_bytes;
        ensure(largest < nn_bytes, || {
            format!("linear path allocated a {largest}-byte block (NxN = {nn_bytes})")
        })
    });

    run_case(&mut checks, "bias matrices live in [0,1] with unit diagonal and symmetry", || {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        for case in 0..100 {
            let n = rng.random_range(2..=24);
            let layout = random_layout(n, &mut rng);
            for pattern in [
                BiasPattern::None,
                BiasPattern::Cosine1d,
                BiasPattern::Squircle,
                BiasPattern::Cross,
            ] {
                let m = if pattern == BiasPattern::Cosine1d {
                    n as f64
                } else {
                    1000.0
                };
                let spec = BiasSpec::new(pattern, m, layout.clone())
                    .map_err(|e| e.to_string())?;
                let b = dense_bias(&spec);
                for i in 0..n {
                    ensure((b.get(i, i) - 1.0).abs() <= 1e-12, || {
                        format!("case {case} {pattern}: diagonal {i} = {}", b.get(i, i))
                    })?;
                    for j in 0..n {
                        let v = b.get(i, j);
                        ensure((-1e-12..=1.0 + 1e-12).contains(&v), || {
                            format!("case {case} {pattern}: B[{i}][{j}] = {v}")
                        })?;
                        ensure((v - b.get(j, i)).abs() <= 1e-12, || {
                            format!("case {case} {pattern}: asymmetric at ({i}, {j})")
                        })?;
                    }
                }
            }
        }
        Ok(())
    });

    run_case(&mut checks, "cross dominates squircle; surrogate dominates cross", || {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        for case in 0..50 {
            let n = rng.random_range(2..=24);
            let layout = random_layout(n, &mut rng);
            let squircle = dense_bias(
                &BiasSpec::new(BiasPattern::Squircle, 1000.0, layout.clone())
                    .map_err(|e| e.to_string())?,
            );
            let cross_spec = BiasSpec::new(BiasPattern::Cross, 1000.0, layout)
                .map_err(|e| e.to_string())?;
            let cross = dense_bias(&cross_spec);
            let surrogate = approximate_cross_expansion(&cross_spec)
                .map_err(|e| e.to_string())?
                .expansion
                .reconstruct();
            for i in 0..n {
                for j in 0..n {
                    ensure(cross.get(i, j) >= squircle.get(i, j) - 1e-12, || {
                        format!("case {case}: cross < squircle at ({i}, {j})")
                    })?;
                    ensure(surrogate.get(i, j) >= cross.get(i, j) - 1e-12, || {
                        format!("case {case}: surrogate < cross at ({i}, {j})")
                    })?;
                }
            }
        }
        Ok(())
    });

    run_case(&mut checks, "separable expansions reconstruct the dense bias", || {
        let mut rng = ChaCha8Rng::seed_from_u64(114);
        for &n in &[4usize, 32, 256] {
            let layout = random_layout(n, &mut rng);
            let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, layout)
                .map_err(|e| e.to_string())?;
            let diff = expand_separable(&spec)
                .map_err(|e| e.to_string())?
                .reconstruct()
                .max_abs_diff(&dense_bias(&spec));
            ensure(diff <= 1e-12, || {
                format!("squircle N={n}: reconstruction off by {diff:.3e}")
            })?;

            let positions: Vec<TokenPosition> =
                (0..n).map(|i| TokenPosition::new(i as f64, 0.0, 0.0)).collect();
            let spec = BiasSpec::new(BiasPattern::Cosine1d, n as f64, positions)
                .map_err(|e| e.to_string())?;
            let exp = expand_separable(&spec).map_err(|e| e.to_string())?;
            ensure(exp.num_terms() == 2, || {
                format!("cosine1d expansion has {} terms, expected 2", exp.num_terms())
            })?;
            let diff = exp.reconstruct().max_abs_diff(&dense_bias(&spec));
            ensure(diff <= 1e-12, || {
                format!("cosine1d N={n}: reconstruction off by {diff:.3e}")
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "squircle bias non-increasing in |dx| at fixed dy", || {
        for dy in [0.0, 300.0, 750.0] {
            let mut prev = f64::INFINITY;
            for step in 0..=20 {
                let dx = step as f64 * 50.0;
                let pos = vec![
                    TokenPosition::new(0.0, 0.0, 0.0),
                    TokenPosition::new(1.0, dx, dy),
                ];
                let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, pos)
                    .map_err(|e| e.to_string())?;
                let v = dense_bias(&spec).get(0, 1);
                ensure(v <= prev + 1e-12, || {
                    format!("bias rose from {prev} to {v} at dx={dx}, dy={dy}")
                })?;
                prev = v;
            }
        }
        Ok(())
    });

    run_case(&mut checks, "cross surrogate error is reported exactly", || {
        let mut rng = ChaCha8Rng::seed_from_u64(115);
        let spec = BiasSpec::new(BiasPattern::Cross, 1000.0, random_layout(64, &mut rng))
            .map_err(|e| e.to_string())?;
        let approx = approximate_cross_expansion(&spec).map_err(|e| e.to_string())?;
        let dense = dense_bias(&spec);
        let recon = approx.expansion.reconstruct();
        let mut brute = 0.0f64;
        for i in 0..64 {
            for j in 0..64 {
                brute = brute.max((recon.get(i, j) - dense.get(i, j)).abs());
            }
        }
        ensure((approx.max_error - brute).abs() <= 1e-15, || {
            format!("reported {} vs brute-force {}", approx.max_error, brute)
        })?;

        // Analytic worst direction: dx = dy = 500, M = 1000.
        let pos = vec![
            TokenPosition::new(0.0, 0.0, 0.0),
            TokenPosition::new(1.0, 500.0, 500.0),
        ];
        let spec = BiasSpec::new(BiasPattern::Cross, 1000.0, pos).map_err(|e| e.to_string())?;
        let approx = approximate_cross_expansion(&spec).map_err(|e| e.to_string())?;
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let want = 2.0 * c - c * c - c;
        ensure((approx.max_error - want).abs() <= 1e-12, || {
            format!("worst-direction error {} != {want}", approx.max_error)
        })
    });

    SuiteReport {
        suite: "equivalence",
        checks,
    }
}

fn scalar_loss(
    variant: AttentionVariant<'_>,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    up: &Matrix,
) -> f64 {
    let input = AttentionInput::new(q.clone(), k.clone(), v.clone()).expect("valid input");
    let out = attention_forward(variant, &input).expect("forward pass").out;
    out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
}

fn check_variant(
    variant: AttentionVariant<'_>,
    input: &AttentionInput,
    seed: u64,
    dq_shift: f64,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let up = Matrix::random_uniform(input.n(), input.d(), -1.0, 1.0, &mut rng);
    let grads = attention_backward(variant, input, &up).map_err(|e| e.to_string())?;
    let dq = if dq_shift != 0.0 {
        grads.dq.map(|v| v + dq_shift)
    } else {
        grads.dq.clone()
    };
    let (q, k, v) = (input.q(), input.k(), input.v());
    let eq = gradcheck::check(
        |x| scalar_loss(variant, x, k, v, &up),
        q,
        &dq,
        gradcheck::DEFAULT_STEP,
    );
    if eq > 1e-4 {
        return Err(format!("dQ rel error {eq:.3e}"));
    }
    let ek = gradcheck::check(
        |x| scalar_loss(variant, q, x, v, &up),
        k,
        &grads.dk,
        gradcheck::DEFAULT_STEP,
    );
    if ek > 1e-4 {
        return Err(format!("dK rel error {ek:.3e}"));
    }
    let ev = gradcheck::check(
        |x| scalar_loss(variant, q, k, x, &up),
        v,
        &grads.dv,
        gradcheck::DEFAULT_STEP,
    );
    if ev > 1e-4 {
        return Err(format!("dV rel error {ev:.3e}"));
    }
    Ok(())
}

/// Finite-difference checks for every backward pass.
pub fn run_gradient_suite(overrides: &KernelOverrides) -> SuiteReport {
    let o = *overrides;
    let mut checks = Vec::new();

    run_case(&mut checks, "full attention backward vs finite differences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(201);
        let input = random_input(5, 3, &mut rng);
        check_variant(AttentionVariant::Full, &input, 202, o.dq_shift)
    });

    run_case(&mut checks, "biased attention backward vs finite differences (both modes)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(203);
        let spec = BiasSpec::new(BiasPattern::Cross, 1000.0, random_layout(5, &mut rng))
            .map_err(|e| e.to_string())?;
        let bias = dense_bias(&spec);
        let input = random_input(5, 3, &mut rng);
        for renorm in [true, false] {
            check_variant(
                AttentionVariant::Biased {
                    bias: &bias,
                    renormalize: renorm,
                },
                &input,
                204,
                0.0,
            )?;
        }
        Ok(())
    });

    run_case(&mut checks, "linformer backward vs finite differences (incl. projections)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(205);
        let input = random_input(6, 3, &mut rng);
        let proj = ProjectionPair::random(3, 6, &mut rng).map_err(|e| e.to_string())?;
        check_variant(AttentionVariant::Linformer { proj: &proj }, &input, 206, 0.0)?;
        let up = Matrix::random_uniform(6, 3, -1.0, 1.0, &mut rng);
        let grads = attention_backward(
            AttentionVariant::Linformer { proj: &proj },
            &input,
            &up,
        )
        .map_err(|e| e.to_string())?;
        for (name, analytic, is_pk) in [
            ("dP_K", grads.dp_k.as_ref().unwrap(), true),
            ("dP_V", grads.dp_v.as_ref().unwrap(), false),
        ] {
            let base = if is_pk { proj.p_k() } else { proj.p_v() };
            let numeric = gradcheck::numeric_gradient(
                |x| {
                    let p = if is_pk {
                        ProjectionPair::new(x.clone(), proj.p_v().clone())
                    } else {
                        ProjectionPair::new(proj.p_k().clone(), x.clone())
                    }
                    .expect("valid projection");
                    let out = linformer_attention(&input, &p).expect("forward").out;
                    out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
                },
                base,
                gradcheck::DEFAULT_STEP,
            );
            let err = gradcheck::max_rel_error(analytic, &numeric);
            ensure(err <= 1e-4, || format!("{name} rel error {err:.3e}"))?;
        }
        Ok(())
    });

    run_case(&mut checks, "cosformer backward vs finite differences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(207);
        let input = positive_input(6, 3, &mut rng);
        check_variant(
            AttentionVariant::Cosformer { expansion: None },
            &input,
            208,
            o.dq_shift,
        )
    });

    run_case(&mut checks, "cosformer expansion backward vs finite differences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(209);
        let spec = BiasSpec::new(BiasPattern::Squircle, 1000.0, random_layout(6, &mut rng))
            .map_err(|e| e.to_string())?;
        let expansion = expand_separable(&spec).map_err(|e| e.to_string())?;
        let input = positive_input(6, 2, &mut rng);
        check_variant(
            AttentionVariant::Cosformer {
                expansion: Some(&expansion),
            },
            &input,
            210,
            0.0,
        )
    });

    run_case(&mut checks, "two-layer encoder end-to-end vs finite differences", || {
        use crate::data::bieso::Tag;
        use crate::data::chunk::Chunk;
        use crate::model::{AttentionKind, HeadKind, Model, ModelConfig};
        let cfg = ModelConfig {
            vocab_size: 12,
            d_model: 8,
            heads: 2,
            layers: 2,
            n_max: 6,
            attention: AttentionKind::Full,
            bias: BiasPattern::Squircle,
            coord_vocab: 7,
            page_vocab: 3,
            classes: vec!["f".to_string()],
        };
        let mut model = Model::new(cfg, 301).map_err(|e| e.to_string())?;
        // Scale parameters up so activations sit far from any kink at the
        // probe step.
        for i in 0..model.num_params() {
            model.param_mut(i).scale(4.0);
        }
        let n = 5;
        let chunk = Chunk {
            doc_id: "grad".to_string(),
            offset: 0,
            ids: vec![3, 4, 5, 6, 3],
            continuation: vec![false; n],
            page: vec![0, 0, 1, 1, 2],
            boxes: (0..n as i64)
                .map(|i| {
                    let x0 = i % 3;
                    let y0 = i % 2;
                    [x0, y0, x0 + 2, y0 + 3]
                })
                .collect(),
            positions: (0..n).collect(),
            tags: vec![Tag::O; n],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(302);
        let up = Matrix::random_uniform(n, model.tags().len(), -1.0, 1.0, &mut rng);
        let trace = model.forward(&chunk).map_err(|e| e.to_string())?;
        let grads = model
            .backward(&chunk, &trace, HeadKind::Tag, &up)
            .map_err(|e| e.to_string())?;
        for i in 0..model.num_params() {
            let numeric = gradcheck::numeric_gradient(
                |x| {
                    let mut probe_model = model.clone();
                    *probe_model.param_mut(i) = x.clone();
                    let logits =
                        probe_model.tag_logits(&probe_model.forward(&chunk).expect("forward").x);
                    logits
                        .data()
                        .iter()
                        .zip(up.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                },
                model.param(i),
                1e-5,
            );
            let err = gradcheck::max_rel_error(&grads[i], &numeric);
            ensure(err <= 1e-3, || {
                format!("{}: rel error {err:.3e}", model.param_name(i))
            })?;
        }
        Ok(())
    });

    run_case(&mut checks, "zero upstream gradient yields zero input gradients", || {
        let mut rng = ChaCha8Rng::seed_from_u64(211);
        let input = positive_input(5, 3, &mut rng);
        let proj = ProjectionPair::random(2, 5, &mut rng).map_err(|e| e.to_string())?;
        let up = Matrix::zeros(5, 3);
        for variant in [
            AttentionVariant::Full,
            AttentionVariant::Linformer { proj: &proj },
            AttentionVariant::Cosformer { expansion: None },
        ] {
            let g = attention_backward(variant, &input, &up).map_err(|e| e.to_string())?;
            for (name, m) in [("dQ", &g.dq), ("dK", &g.dk), ("dV", &g.dv)] {
                ensure(m.data().iter().all(|&v| v == 0.0), || {
                    format!("{name} nonzero under zero upstream")
                })?;
            }
        }
        Ok(())
    });

    SuiteReport {
        suite: "gradient",
        checks,
    }
}
