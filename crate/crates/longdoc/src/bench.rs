//! Scaling measurements: wall-clock medians and peak working memory for
//! each attention mechanism across sequence lengths, plus a log-log
//! slope fit that classifies the growth order.
//!
//! Everything runs single-threaded on one synthetic batch; the numbers
//! are for comparing mechanisms against each other, not for absolute
//! throughput claims.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_forward, AttentionError, AttentionInput, AttentionVariant, ProjectionPair,
};
use crate::bias::{
    approximate_cross_expansion, dense_bias, expand_separable, BiasError, BiasPattern, BiasSpec,
    TokenPosition,
};
use crate::matrix::{probe, Matrix};
use crate::model::AttentionKind;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    BadConfig(String),
    #[error("slope fit needs at least 3 measured lengths, got {got}")]
    TooFewPoints { got: usize },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    /// Head dimension of the synthetic Q/K/V.
    pub d: usize,
    /// Low-rank projection size for the linformer runs.
    pub k: usize,
    /// Timed repetitions per configuration (after one discarded warmup).
    pub reps: usize,
    pub bias: BiasPattern,
    pub seed: u64,
    /// Working-memory budget; configurations predicted to exceed it are
    /// skipped and recorded with `reps = 0`.
    pub budget_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![256, 512, 1024, 2048, 4096],
            d: 64,
            k: 128,
            reps: 5,
            bias: BiasPattern::None,
            seed: 0,
            budget_bytes: 512 * 1024 * 1024,
        }
    }
}

/// One measured (or skipped) configuration. `median_seconds` is the
/// median of the timed repetitions; `peak_bytes` is the high-water mark
/// of buffers the kernel allocated, excluding its inputs. A skipped
/// configuration has `reps = 0` and carries the predicted requirement
/// in `peak_bytes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mechanism: String,
    pub bias: String,
    pub n: usize,
    pub d: usize,
    /// Projection size; zero for mechanisms that have none.
    pub k: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub peak_bytes: u64,
}

/// Dominant-term estimate of the kernel's working set, used only to gate
/// runs against the memory budget.
fn predicted_peak_bytes(mechanism: AttentionKind, bias: BiasPattern, n: usize, d: usize) -> u64 {
    let terms = match bias {
        BiasPattern::None => 1,
        BiasPattern::Cosine1d => 2,
        BiasPattern::Squircle => 4,
        BiasPattern::Cross => 8,
    };
    let words = match mechanism {
        AttentionKind::Full => n * n + n * d,
        AttentionKind::Linformer { k } => n * k + n * d + 2 * k * d,
        AttentionKind::Cosformer => (2 * terms + 1) * n * d + terms * d * (d + 1),
    };
    words as u64 * 8
}

/// Evenly laid-out synthetic positions on the normalized page grid.
fn grid_positions(n: usize) -> Vec<TokenPosition> {
    (0..n)
        .map(|i| {
            TokenPosition::new(
                i as f64,
                (i % 25) as f64 * 40.0,
                ((i / 25) % 41) as f64 * 25.0,
            )
        })
        .collect()
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

/// Pre-built inputs for one configuration; everything here is allocated
/// before the probe resets so only kernel-internal buffers are counted.
enum PreparedVariant {
    Full,
    Biased(Matrix),
    Linformer(ProjectionPair),
    Cosformer(Option<crate::bias::FeatureExpansion>),
}

impl PreparedVariant {
    fn as_variant(&self) -> AttentionVariant<'_> {
        match self {
            PreparedVariant::Full => AttentionVariant::Full,
            PreparedVariant::Biased(bias) => AttentionVariant::Biased {
                bias,
                renormalize: true,
            },
            PreparedVariant::Linformer(proj) => AttentionVariant::Linformer { proj },
            PreparedVariant::Cosformer(expansion) => AttentionVariant::Cosformer {
                expansion: expansion.as_ref(),
            },
        }
    }
}

fn prepare_variant(
    mechanism: AttentionKind,
    bias: BiasPattern,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PreparedVariant, BenchError> {
    let spec = |pattern: BiasPattern| {
        let m = match pattern {
            BiasPattern::Cosine1d => n as f64,
            _ => 1000.0,
        };
        BiasSpec::new(pattern, m, grid_positions(n))
    };
    match (mechanism, bias) {
        (AttentionKind::Full, BiasPattern::None) => Ok(PreparedVariant::Full),
        (AttentionKind::Full, pattern) => Ok(PreparedVariant::Biased(dense_bias(&spec(pattern)?))),
        (AttentionKind::Linformer { k }, BiasPattern::None) => {
            Ok(PreparedVariant::Linformer(ProjectionPair::random(k, n, rng)?))
        }
        (AttentionKind::Linformer { .. }, pattern) => Err(BenchError::Unsupported(format!(
            "low-rank attention cannot fold in a '{pattern}' bias"
        ))),
        (AttentionKind::Cosformer, BiasPattern::None) => Ok(PreparedVariant::Cosformer(None)),
        (AttentionKind::Cosformer, BiasPattern::Cross) => Ok(PreparedVariant::Cosformer(Some(
            approximate_cross_expansion(&spec(BiasPattern::Cross)?)?.expansion,
        ))),
        (AttentionKind::Cosformer, pattern) => Ok(PreparedVariant::Cosformer(Some(
            expand_separable(&spec(pattern)?)?,
        ))),
    }
}

/// Measures every mechanism at every length. Records come back in the
/// iteration order (mechanisms outer, lengths inner) so repeated runs
/// produce identical files.
pub fn run_scaling_bench(
    mechanisms: &[AttentionKind],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>, BenchError> {
    if cfg.reps < 3 {
        return Err(BenchError::BadConfig(format!(
            "need at least 3 repetitions for a median, got {}",
            cfg.reps
        )));
    }
    if cfg.d == 0 || cfg.lengths.is_empty() || mechanisms.is_empty() {
        return Err(BenchError::BadConfig(
            "dimension, lengths, and mechanisms must be non-empty".into(),
        ));
    }
    if cfg.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::BadConfig(
            "lengths must be strictly ascending".into(),
        ));
    }
    let mut records = Vec::new();
    for &mechanism in mechanisms {
        let rank = match mechanism {
            AttentionKind::Linformer { k } => k,
            _ => 0,
        };
        for &n in &cfg.lengths {
            if n == 0 {
                return Err(BenchError::BadConfig("sequence length 0".into()));
            }
            let predicted = predicted_peak_bytes(mechanism, cfg.bias, n, cfg.d);
            if predicted > cfg.budget_bytes {
                records.push(BenchRecord {
                    mechanism: mechanism.to_string(),
                    bias: cfg.bias.to_string(),
                    n,
                    d: cfg.d,
                    k: rank,
                    reps: 0,
                    median_seconds: 0.0,
                    peak_bytes: predicted,
                });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (n as u64).rotate_left(17));
            let q = Matrix::random_normal(n, cfg.d, 1.0, &mut rng);
            let k = Matrix::random_normal(n, cfg.d, 1.0, &mut rng);
            let v = Matrix::random_normal(n, cfg.d, 1.0, &mut rng);
            let input = AttentionInput::new(q, k, v)?;
            let prepared = prepare_variant(mechanism, cfg.bias, n, &mut rng)?;

            // Warmup rep, discarded, then the probe starts fresh.
            attention_forward(prepared.as_variant(), &input)?;
            probe::reset();
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let started = Instant::now();
                let out = attention_forward(prepared.as_variant(), &input)?;
                times.push(started.elapsed().as_secs_f64());
                drop(out);
            }
            records.push(BenchRecord {
                mechanism: mechanism.to_string(),
                bias: cfg.bias.to_string(),
                n,
                d: cfg.d,
                k: rank,
                reps: cfg.reps,
                median_seconds: median(&mut times),
                peak_bytes: probe::snapshot().peak_bytes,
            });
        }
    }
    Ok(records)
}

/// Least-squares slope of log(median time) against log(N) over the three
/// largest measured lengths. 2.0 means quadratic growth, 1.0 linear.
pub fn fit_complexity_slope(records: &[BenchRecord]) -> Result<f64, BenchError> {
    let mut measured: Vec<&BenchRecord> = records
        .iter()
        .filter(|r| r.reps > 0 && r.median_seconds > 0.0)
        .collect();
    measured.sort_by_key(|r| r.n);
    measured.dedup_by_key(|r| r.n);
    if measured.len() < 3 {
        return Err(BenchError::TooFewPoints {
            got: measured.len(),
        });
    }
    let points: Vec<(f64, f64)> = measured[measured.len() - 3..]
        .iter()
        .map(|r| ((r.n as f64).ln(), r.median_seconds.ln()))
        .collect();
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    Ok((m * sxy - sx * sy) / (m * sxx - sx * sx))
}

/// Renders records with the fixed header
/// `mechanism,bias,N,d,k,reps,median_seconds,peak_bytes`.
pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("mechanism,bias,N,d,k,reps,median_seconds,peak_bytes\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.9},{}\n",
            r.mechanism, r.bias, r.n, r.d, r.k, r.reps, r.median_seconds, r.peak_bytes
        ));
    }
    out
}

pub fn write_csv(
    path: impl AsRef<std::path::Path>,
    records: &[BenchRecord],
) -> Result<(), BenchError> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(records)).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
