//! 2D relative attention bias patterns and their separable expansions.
//!
//! Bias matrices weight attention towards nearby tokens. The cosine family
//! used here keeps every entry in [0, 1] as long as the normalization
//! constant `M` is at least the largest pairwise coordinate difference, so
//! every cosine argument stays inside [0, pi/2].
//!
//! For the linear attention path a bias must be written as a sum of
//! products B[i][j] = sum_n g_n[i] * h_n[j]. The 1D cosine and the 2D
//! squircle decompose exactly; the cross pattern (a pointwise max) does
//! not, and gets an inclusion-exclusion surrogate with a reported error.

use std::f64::consts::PI;

use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum BiasError {
    #[error("normalization constant M = {m} is smaller than the largest pairwise coordinate difference {max_delta}")]
    InvalidNormalization { m: f64, max_delta: f64 },
    #[error("normalization constant M must be positive and finite, got {m}")]
    NonPositiveNormalization { m: f64 },
    #[error("position list is empty")]
    EmptyPositions,
    #[error("position coordinates must be finite")]
    NonFinitePosition,
    #[error("the {0:?} pattern is not separable into a sum of products")]
    NotSeparable(BiasPattern),
    #[error("expansion requires cross-page factor 1.0, got {0}")]
    UnsupportedCrossPageFactor(f64),
    #[error("expected the {expected:?} pattern, got {got:?}")]
    PatternMismatch {
        expected: BiasPattern,
        got: BiasPattern,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasPattern {
    /// All-ones bias (no locality preference).
    None,
    /// cos(pi/(2M) * (i - j)) over 1D sequence positions.
    Cosine1d,
    /// Product of axis-wise cosines over box-center deltas.
    Squircle,
    /// Max of the two axis-wise cosines; favors row/column alignment.
    Cross,
}

impl std::fmt::Display for BiasPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BiasPattern::None => "none",
            BiasPattern::Cosine1d => "cosine1d",
            BiasPattern::Squircle => "squircle",
            BiasPattern::Cross => "cross",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for BiasPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(BiasPattern::None),
            "cosine1d" => Ok(BiasPattern::Cosine1d),
            "squircle" => Ok(BiasPattern::Squircle),
            "cross" => Ok(BiasPattern::Cross),
            other => Err(format!("unknown bias pattern '{other}'")),
        }
    }
}

/// Per-token coordinates feeding a bias pattern: a 1D sequence position
/// and the 2D center of the token's bounding box on the 0..=1000 grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPosition {
    pub seq: f64,
    pub x: f64,
    pub y: f64,
    pub page: usize,
}

impl TokenPosition {
    pub fn new(seq: f64, x: f64, y: f64) -> Self {
        TokenPosition {
            seq,
            x,
            y,
            page: 0,
        }
    }
}

/// A bias pattern bound to concrete token positions and a normalization
/// constant `M`.
#[derive(Debug, Clone)]
pub struct BiasSpec {
    pattern: BiasPattern,
    m: f64,
    positions: Vec<TokenPosition>,
    /// Multiplier applied to pairs living on different pages. 1.0 leaves
    /// cross-page pairs untouched.
    cross_page_factor: f64,
}

impl BiasSpec {
    pub fn new(
        pattern: BiasPattern,
        m: f64,
        positions: Vec<TokenPosition>,
    ) -> Result<Self, BiasError> {
        if positions.is_empty() {
            return Err(BiasError::EmptyPositions);
        }
        if !m.is_finite() || m <= 0.0 {
            return Err(BiasError::NonPositiveNormalization { m });
        }
        for p in &positions {
            if !(p.seq.is_finite() && p.x.is_finite() && p.y.is_finite()) {
                return Err(BiasError::NonFinitePosition);
            }
        }
        let max_delta = match pattern {
            BiasPattern::None => 0.0,
            BiasPattern::Cosine1d => max_pairwise_delta(positions.iter().map(|p| p.seq)),
            BiasPattern::Squircle | BiasPattern::Cross => f64::max(
                max_pairwise_delta(positions.iter().map(|p| p.x)),
                max_pairwise_delta(positions.iter().map(|p| p.y)),
            ),
        };
        if max_delta > m {
            return Err(BiasError::InvalidNormalization { m, max_delta });
        }
        Ok(BiasSpec {
            pattern,
            m,
            positions,
            cross_page_factor: 1.0,
        })
    }

    pub fn with_cross_page_factor(mut self, factor: f64) -> Self {
        self.cross_page_factor = factor;
        self
    }

    pub fn pattern(&self) -> BiasPattern {
        self.pattern
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[TokenPosition] {
        &self.positions
    }

    fn half_angle(&self) -> f64 {
        PI / (2.0 * self.m)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let a = self.positions[i];
        let b = self.positions[j];
        let w = self.half_angle();
        let raw = match self.pattern {
            BiasPattern::None => 1.0,
            BiasPattern::Cosine1d => (w * (a.seq - b.seq)).cos(),
            BiasPattern::Squircle => (w * (a.x - b.x)).cos() * (w * (a.y - b.y)).cos(),
            BiasPattern::Cross => f64::max((w * (a.x - b.x)).cos(), (w * (a.y - b.y)).cos()),
        };
        if a.page != b.page {
            raw * self.cross_page_factor
        } else {
            raw
        }
    }
}

fn max_pairwise_delta(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if min.is_finite() {
        max - min
    } else {
        0.0
    }
}

/// Materializes the full N x N bias matrix for a `BiasSpec`'s pattern.
pub fn dense_bias(spec: &BiasSpec) -> Matrix {
    let n = spec.len();
    Matrix::from_fn(n, n, |i, j| spec.entry(i, j))
}

/// One `g_n`/`h_n` pair of a sum-of-products decomposition; both vectors
/// have one entry per token.
#[derive(Debug, Clone)]
pub struct ExpansionTerm {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

/// A bias written as B[i][j] = sum_n g_n[i] * h_n[j], the form the linear
/// attention path can absorb without materializing B.
#[derive(Debug, Clone)]
pub struct FeatureExpansion {
    terms: Vec<ExpansionTerm>,
}

impl FeatureExpansion {
    pub fn new(terms: Vec<ExpansionTerm>) -> Self {
        let n = terms.first().map_or(0, |t| t.g.len());
        for t in &terms {
            assert_eq!(t.g.len(), n, "ragged expansion term");
            assert_eq!(t.h.len(), n, "ragged expansion term");
        }
        FeatureExpansion { terms }
    }

    pub fn terms(&self) -> &[ExpansionTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Sequence length the expansion was built for.
    pub fn seq_len(&self) -> usize {
        self.terms.first().map_or(0, |t| t.g.len())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.terms.iter().map(|t| t.g[i] * t.h[j]).sum()
    }

    /// Dense reconstruction; only sensible at test/oracle scale since it
    /// materializes N x N.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.seq_len();
        Matrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

/// Exact sum-of-products decomposition: 2 terms for the 1D cosine, 4 for
/// the squircle (the product of the two 2-term axis decompositions), and a
/// single all-ones term for the trivial `None` pattern. The cross pattern
/// is rejected; see [`approximate_cross_expansion`].
pub fn expand_separable(spec: &BiasSpec) -> Result<FeatureExpansion, BiasError> {
    if spec.cross_page_factor != 1.0 {
        return Err(BiasError::UnsupportedCrossPageFactor(spec.cross_page_factor));
    }
    let w = spec.half_angle();
    let n = spec.len();
    let terms = match spec.pattern() {
        BiasPattern::None => vec![ExpansionTerm {
            g: vec![1.0; n],
            h: vec![1.0; n],
        }],
        BiasPattern::Cosine1d => cosine_terms(spec.positions().iter().map(|p| p.seq * w)),
        BiasPattern::Squircle => {
            let x = cosine_terms(spec.positions().iter().map(|p| p.x * w));
            let y = cosine_terms(spec.positions().iter().map(|p| p.y * w));
            product_terms(&x, &y)
        }
        BiasPattern::Cross => return Err(BiasError::NotSeparable(BiasPattern::Cross)),
    };
    Ok(FeatureExpansion::new(terms))
}

/// cos(a_i - a_j) = cos(a_i)cos(a_j) + sin(a_i)sin(a_j).
fn cosine_terms(angles: impl Iterator<Item = f64>) -> Vec<ExpansionTerm> {
    let angles: Vec<f64> = angles.collect();
    let cos: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
    let sin: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
    vec![
        ExpansionTerm {
            g: cos.clone(),
            h: cos,
        },
        ExpansionTerm {
            g: sin.clone(),
            h: sin,
        },
    ]
}

/// Product of two separable functions, expanded term by term.
fn product_terms(a: &[ExpansionTerm], b: &[ExpansionTerm]) -> Vec<ExpansionTerm> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ta in a {
        for tb in b {
            out.push(ExpansionTerm {
                g: ta.g.iter().zip(&tb.g).map(|(x, y)| x * y).collect(),
                h: ta.h.iter().zip(&tb.h).map(|(x, y)| x * y).collect(),
            });
        }
    }
    out
}

/// Separable surrogate for the cross pattern plus its worst-case error.
#[derive(Debug, Clone)]
pub struct CrossExpansion {
    pub expansion: FeatureExpansion,
    /// max over all pairs of |surrogate - exact cross| at the
    /// `BiasSpec`'s positions.
    pub max_error: f64,
}

/// The cross bias max(c_x, c_y) is not a sum of products. This returns the
/// inclusion-exclusion surrogate c_x + c_y - c_x*c_y, which is separable
/// (8 terms), dominates the exact max on [0, 1]^2, and agrees with it
/// exactly whenever either axis is aligned (the case the pattern exists
/// for).
pub fn approximate_cross_expansion(spec: &BiasSpec) -> Result<CrossExpansion, BiasError> {
    if spec.pattern() != BiasPattern::Cross {
        return Err(BiasError::PatternMismatch {
            expected: BiasPattern::Cross,
            got: spec.pattern(),
        });
    }
    if spec.cross_page_factor != 1.0 {
        return Err(BiasError::UnsupportedCrossPageFactor(spec.cross_page_factor));
    }
    let w = spec.half_angle();
    let x = cosine_terms(spec.positions().iter().map(|p| p.x * w));
    let y = cosine_terms(spec.positions().iter().map(|p| p.y * w));
    // c_x + c_y - c_x * c_y: 2 + 2 + 4 terms, the product terms negated.
    let mut terms = Vec::with_capacity(8);
    terms.extend(x.iter().cloned());
    terms.extend(y.iter().cloned());
    for mut t in product_terms(&x, &y) {
        for v in &mut t.g {
            *v = -*v;
        }
        terms.push(t);
    }
    let expansion = FeatureExpansion::new(terms);

    let n = spec.len();
    let mut max_error = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let exact = spec.entry(i, j);
            let approx = expansion.entry(i, j);
            max_error = max_error.max((approx - exact).abs());
        }
    }
    Ok(CrossExpansion {
        expansion,
        max_error,
    })
}
