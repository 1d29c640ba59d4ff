//! Toy layout-aware transformer encoder: additive embeddings over token,
//! 1D position, box geometry, and page; a stack of post-norm attention +
//! feed-forward blocks wired to any attention mechanism; masked-token and
//! BIESO tagging heads; and a hand-derived backward pass for the whole
//! network.

mod layers;
mod net;

pub use net::{HeadKind, Model, Trace};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionError;
use crate::bias::{BiasError, BiasPattern};

/// Coordinate bins for the four box-edge tables and the width/height
/// tables: one bin per point of the normalized 0..=1000 grid.
pub const COORD_VOCAB: usize = 1001;

/// Layer-norm stabilizer.
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Full,
    Linformer { k: usize },
    Cosformer,
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttentionKind::Full => write!(f, "full"),
            AttentionKind::Linformer { k } => write!(f, "linformer({k})"),
            AttentionKind::Cosformer => write!(f, "cosformer"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_max: usize,
    pub attention: AttentionKind,
    pub bias: BiasPattern,
    /// Bins for coordinate embeddings; 1001 covers the normalized grid.
    pub coord_vocab: usize,
    pub page_vocab: usize,
    /// Field classes the tagging head predicts (BIESO expansion applied).
    pub classes: Vec<String>,
}

impl ModelConfig {
    /// Desk-scale defaults around a given vocabulary and tag set.
    pub fn desk(vocab_size: usize, classes: Vec<String>) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            heads: 4,
            layers: 2,
            n_max: 512,
            attention: AttentionKind::Full,
            bias: BiasPattern::None,
            coord_vocab: COORD_VOCAB,
            page_vocab: 8,
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadConfig(msg));
        if self.vocab_size < 3 {
            return fail("vocabulary must include the three special tokens".into());
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.n_max == 0 {
            return fail("n_max must be positive".into());
        }
        if self.coord_vocab == 0 || self.page_vocab == 0 {
            return fail("coordinate and page vocabularies must be non-empty".into());
        }
        if let AttentionKind::Linformer { k } = self.attention {
            if k == 0 || k > self.n_max {
                return fail(format!("linformer k {k} must be in 1..={}", self.n_max));
            }
            if self.bias != BiasPattern::None {
                return fail(
                    "low-rank attention cannot apply a relative bias; use full or cosformer"
                        .into(),
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence length {n} exceeds the model maximum {n_max}")]
    SequenceTooLong { n: usize, n_max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("page index {page} outside page vocabulary of size {vocab}")]
    PageOutOfRange { page: usize, vocab: usize },
    #[error("coordinate {value} outside bins 0..{vocab}")]
    CoordOutOfRange { value: i64, vocab: usize },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
