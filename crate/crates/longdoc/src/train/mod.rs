//! Masked-token pre-training, tagging finetuning, the linear
//! warmup/decay schedule, Adam, and span-level F1 evaluation grouped by
//! document length.

mod adam;
mod eval;
mod run;
mod schedule;

pub use adam::Adam;
pub use eval::{evaluate_f1, predict_spans, ClassScore, EvalReport};
pub use run::{eval_loss, finetune_tagging, mlm_pretrain, Objective};
pub use schedule::lr_schedule;

use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Fraction of total steps spent ramping up, in [0, 1].
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub seed: u64,
    /// Per-token masking probability for pre-training.
    pub mask_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            warmup_fraction: 0.05,
            total_steps: 1000,
            batch_size: 8,
            grad_accum: 1,
            seed: 0,
            mask_prob: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::BadConfig(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail(format!(
                "warmup fraction {} must lie in [0, 1]",
                self.warmup_fraction
            ));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return fail("steps, batch size, and accumulation count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask probability {} must lie in [0, 1]", self.mask_prob));
        }
        Ok(())
    }
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Writes metrics as line-delimited JSON records.
pub fn write_metrics(
    path: impl AsRef<std::path::Path>,
    metrics: &[MetricRecord],
) -> Result<(), TrainError> {
    use std::io::Write;
    let path = path.as_ref();
    let io_err = |e: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for m in metrics {
        let line = serde_json::to_string(m).expect("metric serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("document id '{id}' present in only one of predictions and gold")]
    IdMismatch { id: String },
    #[error("document id '{id}' appears more than once")]
    DuplicateId { id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
