use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{lr_schedule, Adam, MetricRecord, TrainConfig, TrainError};
use crate::data::{Chunk, MASK};
use crate::matrix::Matrix;
use crate::model::{HeadKind, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Mlm,
    Tagging,
}

/// BERT-style corruption of one selected token: 80% mask, 10% random
/// non-special id, 10% left as-is.
fn corrupt(id: usize, vocab: usize, rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.random();
    if r < 0.8 {
        MASK
    } else if r < 0.9 {
        rng.random_range(3..vocab)
    } else {
        id
    }
}

/// Selects each position with probability `mask_prob` and corrupts it;
/// returns the corrupted chunk plus per-position targets (the original
/// id at selected positions). Layout, page, and position channels are
/// untouched. If nothing was selected, one position is forced so every
/// chunk contributes to the loss.
fn mask_tokens(
    chunk: &Chunk,
    vocab: usize,
    mask_prob: f64,
    rng: &mut ChaCha8Rng,
) -> (Chunk, Vec<Option<usize>>) {
    let mut masked = chunk.clone();
    let mut targets: Vec<Option<usize>> = vec![None; chunk.len()];
    for i in 0..chunk.len() {
        if rng.random_bool(mask_prob) {
            targets[i] = Some(chunk.ids[i]);
            masked.ids[i] = corrupt(chunk.ids[i], vocab, rng);
        }
    }
    if targets.iter().all(Option::is_none) {
        let i = rng.random_range(0..chunk.len());
        targets[i] = Some(chunk.ids[i]);
        masked.ids[i] = corrupt(chunk.ids[i], vocab, rng);
    }
    (masked, targets)
}

/// Gold tag index per position; continuation pieces carry no target so
/// only the first piece of each word is scored.
fn tag_targets(model: &Model, chunk: &Chunk) -> Vec<Option<usize>> {
    let tags = model.tags();
    (0..chunk.len())
        .map(|i| {
            if chunk.continuation[i] {
                None
            } else {
                Some(
                    tags.iter()
                        .position(|t| *t == chunk.tags[i])
                        .expect("chunk tag is in the model inventory"),
                )
            }
        })
        .collect()
}

/// Mean cross-entropy over positions with a target, and the matching
/// logit gradient (softmax minus one-hot, scaled by 1/count).
pub(crate) fn softmax_xent(logits: &Matrix, targets: &[Option<usize>]) -> (f64, Matrix) {
    assert_eq!(logits.rows(), targets.len(), "target count mismatch");
    let count = targets.iter().flatten().count();
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    if count == 0 {
        return (0.0, d);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let Some(t) = target else { continue };
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += (z.ln() + max - row[*t]) * scale;
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / z;
            let onehot = if j == *t { 1.0 } else { 0.0 };
            d.set(i, j, (p - onehot) * scale);
        }
    }
    (loss, d)
}

/// Forward + backward for one chunk under the given objective.
fn chunk_pass(
    model: &Model,
    chunk: &Chunk,
    objective: Objective,
    mask_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Matrix>), TrainError> {
    let (input, targets, head) = match objective {
        Objective::Mlm => {
            let (masked, targets) =
                mask_tokens(chunk, model.config().vocab_size, mask_prob, rng);
            (masked, targets, HeadKind::Mlm)
        }
        Objective::Tagging => (chunk.clone(), tag_targets(model, chunk), HeadKind::Tag),
    };
    let trace = model.forward(&input)?;
    let logits = match head {
        HeadKind::Mlm => model.mlm_logits(&trace.x),
        HeadKind::Tag => model.tag_logits(&trace.x),
    };
    let (loss, d_logits) = softmax_xent(&logits, &targets);
    let grads = model.backward(&input, &trace, head, &d_logits)?;
    Ok((loss, grads))
}

fn run(
    model: &mut Model,
    chunks: &[Chunk],
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<Vec<MetricRecord>, TrainError> {
    cfg.validate()?;
    if chunks.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut metrics = Vec::with_capacity(cfg.total_steps);
    let per_step = cfg.batch_size * cfg.grad_accum;
    let micro_w = 1.0 / cfg.grad_accum as f64;
    for step in 0..cfg.total_steps {
        let lr = lr_schedule(step, cfg);
        // All indices for the step are drawn up front so the rng stream
        // does not depend on how the batch is split into micro-batches.
        let picks: Vec<usize> = (0..per_step)
            .map(|_| rng.random_range(0..chunks.len()))
            .collect();
        let mut step_grads = model.zero_grads();
        let mut step_loss = 0.0;
        for micro in picks.chunks(cfg.batch_size) {
            let mut micro_grads = model.zero_grads();
            let w = 1.0 / micro.len() as f64;
            for &pick in micro {
                let (loss, grads) =
                    chunk_pass(model, &chunks[pick], objective, cfg.mask_prob, &mut rng)?;
                step_loss += loss * w * micro_w;
                for (acc, g) in micro_grads.iter_mut().zip(&grads) {
                    acc.add_scaled(g, w);
                }
            }
            for (acc, g) in step_grads.iter_mut().zip(&micro_grads) {
                acc.add_scaled(g, micro_w);
            }
        }
        adam.step(model, &step_grads, lr);
        metrics.push(MetricRecord {
            step,
            lr,
            loss: step_loss,
        });
    }
    Ok(metrics)
}

/// Masked-token pre-training over the chunk pool.
pub fn mlm_pretrain(
    model: &mut Model,
    chunks: &[Chunk],
    cfg: &TrainConfig,
) -> Result<Vec<MetricRecord>, TrainError> {
    run(model, chunks, cfg, Objective::Mlm)
}

/// Supervised tagging on gold BIESO, scoring word-initial pieces only.
pub fn finetune_tagging(
    model: &mut Model,
    chunks: &[Chunk],
    cfg: &TrainConfig,
) -> Result<Vec<MetricRecord>, TrainError> {
    run(model, chunks, cfg, Objective::Tagging)
}

/// Mean per-chunk loss without updating the model. For the masked
/// objective the corruption pattern is drawn from `seed`, so repeat
/// calls are comparable.
pub fn eval_loss(
    model: &Model,
    chunks: &[Chunk],
    objective: Objective,
    seed: u64,
    mask_prob: f64,
) -> Result<f64, TrainError> {
    if chunks.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for chunk in chunks {
        let (input, targets) = match objective {
            Objective::Mlm => mask_tokens(chunk, model.config().vocab_size, mask_prob, &mut rng),
            Objective::Tagging => (chunk.clone(), tag_targets(model, chunk)),
        };
        let x = model.encode(&input)?;
        let logits = match objective {
            Objective::Mlm => model.mlm_logits(&x),
            Objective::Tagging => model.tag_logits(&x),
        };
        total += softmax_xent(&logits, &targets).0;
    }
    Ok(total / chunks.len() as f64)
}
