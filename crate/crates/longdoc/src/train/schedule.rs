use super::TrainConfig;

/// Learning rate at `step`: linear ramp from zero over the warmup span,
/// then linear decay back to zero at `total_steps`.
///
/// Step 0 is always zero, the peak value `cfg.lr` is reached exactly at
/// the end of warmup, and every step at or past `total_steps` is zero.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let warmup = cfg.warmup_fraction * total;
    let s = step as f64;
    if s >= total {
        0.0
    } else if s < warmup {
        cfg.lr * s / warmup
    } else {
        cfg.lr * (total - s) / (total - warmup)
    }
}
