use std::f64::consts::PI;

use crate::train::TrainConfig;

/// Learning rate for optimizer step `step` (0-based).
///
/// Warmup ramps linearly per step from `base_lr / warmup_steps` up to
/// exactly `base_lr` on the last warmup step. The remaining steps follow a
/// cosine from `base_lr` down to `final_lr_fraction * base_lr`, reached on
/// the final step.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let b = cfg.base_lr;
    let floor = cfg.final_lr_fraction * b;
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warmup {
        return b * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup + 1);
    let p = if span == 0 {
        1.0
    } else {
        ((step - warmup) as f64 / span as f64).min(1.0)
    };
    floor + (b - floor) * (1.0 + (PI * p).cos()) / 2.0
}
