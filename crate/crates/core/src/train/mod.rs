//! SGD training with warmup + cosine learning-rate schedule.

mod augment;
mod schedule;
mod sgd;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, flip_horizontal, CROP_PADDING};
pub use schedule::lr_at;
pub use sgd::Sgd;

use crate::autodiff::Tape;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    /// Final learning rate as a fraction of `base_lr`.
    pub final_lr_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Random crop + horizontal flip.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 10,
            base_lr: 0.01,
            final_lr_fraction: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "need 0 <= warmup_epochs < epochs, got {} and {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub train_loss: f64,
    /// Top-1 of the training-mode forward passes (augmented inputs).
    pub train_top1: f64,
    pub eval_top1: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_top1,eval_top1,lr\n");
        for e in &self.epochs {
            let eval = e.eval_top1.map(|v| format!("{v:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{:.6},{:.6},{eval},{:.8}\n", e.epoch, e.train_loss, e.train_top1, e.lr));
        }
        out
    }
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Eval-mode top-1 accuracy.
pub fn evaluate(model: &Model<f32>, data: &LabeledDataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0;
    for start in (0..data.len()).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size.max(1)).min(data.len())).collect();
        let logits = model.predict(&data.images.select(&idx))?;
        correct += count_correct(&logits, &data.labels[start..start + idx.len()]);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `model` in place. Shuffling and augmentation draw from one
/// generator seeded with `cfg.seed`, so equal configs give bitwise-equal
/// runs. `on_epoch` sees each epoch's metrics as they are produced.
pub fn train_with(
    model: &mut Model<f32>,
    data: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunMetrics> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = RunMetrics::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut x = data.images.select(batch);
            if cfg.augment {
                x = augment(&x, &mut rng)?;
            }
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let logits = model.forward_train(&mut tape, input)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let loss_value = f64::from(tape.value(loss).data()[0]);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss: loss_value });
            }
            correct += count_correct(tape.value(logits), &labels);
            loss_sum += loss_value;
            model.params_mut().zero_grads();
            tape.backward_into(loss, model.params_mut())?;
            lr = lr_at(step, steps_per_epoch, cfg);
            opt.step(model.params_mut(), lr);
            step += 1;
        }
        let eval_top1 = eval.map(|d| evaluate(model, d, cfg.batch_size)).transpose()?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / steps_per_epoch as f64,
            train_top1: correct as f64 / data.len() as f64,
            eval_top1,
            lr,
        };
        on_epoch(&m);
        metrics.epochs.push(m);
    }
    Ok(metrics)
}

pub fn train(model: &mut Model<f32>, data: &LabeledDataset, eval: Option<&LabeledDataset>, cfg: &TrainConfig) -> Result<RunMetrics> {
    train_with(model, data, eval, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, SynthConfig};
    use crate::nn::{build_model, ModelSpec};

    #[test]
    fn rigged_classifier_is_perfect() {
        let spec = ModelSpec::resnet(&[1], 2, 1, 4, 3);
        let mut model = build_model::<f32>(&spec, 0).unwrap();
        for p in model.params_mut().iter_mut() {
            if p.name == "fc.weight" {
                p.value.data_mut().fill(0.0);
            }
        }
        let data = synth_blobs(&SynthConfig {
            classes: 3,
            n_per_class: 4,
            size: 4,
            channels: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        // fc.weight is zero: logits equal the bias, so the true logit + 10
        // can only be emulated per class. Use single-class slices.
        for class in 0..3 {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
            let bias = model.params_mut().by_name_mut("fc.bias").unwrap();
            bias.value.data_mut().fill(0.0);
            bias.value.data_mut()[class] = 10.0;
            assert_eq!(evaluate(&model, &data.subset(&idx), 2).unwrap(), 1.0);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig { warmup_epochs: 5, epochs: 5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { final_lr_fraction: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn nan_loss_aborts_with_step() {
        let spec = ModelSpec::resnet(&[1], 2, 1, 4, 2);
        let mut model = build_model::<f32>(&spec, 0).unwrap();
        model.params_mut().by_name_mut("fc.bias").unwrap().value.data_mut()[0] = f32::NAN;
        let data = synth_blobs(&SynthConfig {
            classes: 2,
            n_per_class: 2,
            size: 4,
            channels: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig { epochs: 1, warmup_epochs: 0, batch_size: 4, ..TrainConfig::default() };
        match train(&mut model, &data, None, &cfg) {
            Err(Error::NonFiniteLoss { step: 0, .. }) => {}
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }
}
