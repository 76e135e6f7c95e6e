//! Synthetic image classes: a smooth per-class template plus unit Gaussian
//! pixel noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub size: usize,
    pub channels: usize,
    /// Root-mean-square per-pixel distance between any two class templates,
    /// in units of the noise standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            n_per_class: 64,
            size: 16,
            channels: 3,
            separation: 0.3,
            seed: 0,
        }
    }
}

/// 3x3 box blur with edge clamping, applied per channel.
fn blur(x: &[f64], c: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let mut acc = 0.0;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let ii = (i as i64 + di).clamp(0, s as i64 - 1) as usize;
                        let jj = (j as i64 + dj).clamp(0, s as i64 - 1) as usize;
                        acc += x[(ch * s + ii) * s + jj];
                    }
                }
                out[(ch * s + i) * s + j] = acc / 9.0;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mutually orthogonal, spatially smooth templates scaled so that every
/// pair is `separation * sqrt(D)` apart.
fn templates(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = cfg.channels * cfg.size * cfg.size;
    let scale = cfg.separation * (d as f64 / 2.0).sqrt();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let mut v = blur(&blur(&noise, cfg.channels, cfg.size), cfg.channels, cfg.size);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// Training split: sample `i` belongs to class `i % classes`.
/// Deterministic in `cfg.seed`.
pub fn synth_blobs(cfg: &SynthConfig) -> Result<LabeledDataset> {
    synth_blobs_split(cfg, Split::Train)
}

/// Either split of the same synthetic task. Both splits share the class
/// templates; their noise comes from independent streams.
pub fn synth_blobs_split(cfg: &SynthConfig, split: Split) -> Result<LabeledDataset> {
    if cfg.classes < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes"));
    }
    if cfg.n_per_class == 0 || cfg.size == 0 || cfg.channels == 0 {
        return Err(Error::invalid("n_per_class, size and channels must be positive"));
    }
    let d = cfg.channels * cfg.size * cfg.size;
    if cfg.classes > d {
        return Err(Error::invalid(format!("{} classes need more than {d} pixels", cfg.classes)));
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be finite and >= 0, got {}", cfg.separation)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates = templates(cfg, &mut rng);
    if split == Split::Test {
        rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
    }
    let n = cfg.classes * cfg.n_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % cfg.classes;
        labels.push(class);
        for &t in &templates[class] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push((t + noise) as f32);
        }
    }
    let images = Tensor::new(&[n, cfg.channels, cfg.size, cfg.size], data)?;
    LabeledDataset::new(images, labels, cfg.classes, split, "synth")
}
