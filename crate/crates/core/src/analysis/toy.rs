//! Two Gaussian classes sliding toward each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::knn::{build_knn, class_similarity, Metric};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Center separation (in standard deviations) at `t = 0`.
pub const TOY_START_SEPARATION: f64 = 10.0;
/// Center separation at `t = 1`.
pub const TOY_END_SEPARATION: f64 = 3.0;

/// Linear interpolation between the start and end separations.
pub fn toy_separation(t: f64) -> f64 {
    TOY_START_SEPARATION + (TOY_END_SEPARATION - TOY_START_SEPARATION) * t
}

/// Two unit-variance isotropic 2-D Gaussians centred at `(-d/2, 0)` and
/// `(d/2, 0)` with `d = toy_separation(t)`. The noise draws depend only on
/// `seed`, so a sweep over `t` moves the same points.
pub fn toy_transition_dataset(t: f64, n_per_class: usize, seed: u64) -> Result<(Tensor<f64>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("transition t must lie in [0, 1], got {t}")));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    let half = toy_separation(t) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        let cx = if class == 0 { -half } else { half };
        for _ in 0..n_per_class {
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            data.push(cx + nx);
            data.push(ny);
            labels.push(class);
        }
    }
    Ok((Tensor::new(&[2 * n_per_class, 2], data)?, labels))
}

/// One row of a transition sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyPoint {
    pub t: f64,
    pub separation: f64,
    pub cs: f64,
}

/// Class similarity at `steps` evenly spaced transitions from 0 to 1.
pub fn toy_sweep(steps: usize, n_per_class: usize, m: usize, seed: u64) -> Result<Vec<ToyPoint>> {
    if steps < 2 {
        return Err(Error::invalid("a sweep needs at least two steps"));
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let (x, labels) = toy_transition_dataset(t, n_per_class, seed)?;
            let g = build_knn(&x, m, Metric::Euclidean)?;
            Ok(ToyPoint {
                t,
                separation: toy_separation(t),
                cs: class_similarity(&g, &labels)?,
            })
        })
        .collect()
}
