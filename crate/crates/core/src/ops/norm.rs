use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state of a training-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    /// Normalized input `(x - mean) / sqrt(var + eps)`.
    pub normalized: Tensor<T>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance (used for normalization).
    pub batch_var: Vec<f64>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

fn check_affine<T: Element>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm2d",
            format!(
                "gamma/beta must be [{c}], got {:?} and {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Normalizes with per-channel batch statistics.
pub fn batchnorm2d_train<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let hw = h * w;
    let count = n * hw;
    let x = input.data();
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let m = s / count as f64;
        let mut sq = 0.0;
        for b in 0..n {
            for v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                let d = v.as_f64() - m;
                sq += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq / count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let g = gamma.data()[ch].as_f64();
            let bt = beta.data()[ch].as_f64();
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let nv = (x[i].as_f64() - mean[ch]) * inv_std[ch];
                xhat[i] = T::of_f64(nv);
                y[i] = T::of_f64(nv * g + bt);
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::from_parts(shape.clone(), y),
        BatchNormCache {
            normalized: Tensor::from_parts(shape, xhat),
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
        },
    ))
}

/// Per-channel batch statistics of one training-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

impl<T> BatchNormCache<T> {
    pub fn stats(&self) -> BatchStats {
        BatchStats {
            mean: self.batch_mean.clone(),
            var: self.batch_var.clone(),
            count: self.count,
        }
    }
}

/// Exponential running-statistics update. The running variance tracks the
/// unbiased batch variance.
pub fn update_running_stats<T: Element>(
    stats: &BatchStats,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: f64,
) {
    let correction = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    for (ch, (rm, rv)) in running_mean
        .data_mut()
        .iter_mut()
        .zip(running_var.data_mut().iter_mut())
        .enumerate()
    {
        *rm = T::of_f64((1.0 - momentum) * rm.as_f64() + momentum * stats.mean[ch]);
        *rv = T::of_f64(
            (1.0 - momentum) * rv.as_f64() + momentum * stats.var[ch] * correction,
        );
    }
}

/// Normalizes with frozen running statistics.
pub fn batchnorm2d_eval<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (_, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    check_affine(c, running_mean, running_var)?;
    let (scale, shift) = eval_affine(gamma, beta, running_mean, running_var, eps);
    let hw = h * w;
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / hw) % c;
            T::of_f64(v.as_f64() * scale[ch] + shift[ch])
        })
        .collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), data))
}

/// Per-channel `(scale, shift)` so that eval output is `x * scale + shift`.
pub fn eval_affine<T: Element>(
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut scale = Vec::with_capacity(gamma.len());
    let mut shift = Vec::with_capacity(gamma.len());
    for ch in 0..gamma.len() {
        let s = gamma.data()[ch].as_f64() / (running_var.data()[ch].as_f64() + eps).sqrt();
        scale.push(s);
        shift.push(beta.data()[ch].as_f64() - running_mean.data()[ch].as_f64() * s);
    }
    (scale, shift)
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm2d_train_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::shape("batchnorm2d_backward", "grad shape mismatch"));
    }
    let hw = h * w;
    let dy = grad_out.data();
    let xhat = cache.normalized.data();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] += dy[i].as_f64();
                dgamma[ch] += dy[i].as_f64() * xhat[i].as_f64();
            }
        }
    }
    let m = cache.count as f64;
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch].as_f64() * cache.inv_std[ch];
            let mean_dy = dbeta[ch] / m;
            let mean_dy_xhat = dgamma[ch] / m;
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = T::of_f64(k * (dy[i].as_f64() - mean_dy - xhat[i].as_f64() * mean_dy_xhat));
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_parts(grad_out.shape().to_vec(), dx),
        gamma: Tensor::from_parts(vec![c], dgamma.into_iter().map(T::of_f64).collect()),
        beta: Tensor::from_parts(vec![c], dbeta.into_iter().map(T::of_f64).collect()),
    })
}
