use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

pub const CROP_PADDING: usize = 4;

/// Mirrors every image left-right.
pub fn flip_horizontal(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, _, w) = x.dims4()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Per-sample random crop (`CROP_PADDING` pixels of zero padding) followed
/// by a horizontal flip with probability 1/2. Draws three values per sample
/// in sample order.
pub fn augment<R: Rng + ?Sized>(x: &Tensor<f32>, rng: &mut R) -> Result<Tensor<f32>> {
    let (n, c, h, w) = x.dims4()?;
    let p = CROP_PADDING as i64;
    let mut out = Tensor::zeros(x.shape());
    let plane = h * w;
    for b in 0..n {
        let dy = rng.random_range(-p..=p);
        let dx = rng.random_range(-p..=p);
        let flip = rng.random_bool(0.5);
        let src = x.sample(b);
        let dst = &mut out.data_mut()[b * c * plane..(b + 1) * c * plane];
        for ch in 0..c {
            for i in 0..h {
                let si = i as i64 + dy;
                if si < 0 || si >= h as i64 {
                    continue;
                }
                for j in 0..w {
                    let sj = j as i64 + dx;
                    if sj < 0 || sj >= w as i64 {
                        continue;
                    }
                    let oj = if flip { w - 1 - j } else { j };
                    dst[ch * plane + i * w + oj] = src[ch * plane + si as usize * w + sj as usize];
                }
            }
        }
    }
    Ok(out)
}
