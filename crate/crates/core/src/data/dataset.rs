use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Per-channel standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Channel means and (population) standard deviations of `[N, C, H, W]`
    /// images.
    pub fn compute(images: &Tensor<f32>) -> Result<Self> {
        let (n, c, h, w) = images.dims4()?;
        let hw = h * w;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, v) in images.data().iter().enumerate() {
            let ch = (i / hw) % c;
            mean[ch] += f64::from(*v);
        }
        let count = (n * hw) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        for (i, v) in images.data().iter().enumerate() {
            let ch = (i / hw) % c;
            let d = f64::from(*v) - mean[ch];
            sq[ch] += d * d;
        }
        let std = sq.iter().map(|s| (s / count).sqrt().max(1e-12)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, images: &mut Tensor<f32>) -> Result<()> {
        let (_, c, h, w) = images.dims4()?;
        if c != self.mean.len() {
            return Err(Error::DimMismatch(format!(
                "normalization has {} channels, images have {c}",
                self.mean.len()
            )));
        }
        let hw = h * w;
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = ((f64::from(*v) - self.mean[ch]) / self.std[ch]) as f32;
        }
        Ok(())
    }
}

/// Images `[N, C, H, W]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize, split: Split, name: impl Into<String>) -> Result<Self> {
        let (n, ..) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::DimMismatch(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            split,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)` of one image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
            name: self.name.clone(),
        }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_standardizes_channels() {
        let x = Tensor::<f32>::from_fn(&[4, 2, 3, 3], |i| (i % 7) as f32 * if i % 18 < 9 { 1.0 } else { 5.0 });
        let norm = Normalization::compute(&x).unwrap();
        let mut y = x.clone();
        norm.apply(&mut y).unwrap();
        let again = Normalization::compute(&y).unwrap();
        for c in 0..2 {
            assert!(again.mean[c].abs() < 1e-6);
            assert!((again.std[c] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Tensor::<f32>::zeros(&[2, 1, 2, 2]);
        assert!(LabeledDataset::new(x.clone(), vec![0, 3], 3, Split::Train, "t").is_err());
        assert!(LabeledDataset::new(x.clone(), vec![0], 3, Split::Train, "t").is_err());
        let d = LabeledDataset::new(x, vec![0, 2], 3, Split::Train, "t").unwrap();
        assert_eq!(d.subset(&[1]).labels, vec![2]);
    }
}
