use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::knn::{build_knn, class_similarity, Metric};
use crate::error::{Error, Result};
use crate::nn::{Model, Window};
use crate::ops::{avg_pool2d, global_avg_pool};
use crate::tensor::{Element, Tensor};

/// One captured activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tap {
    pub layer_index: usize,
    pub name: String,
    /// `[N, C, H, W]` or `[N, F]`.
    pub features: Tensor<f32>,
}

/// Activations of every tap over the same labelled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub taps: Vec<Tap>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(taps: Vec<Tap>, labels: Vec<usize>) -> Result<Self> {
        let fs = Self { taps, labels };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tap) in self.taps.iter().enumerate() {
            let rank = tap.features.rank();
            if rank != 2 && rank != 4 {
                return Err(Error::DimMismatch(format!("tap {:?} has rank {rank}", tap.name)));
            }
            if tap.features.batch() != self.labels.len() {
                return Err(Error::DimMismatch(format!(
                    "tap {:?} has {} samples but there are {} labels",
                    tap.name,
                    tap.features.batch(),
                    self.labels.len()
                )));
            }
            if i > 0 && tap.layer_index <= self.taps[i - 1].layer_index {
                return Err(Error::DimMismatch("layer indices must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }
}

/// Average-pools a rank-4 map with a non-overlapping window (clamped to the
/// map). Rank-2 features have no spatial extent and pass through.
pub fn scale_features<T: Element>(features: &Tensor<T>, scale: Window) -> Result<Tensor<T>> {
    match (features.rank(), scale) {
        (2, _) => Ok(features.clone()),
        (4, Window::Global) => global_avg_pool(features),
        (4, Window::Size(s)) => avg_pool2d(features, s),
        (r, _) => Err(Error::shape("scale_features", format!("expected rank 2 or 4, got {r}"))),
    }
}

/// Provenance recorded alongside a curve set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub m: usize,
    pub metric: Metric,
    pub n: usize,
    pub dataset: String,
    pub model: String,
}

/// Class similarity for every (tap, scale) pair: `values[i][s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CSCurveSet {
    pub scales: Vec<Window>,
    pub layer_indices: Vec<usize>,
    pub layer_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub meta: CurveMeta,
}

impl CSCurveSet {
    pub fn num_taps(&self) -> usize {
        self.layer_indices.len()
    }

    /// CS across taps at scale column `s`.
    pub fn column(&self, s: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[s]).collect()
    }

    pub fn scale_position(&self, scale: Window) -> Option<usize> {
        self.scales.iter().position(|&w| w == scale)
    }

    pub fn value(&self, layer_index: usize, scale: Window) -> Option<f64> {
        let i = self.layer_indices.iter().position(|&l| l == layer_index)?;
        Some(self.values[i][self.scale_position(scale)?])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub scales: Vec<Window>,
    pub m: usize,
    pub metric: Metric,
    /// Samples kept after stratified subsampling.
    pub max_samples: usize,
    pub batch_size: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            scales: default_scales(),
            m: 10,
            metric: Metric::Euclidean,
            max_samples: 1000,
            batch_size: 100,
        }
    }
}

/// Identity, 2x, 4x, 8x and global pooling.
pub fn default_scales() -> Vec<Window> {
    vec![Window::Size(1), Window::Size(2), Window::Size(4), Window::Size(8), Window::Global]
}

/// Computes every (tap, scale) cell of an already captured feature set.
pub fn curves_from_features(features: &FeatureSet, scales: &[Window], m: usize, metric: Metric) -> Result<CSCurveSet> {
    features.validate()?;
    if scales.is_empty() {
        return Err(Error::invalid("at least one scale is required"));
    }
    let cells: Vec<(usize, usize)> = (0..features.taps.len())
        .flat_map(|t| (0..scales.len()).map(move |s| (t, s)))
        .collect();
    let cs = cells
        .par_iter()
        .map(|&(t, s)| {
            let scaled = scale_features(&features.taps[t].features, scales[s])?;
            let graph = build_knn(&scaled, m, metric)?;
            class_similarity(&graph, &features.labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CSCurveSet {
        scales: scales.to_vec(),
        layer_indices: features.taps.iter().map(|t| t.layer_index).collect(),
        layer_names: features.taps.iter().map(|t| t.name.clone()).collect(),
        values: cs.chunks(scales.len()).map(<[f64]>::to_vec).collect(),
        meta: CurveMeta {
            m,
            metric,
            n: features.num_samples(),
            ..CurveMeta::default()
        },
    })
}

/// Up to `max` sample indices, balanced across classes by taking the next
/// unused sample of each class in turn. Returned in ascending order.
pub fn stratified_indices(labels: &[usize], max: usize) -> Vec<usize> {
    if labels.len() <= max {
        return (0..labels.len()).collect();
    }
    let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut picked = Vec::with_capacity(max);
    let mut round = 0;
    while picked.len() < max {
        for class in &per_class {
            if picked.len() == max {
                break;
            }
            if let Some(&i) = class.get(round) {
                picked.push(i);
            }
        }
        round += 1;
    }
    picked.sort_unstable();
    picked
}

/// Runs the model in eval mode over `images` in batches and captures every tap.
pub fn capture_features(model: &Model<f32>, images: &Tensor<f32>, labels: &[usize], batch_size: usize) -> Result<FeatureSet> {
    let n = images.batch();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} images", labels.len())));
    }
    let batch_size = batch_size.max(1);
    let mut per_tap: Vec<Vec<Tensor<f32>>> = Vec::new();
    for start in (0..n).step_by(batch_size) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let (_, taps) = model.forward_with_taps(&images.select(&idx))?;
        if per_tap.is_empty() {
            per_tap = vec![Vec::new(); taps.len()];
        }
        for (acc, t) in per_tap.iter_mut().zip(taps) {
            acc.push(t);
        }
    }
    let names = model.tap_names();
    let taps = per_tap
        .into_iter()
        .zip(names)
        .enumerate()
        .map(|(i, (parts, name))| {
            Ok(Tap {
                layer_index: i,
                name,
                features: Tensor::concat(&parts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSet::new(taps, labels.to_vec())
}

/// Full multi-scale class-similarity analysis of a model over a labelled set.
pub fn classrepsim(model: &Model<f32>, images: &Tensor<f32>, labels: &[usize], config: &AnalysisConfig) -> Result<CSCurveSet> {
    if config.max_samples <= config.m {
        return Err(Error::invalid(format!(
            "max_samples ({}) must exceed m ({})",
            config.max_samples, config.m
        )));
    }
    let idx = stratified_indices(labels, config.max_samples);
    let images = images.select(&idx);
    let labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let features = capture_features(model, &images, &labels, config.batch_size)?;
    curves_from_features(&features, &config.scales, config.m, config.metric)
}

/// For each stage (a range of layer indices), the scale with the highest
/// mean CS over the stage's taps. Ties go to the smaller window.
pub fn peak_scale(curves: &CSCurveSet, stage_tap_ranges: &[Range<usize>]) -> Result<Vec<Window>> {
    let mut order: Vec<usize> = (0..curves.scales.len()).collect();
    order.sort_by_key(|&s| curves.scales[s].sort_key());
    stage_tap_ranges
        .iter()
        .map(|range| {
            let rows: Vec<&Vec<f64>> = curves
                .layer_indices
                .iter()
                .zip(&curves.values)
                .filter(|(l, _)| range.contains(l))
                .map(|(_, row)| row)
                .collect();
            if rows.is_empty() || order.is_empty() {
                return Err(Error::invalid(format!("no taps in stage range {range:?}")));
            }
            let mean = |s: usize| rows.iter().map(|r| r[s]).sum::<f64>() / rows.len() as f64;
            let mut best = order[0];
            let mut best_val = mean(best);
            for &s in &order[1..] {
                let v = mean(s);
                if v > best_val {
                    best = s;
                    best_val = v;
                }
            }
            Ok(curves.scales[best])
        })
        .collect()
}

/// Pearson correlation of two CS curves. A constant curve has no defined
/// correlation and is reported as an error.
pub fn curve_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("curve lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::invalid("correlation is undefined for a constant curve"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curves(values: Vec<Vec<f64>>, scales: Vec<Window>) -> CSCurveSet {
        CSCurveSet {
            layer_indices: (0..values.len()).collect(),
            layer_names: (0..values.len()).map(|i| format!("t{i}")).collect(),
            values,
            scales,
            meta: CurveMeta::default(),
        }
    }

    #[test]
    fn scale_features_cases() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 8, 8], |i| i as f32);
        assert_eq!(scale_features(&x, Window::Size(1)).unwrap(), x);
        let g = scale_features(&x, Window::Global).unwrap();
        assert_eq!(g.shape(), &[2, 3, 1, 1]);
        for k in 0..6 {
            let mean = (0..64).map(|j| (k * 64 + j) as f64).sum::<f64>() / 64.0;
            assert!((g.data()[k] as f64 - mean).abs() < 1e-4);
        }
        let logits = Tensor::<f32>::from_fn(&[4, 10], |i| i as f32);
        assert_eq!(scale_features(&logits, Window::Size(8)).unwrap(), logits);
    }

    #[test]
    fn peak_scale_examples() {
        let scales = default_scales();
        // GLOBAL dominates everywhere.
        let c = curves(vec![vec![0.1, 0.2, 0.3, 0.4, 0.9]; 6], scales.clone());
        let r = peak_scale(&c, &[0..2, 2..4, 4..6]).unwrap();
        assert_eq!(r, vec![Window::Global; 3]);
        // Stage-wise maxima at 8, 4, 8.
        let c = curves(
            vec![
                vec![0.5, 0.6, 0.7, 0.8, 0.7],
                vec![0.5, 0.6, 0.7, 0.9, 0.7],
                vec![0.5, 0.6, 0.9, 0.8, 0.7],
                vec![0.5, 0.6, 0.8, 0.8, 0.7],
                vec![0.5, 0.6, 0.7, 0.95, 0.7],
                vec![0.5, 0.6, 0.7, 0.8, 0.7],
            ],
            scales.clone(),
        );
        let r = peak_scale(&c, &[0..2, 2..4, 4..6]).unwrap();
        assert_eq!(r, vec![Window::Size(8), Window::Size(4), Window::Size(8)]);
        // Tie between 4 and 8, listed in reverse order.
        let c = curves(vec![vec![0.9, 0.9, 0.1]], vec![Window::Size(8), Window::Size(4), Window::Size(1)]);
        assert_eq!(peak_scale(&c, &[0..1]).unwrap(), vec![Window::Size(4)]);
        assert!(peak_scale(&c, &[5..7]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let a = [0.9, 0.85, 0.88, 0.93, 0.99];
        assert!((curve_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| 3.0 - 2.0 * v).collect();
        assert!((curve_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(curve_correlation(&a, &[0.5; 5]).is_err());
        assert!(curve_correlation(&a, &a[..3]).is_err());
    }

    #[test]
    fn stratified_subsample_is_balanced() {
        let labels: Vec<usize> = (0..100).map(|i| if i < 70 { 0 } else { 1 + i % 2 }).collect();
        let idx = stratified_indices(&labels, 30);
        assert_eq!(idx.len(), 30);
        let count = |c| idx.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(0), count(1), count(2)), (10, 10, 10));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(stratified_indices(&labels, 500).len(), 100);
    }

    #[test]
    fn feature_set_rejects_bad_layout() {
        let tap = |i, n| Tap {
            layer_index: i,
            name: format!("t{i}"),
            features: Tensor::zeros(&[n, 2]),
        };
        assert!(FeatureSet::new(vec![tap(0, 3), tap(1, 3)], vec![0, 1, 0]).is_ok());
        assert!(FeatureSet::new(vec![tap(0, 3), tap(1, 4)], vec![0, 1, 0]).is_err());
        assert!(FeatureSet::new(vec![tap(1, 3), tap(1, 3)], vec![0, 1, 0]).is_err());
    }
}
