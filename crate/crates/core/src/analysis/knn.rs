use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`. A zero vector is at distance 1 from everything.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (euclidean|cosine)"))),
        }
    }
}

/// Directed kNN graph: row `n` lists the `m` nearest other samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub neighbor_indices: Vec<Vec<usize>>,
    pub neighbor_distances: Vec<Vec<f64>>,
    pub metric: Metric,
    pub m: usize,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_indices.is_empty()
    }
}

fn rows<T: Element>(features: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..features.batch())
        .map(|n| features.sample(n).iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (na * nb)
}

/// Exact `m`-nearest-neighbour graph over the per-sample flattened features.
/// Self-matches are excluded and equal distances are ordered by ascending
/// sample index.
pub fn build_knn<T: Element>(features: &Tensor<T>, m: usize, metric: Metric) -> Result<KnnGraph> {
    let n = features.batch();
    if m == 0 {
        return Err(Error::invalid("kNN needs m >= 1"));
    }
    if m >= n {
        return Err(Error::invalid(format!("kNN needs m < N, got m={m} with N={n}")));
    }
    let x = rows(features);
    let norms: Vec<f64> = match metric {
        Metric::Cosine => x.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect(),
        Metric::Euclidean => Vec::new(),
    };
    let dist = |i: usize, j: usize| match metric {
        Metric::Euclidean => euclidean(&x[i], &x[j]),
        Metric::Cosine => cosine(&x[i], &x[j], norms[i], norms[j]),
    };

    // Upper triangle only; both metrics are symmetric.
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| dist(i, j)).collect())
        .collect();
    let lookup = |i: usize, j: usize| {
        if i < j {
            upper[i][j - i - 1]
        } else {
            upper[j][i - j - 1]
        }
    };

    let (neighbor_indices, neighbor_distances) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (lookup(i, j), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(m - 1, cmp);
            cand.truncate(m);
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(d, j)| (j, d)).unzip::<_, _, Vec<_>, Vec<_>>()
        })
        .unzip();
    Ok(KnnGraph {
        neighbor_indices,
        neighbor_distances,
        metric,
        m,
    })
}

/// Fraction of directed edges whose endpoints share a label.
pub fn class_similarity(graph: &KnnGraph, labels: &[usize]) -> Result<f64> {
    if labels.len() != graph.len() {
        return Err(Error::invalid(format!(
            "{} labels for a graph over {} samples",
            labels.len(),
            graph.len()
        )));
    }
    let hits: usize = graph
        .neighbor_indices
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().filter(|&&j| labels[j] == labels[i]).count())
        .sum();
    Ok(hits as f64 / (graph.m * graph.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let x = Tensor::<f64>::new(&[3, 1], vec![0.0, 1.0, 3.0]).unwrap();
        let g = build_knn(&x, 1, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbor_indices, vec![vec![1], vec![0], vec![1]]);
        assert_eq!(g.neighbor_distances, vec![vec![1.0], vec![1.0], vec![2.0]]);
    }

    #[test]
    fn complete_graph_and_ties() {
        // All points equidistant from 0 via ties: index order decides.
        let x = Tensor::<f64>::new(&[4, 1], vec![0.0, 1.0, -1.0, 1.0]).unwrap();
        let g = build_knn(&x, 3, Metric::Euclidean).unwrap();
        assert_eq!(g.neighbor_indices[0], vec![1, 2, 3]);
        for (i, row) in g.neighbor_indices.iter().enumerate() {
            let mut r = row.clone();
            r.sort_unstable();
            assert_eq!(r, (0..4).filter(|&j| j != i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn m_must_be_below_n() {
        let x = Tensor::<f32>::zeros(&[3, 2]);
        assert!(build_knn(&x, 3, Metric::Euclidean).is_err());
        assert!(build_knn(&x, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn cosine_zero_vector() {
        let x = Tensor::<f64>::new(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.1]).unwrap();
        let g = build_knn(&x, 2, Metric::Cosine).unwrap();
        assert_eq!(g.neighbor_distances[0], vec![1.0, 1.0]);
        assert_eq!(g.neighbor_indices[1], vec![2, 0]);
    }

    #[test]
    fn class_similarity_examples() {
        let g = KnnGraph {
            neighbor_indices: vec![vec![1], vec![0], vec![3], vec![2]],
            neighbor_distances: vec![vec![0.0]; 4],
            metric: Metric::Euclidean,
            m: 1,
        };
        assert_eq!(class_similarity(&g, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(class_similarity(&g, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(class_similarity(&g, &[0, 1]).is_err());
    }

    #[test]
    fn hand_counted_graph() {
        // Labels a a a b b b; 7 of the 12 edges stay within a class.
        let labels = [0, 0, 0, 1, 1, 1];
        let rows = vec![
            vec![1, 2], // 2 same
            vec![0, 3], // 1
            vec![4, 5], // 0
            vec![4, 5], // 2
            vec![3, 0], // 1
            vec![1, 3], // 1
        ];
        let g = KnnGraph {
            neighbor_distances: vec![vec![0.0; 2]; 6],
            neighbor_indices: rows,
            metric: Metric::Euclidean,
            m: 2,
        };
        assert_eq!(class_similarity(&g, &labels).unwrap(), 7.0 / 12.0);
    }
}
