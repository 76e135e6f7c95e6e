//! Multi-scale class-similarity (CS) analysis of layer activations.
//!
//! For every tap and pooling scale, features are average-pooled, a directed
//! kNN graph is built over the samples and CS is the fraction of edges that
//! join two samples of the same class.

mod curves;
mod knn;
mod toy;

pub use curves::{
    capture_features, classrepsim, curve_correlation, curves_from_features, default_scales, peak_scale,
    scale_features, stratified_indices, AnalysisConfig, CSCurveSet, CurveMeta, FeatureSet, Tap,
};
pub use knn::{build_knn, class_similarity, KnnGraph, Metric};
pub use toy::{
    toy_separation, toy_sweep, toy_transition_dataset, ToyPoint, TOY_END_SEPARATION, TOY_START_SEPARATION,
};
