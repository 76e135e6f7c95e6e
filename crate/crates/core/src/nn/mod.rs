//! CIFAR-style ResNet builder with pluggable attention gates.

pub mod attention;
mod model;
pub mod spec;

pub use attention::{attention_map, senet_forward, stac_forward, AttentionVars};
pub use model::{build_model, Forward, Mode, Model, RunningStats};
pub use spec::{
    AttentionKind, AttentionSpec, BlockLayout, EffectiveStage, ModelSpec, Placement,
    ResolvedAttention, StageSpec, Window,
};
