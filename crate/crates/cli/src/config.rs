//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use classrepsim::analysis::{default_scales, Metric};
use classrepsim::data::{SynthConfig, Split};
use classrepsim::nn::{AttentionKind, AttentionSpec, ModelSpec, Placement, StageSpec, Window};
use classrepsim::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
    pub data: DataConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// 3 stages x 3 blocks, widths 16/32/64.
    #[default]
    Resnet20,
    /// 3 stages x 1 block, widths 8/16/32.
    Desk,
    /// Explicit `stages` and `channels`.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    pub window: Window,
    pub k1: usize,
    pub k2: usize,
    pub placement: Placement,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            kind: AttentionKind::None,
            window: Window::Size(8),
            k1: 3,
            k2: 3,
            placement: Placement::Standard,
        }
    }
}

impl AttentionConfig {
    pub fn to_spec(self) -> AttentionSpec {
        AttentionSpec {
            kind: self.kind,
            window: self.window,
            k1: self.k1,
            k2: self.k2,
            placement: self.placement,
        }
    }
}

/// Replaces the attention of one stage (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    pub stage: usize,
    pub attention: AttentionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Blocks per stage (custom arch only).
    pub stages: Vec<usize>,
    /// Channels per stage (custom arch only).
    pub channels: Vec<usize>,
    pub width_multiplier: f64,
    pub depth_multiplier: usize,
    pub attention: AttentionConfig,
    pub stage_override: Vec<StageOverride>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Resnet20,
            stages: Vec::new(),
            channels: Vec::new(),
            width_multiplier: 1.0,
            depth_multiplier: 1,
            attention: AttentionConfig::default(),
            stage_override: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub scales: Vec<Window>,
    pub m: usize,
    pub metric: Metric,
    pub max_samples: usize,
    pub batch_size: usize,
    pub split: Split,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            scales: default_scales(),
            m: 10,
            metric: Metric::Euclidean,
            max_samples: 1000,
            batch_size: 100,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Cifar10,
    #[default]
    Synth,
    Dump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CIFAR-10 directory or feature-dump file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Samples per class in the synthetic test split.
    pub synth_test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            path: None,
            synth: SynthConfig::default(),
            synth_test_per_class: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

/// `(channels, side, classes)` of the configured input data.
pub fn input_geometry(data: &DataConfig) -> (usize, usize, usize) {
    match data.source {
        DataSource::Cifar10 => (3, 32, 10),
        DataSource::Synth | DataSource::Dump => (data.synth.channels, data.synth.size, data.synth.classes),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.model_spec()?;
        if self.analysis.scales.is_empty() {
            return Err(ConfigError("analysis.scales must not be empty".into()).into());
        }
        if self.analysis.max_samples <= self.analysis.m {
            return Err(ConfigError(format!(
                "analysis.max_samples ({}) must exceed analysis.m ({})",
                self.analysis.max_samples, self.analysis.m
            ))
            .into());
        }
        Ok(())
    }

    /// Network description for the configured data geometry.
    pub fn model_spec(&self) -> anyhow::Result<ModelSpec> {
        let m = &self.model;
        let (blocks, channels) = match m.arch {
            Arch::Resnet20 => (vec![3, 3, 3], vec![16, 32, 64]),
            Arch::Desk => (vec![1, 1, 1], vec![8, 16, 32]),
            Arch::Custom => (m.stages.clone(), m.channels.clone()),
        };
        if m.arch != Arch::Custom && (!m.stages.is_empty() || !m.channels.is_empty()) {
            return Err(ConfigError("model.stages/model.channels require arch = \"custom\"".into()).into());
        }
        if blocks.is_empty() || blocks.len() != channels.len() {
            return Err(ConfigError(format!(
                "model.stages ({}) and model.channels ({}) must be non-empty and equally long",
                blocks.len(),
                channels.len()
            ))
            .into());
        }
        let (in_ch, size, classes) = input_geometry(&self.data);
        let mut spec = ModelSpec {
            stages: blocks
                .iter()
                .zip(&channels)
                .map(|(&num_blocks, &channels)| StageSpec {
                    num_blocks,
                    channels,
                    attention: m.attention.to_spec(),
                })
                .collect(),
            input_channels: in_ch,
            input_size: size,
            num_classes: classes,
            width_multiplier: m.width_multiplier,
            depth_multiplier: m.depth_multiplier,
        };
        for o in &m.stage_override {
            if o.stage == 0 || o.stage > spec.stages.len() {
                return Err(ConfigError(format!(
                    "stage_override.stage {} outside 1..={}",
                    o.stage,
                    spec.stages.len()
                ))
                .into());
            }
            spec.stages[o.stage - 1].attention = o.attention.to_spec();
        }
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
            [model]
            arch = "custom"
            stages = [1, 2]
            channels = [4, 8]
            [model.attention]
            kind = "stac"
            window = "global"
            placement = "post"
            [[model.stage_override]]
            stage = 2
            attention = { kind = "stac", window = 2, k1 = 1, k2 = 3 }
            [train]
            epochs = 3
            warmup_epochs = 1
            [analysis]
            scales = [1, 2, "global"]
            metric = "cosine"
            [data]
            source = "synth"
            synth = { classes = 3, size = 8 }
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.stages[0].attention.window, Window::Global);
        assert_eq!(spec.stages[1].attention.window, Window::Size(2));
        assert_eq!(spec.num_classes, 3);
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::parse("[modle]\n").is_err());
        assert!(RunConfig::parse("[model]\nstages = [1]\n").is_err());
    }
}
