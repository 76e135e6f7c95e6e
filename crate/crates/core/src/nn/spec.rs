//! Declarative network descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ops::pool_geometry;

/// Side length of a non-overlapping pooling window, or the whole map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Window {
    Size(usize),
    Global,
}

impl Window {
    /// Pooling window to use on an `h x w` map.
    pub fn resolve(self, h: usize, w: usize) -> usize {
        match self {
            Window::Size(s) => s,
            Window::Global => h.max(w),
        }
    }

    /// Spatial size of the pooled map.
    pub fn pooled_dims(self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, oh, ow) = pool_geometry(h, w, self.resolve(h, w));
        (oh, ow)
    }

    /// Ordering key: `Size(k)` by `k`, `Global` after every size.
    pub fn sort_key(self) -> usize {
        match self {
            Window::Size(s) => s,
            Window::Global => usize::MAX,
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Size(s) => write!(f, "{s}"),
            Window::Global => f.write_str("global"),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("global") || t.eq_ignore_ascii_case("gap") {
            return Ok(Window::Global);
        }
        match t.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(Window::Size(v)),
            _ => Err(Error::invalid(format!(
                "window must be a positive integer or \"global\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Window::Size(v) => s.serialize_u64(*v as u64),
            Window::Global => s.serialize_str("global"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) if v >= 1 => Ok(Window::Size(v as usize)),
            Raw::Int(v) => Err(serde::de::Error::custom(format!("window must be >= 1, got {v}"))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    None,
    Stac,
    Senet,
}

/// Where the attention module sits relative to the skip connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// On the residual branch, before the skip addition.
    #[default]
    Standard,
    /// After the skip addition and its ReLU.
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub kind: AttentionKind,
    pub window: Window,
    pub k1: usize,
    pub k2: usize,
    pub placement: Placement,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        Self::none()
    }
}

/// Attention parameters after resolving SENet and global-window defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResolvedAttention {
    pub kind: AttentionKind,
    pub window: Window,
    pub k1: usize,
    pub k2: usize,
    pub placement: Placement,
}

impl AttentionSpec {
    pub fn none() -> Self {
        Self {
            kind: AttentionKind::None,
            window: Window::Global,
            k1: 1,
            k2: 1,
            placement: Placement::Standard,
        }
    }

    pub fn stac(window: Window, k1: usize, k2: usize, placement: Placement) -> Self {
        Self {
            kind: AttentionKind::Stac,
            window,
            k1,
            k2,
            placement,
        }
    }

    pub fn senet(placement: Placement) -> Self {
        Self {
            kind: AttentionKind::Senet,
            window: Window::Global,
            k1: 1,
            k2: 1,
            placement,
        }
    }

    /// `None` when no attention is configured. SENet always resolves to a
    /// global window with 1x1 kernels, and so does STAC with a global window.
    pub fn resolve(&self) -> Option<ResolvedAttention> {
        let (window, k1, k2) = match self.kind {
            AttentionKind::None => return None,
            AttentionKind::Senet => (Window::Global, 1, 1),
            AttentionKind::Stac if self.window == Window::Global => (Window::Global, 1, 1),
            AttentionKind::Stac => (self.window, self.k1, self.k2),
        };
        Some(ResolvedAttention {
            kind: self.kind,
            window,
            k1,
            k2,
            placement: self.placement,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttentionKind::None {
            return Ok(());
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::invalid(format!("attention {name} must be odd, got {k}")));
            }
        }
        if self.window == Window::Size(0) {
            return Err(Error::invalid("attention window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub num_blocks: usize,
    pub channels: usize,
    pub attention: AttentionSpec,
}

/// A CIFAR-style ResNet: 3x3 neck, stages of basic residual blocks (the
/// first block of every stage after the first downsamples by 2), global
/// average pooling and a linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub stages: Vec<StageSpec>,
    pub input_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub width_multiplier: f64,
    pub depth_multiplier: usize,
}

/// A stage after applying width/depth multipliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveStage {
    pub num_blocks: usize,
    pub channels: usize,
    pub attention: AttentionSpec,
    pub stride: usize,
    /// Spatial size of the stage's feature maps for `input_size` inputs.
    pub spatial: usize,
}

/// One residual block's static shape information.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockLayout {
    pub stage: usize,
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub in_size: usize,
    pub out_size: usize,
    pub attention: Option<ResolvedAttention>,
}

impl BlockLayout {
    pub fn name(&self) -> String {
        format!("stage{}.block{}", self.stage + 1, self.index + 1)
    }

    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

impl ModelSpec {
    /// ResNet with `blocks` basic blocks per stage and channel widths
    /// `base, 2*base, 4*base, ...`.
    pub fn resnet(
        blocks: &[usize],
        base_width: usize,
        input_channels: usize,
        input_size: usize,
        num_classes: usize,
    ) -> Self {
        let stages = blocks
            .iter()
            .enumerate()
            .map(|(i, &b)| StageSpec {
                num_blocks: b,
                channels: base_width << i,
                attention: AttentionSpec::none(),
            })
            .collect();
        Self {
            stages,
            input_channels,
            input_size,
            num_classes,
            width_multiplier: 1.0,
            depth_multiplier: 1,
        }
    }

    /// ResNet20 for 32x32 RGB inputs: 3 stages x 3 blocks, widths 16/32/64.
    pub fn resnet20(num_classes: usize) -> Self {
        Self::resnet(&[3, 3, 3], 16, 3, 32, num_classes)
    }

    pub fn with_attention(mut self, attention: AttentionSpec) -> Self {
        for s in &mut self.stages {
            s.attention = attention;
        }
        self
    }

    pub fn with_stage_attention(mut self, stage: usize, attention: AttentionSpec) -> Self {
        self.stages[stage].attention = attention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("model needs at least one stage"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.num_blocks == 0 || s.channels == 0 {
                return Err(Error::invalid(format!(
                    "stage {} must have positive blocks and channels, got {} blocks x {} channels",
                    i + 1,
                    s.num_blocks,
                    s.channels
                )));
            }
            s.attention.validate()?;
        }
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::invalid("input channels and size must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::invalid("width multiplier must be positive"));
        }
        if self.depth_multiplier == 0 {
            return Err(Error::invalid("depth multiplier must be positive"));
        }
        let factor = 1usize << (self.stages.len() - 1);
        if !self.input_size.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "input size {} is not divisible by the total stride {factor}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn scaled_channels(&self, c: usize) -> usize {
        ((c as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn effective_stages(&self) -> Vec<EffectiveStage> {
        let mut spatial = self.input_size;
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let stride = if i == 0 { 1 } else { 2 };
                spatial = spatial.div_ceil(stride);
                EffectiveStage {
                    num_blocks: s.num_blocks * self.depth_multiplier,
                    channels: self.scaled_channels(s.channels),
                    attention: s.attention,
                    stride,
                    spatial,
                }
            })
            .collect()
    }

    pub fn neck_channels(&self) -> usize {
        self.scaled_channels(self.stages[0].channels)
    }

    pub fn blocks(&self) -> Vec<BlockLayout> {
        let mut out = Vec::new();
        let mut in_channels = self.neck_channels();
        let mut size = self.input_size;
        for (si, st) in self.effective_stages().into_iter().enumerate() {
            for b in 0..st.num_blocks {
                let stride = if b == 0 { st.stride } else { 1 };
                let out_size = size.div_ceil(stride);
                out.push(BlockLayout {
                    stage: si,
                    index: b,
                    in_channels,
                    out_channels: st.channels,
                    stride,
                    in_size: size,
                    out_size,
                    attention: st.attention.resolve(),
                });
                in_channels = st.channels;
                size = out_size;
            }
        }
        out
    }

    pub fn total_blocks(&self) -> usize {
        self.effective_stages().iter().map(|s| s.num_blocks).sum()
    }

    pub fn final_channels(&self) -> usize {
        self.effective_stages().last().map_or(0, |s| s.channels)
    }

    /// Feature-map side length of the last stage.
    pub fn final_spatial(&self) -> usize {
        self.effective_stages().last().map_or(0, |s| s.spatial)
    }

    /// Layer indices of each stage's block outputs. Index 0 is the input,
    /// 1 the neck, then one index per block.
    pub fn stage_tap_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 2;
        self.effective_stages()
            .iter()
            .map(|s| {
                let r = start..start + s.num_blocks;
                start += s.num_blocks;
                r
            })
            .collect()
    }

    /// Names of every tap in layer-index order.
    pub fn tap_names(&self) -> Vec<String> {
        let mut names = vec!["input".to_string(), "neck".to_string()];
        names.extend(self.blocks().iter().map(BlockLayout::name));
        names.push("gap".into());
        names.push("logits".into());
        names
    }
}
