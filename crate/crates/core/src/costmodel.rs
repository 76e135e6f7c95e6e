//! Static FLOPs and parameter counts.
//!
//! FLOPs are multiply-accumulates of convolutions and the classifier, each
//! counted once. Batch norm, activations, pooling, upsampling and gating
//! multiplications are free, as are bias additions. Parameters include
//! batch-norm scale and shift but not running statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelSpec, Window};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    /// Per-sample output shape (excluding the batch axis).
    pub output_shape: Vec<usize>,
    pub flops: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// `[C, H, W]` of one input sample.
    pub input_shape: Vec<usize>,
    pub total_flops: u64,
    pub total_params: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Tally {
    layers: Vec<LayerCost>,
}

impl Tally {
    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, out: usize, bias: bool) {
        let weights = (cout * cin * k * k) as u64;
        self.layers.push(LayerCost {
            name,
            kind: "conv".into(),
            output_shape: vec![cout, out, out],
            flops: weights * (out * out) as u64,
            params: weights + if bias { cout as u64 } else { 0 },
        });
    }

    fn bn(&mut self, name: String, c: usize, out: usize) {
        self.layers.push(LayerCost {
            name,
            kind: "batchnorm".into(),
            output_shape: vec![c, out, out],
            flops: 0,
            params: 2 * c as u64,
        });
    }
}

/// Per-layer cost breakdown for `spec` at its configured input size.
pub fn cost_report(spec: &ModelSpec) -> Result<CostReport> {
    spec.validate()?;
    let mut t = Tally { layers: Vec::new() };
    let size = spec.input_size;
    let neck = spec.neck_channels();
    t.conv("neck.conv".into(), spec.input_channels, neck, 3, size, false);
    t.bn("neck.bn".into(), neck, size);
    for b in spec.blocks() {
        let p = b.name();
        let (cin, cout, out) = (b.in_channels, b.out_channels, b.out_size);
        t.conv(format!("{p}.conv1"), cin, cout, 3, out, false);
        t.bn(format!("{p}.bn1"), cout, out);
        t.conv(format!("{p}.conv2"), cout, cout, 3, out, false);
        t.bn(format!("{p}.bn2"), cout, out);
        if b.has_projection() {
            t.conv(format!("{p}.skip.conv"), cin, cout, 1, out, false);
            t.bn(format!("{p}.skip.bn"), cout, out);
        }
        if let Some(att) = b.attention {
            let tag = match att.kind {
                crate::nn::AttentionKind::Senet => "senet",
                _ => "stac",
            };
            let (ph, pw) = att.window.pooled_dims(out, out);
            if ph != pw {
                return Err(Error::invalid("cost model expects square feature maps"));
            }
            t.conv(format!("{p}.{tag}.c1"), cout, cout, att.k1, ph, true);
            t.conv(format!("{p}.{tag}.c2"), cout, cout, att.k2, ph, true);
        }
    }
    let feat = spec.final_channels();
    let classes = spec.num_classes;
    t.layers.push(LayerCost {
        name: "fc".into(),
        kind: "linear".into(),
        output_shape: vec![classes],
        flops: (feat * classes) as u64,
        params: (feat * classes + classes) as u64,
    });
    Ok(CostReport {
        input_shape: vec![spec.input_channels, size, size],
        total_flops: t.layers.iter().map(|l| l.flops).sum(),
        total_params: t.layers.iter().map(|l| l.params).sum(),
        per_layer: t.layers,
    })
}

pub fn count_params(spec: &ModelSpec) -> Result<u64> {
    Ok(cost_report(spec)?.total_params)
}

/// FLOPs for one `input_size x input_size` sample.
pub fn count_flops(spec: &ModelSpec, input_size: usize) -> Result<u64> {
    let mut s = spec.clone();
    s.input_size = input_size;
    Ok(cost_report(&s)?.total_flops)
}

/// Pooled attention-map side for a window on a square map (helper for
/// reports).
pub fn pooled_side(window: Window, size: usize) -> usize {
    window.pooled_dims(size, size).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AttentionSpec, Placement};

    #[test]
    fn resnet20_base_counts() {
        let r = cost_report(&ModelSpec::resnet20(10)).unwrap();
        assert_eq!(r.total_params, 272_474);
        assert_eq!(r.total_flops, 40_813_184);
        assert_eq!(r.input_shape, vec![3, 32, 32]);
    }

    #[test]
    fn attention_costs() {
        let base = ModelSpec::resnet20(10);
        let se = base.clone().with_attention(AttentionSpec::senet(Placement::Standard));
        assert_eq!(count_params(&se).unwrap(), 305_402);
        assert_eq!(count_flops(&se, 32).unwrap(), 40_813_184 + 32_256);
        let w1 = base.clone().with_attention(AttentionSpec::stac(Window::Size(1), 3, 3, Placement::Standard));
        assert_eq!(count_flops(&w1, 32).unwrap(), 40_813_184 + 42_467_328);
        let w8 = base.with_attention(AttentionSpec::stac(Window::Size(8), 3, 3, Placement::Post));
        assert_eq!(count_flops(&w8, 32).unwrap(), 40_813_184 + 663_552);
        assert_eq!(count_params(&w8).unwrap(), 563_450);
    }

    #[test]
    fn json_round_trip() {
        let r = cost_report(&ModelSpec::resnet(&[1, 1], 4, 1, 8, 2)).unwrap();
        assert_eq!(CostReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn pooled_side_clamps() {
        assert_eq!(pooled_side(Window::Size(8), 8), 1);
        assert_eq!(pooled_side(Window::Size(3), 8), 3);
        assert_eq!(pooled_side(Window::Global, 32), 1);
    }
}
