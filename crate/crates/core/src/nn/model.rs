use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::attention::{stac_forward, AttentionVars};
use crate::nn::spec::{AttentionKind, BlockLayout, ModelSpec, Placement, Window};
use crate::ops::{update_running_stats, BatchStats, BN_EPS, BN_MOMENTUM};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running estimates are updated.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Batch-norm running estimates, keyed by layer name.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Clone, Debug)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct AttentionLayer {
    c1_weight: ParamId,
    c1_bias: ParamId,
    c2_weight: ParamId,
    c2_bias: ParamId,
    window: Window,
    placement: Placement,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    skip: Option<ConvBn>,
    attention: Option<AttentionLayer>,
}

/// Output of a recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    /// Tap activations in layer-index order: input, neck, block outputs,
    /// pooled features `[N, C]`, logits.
    pub taps: Vec<Var>,
    /// Per-layer batch statistics (training mode only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// A built ResNet with its parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    spec: ModelSpec,
    params: ParamStore<T>,
    running: Vec<RunningStats<T>>,
    neck: ConvBn,
    blocks: Vec<Block>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

struct Builder<T> {
    params: ParamStore<T>,
    running: Vec<RunningStats<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> Builder<T> {
    fn he_normal(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in as f64).sqrt();
        let value = Tensor::randn(shape, std, &mut self.rng);
        self.params.add(name, value, true)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.params.add(name, Tensor::zeros(shape), false)
    }

    fn conv_bn(&mut self, prefix: &str, conv: &str, bn: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<ConvBn> {
        let weight = self.he_normal(format!("{prefix}.{conv}.weight"), &[cout, cin, k, k], cin * k * k)?;
        let gamma = self.params.add(format!("{prefix}.{bn}.gamma"), Tensor::ones(&[cout]), false)?;
        let beta = self.zeros(format!("{prefix}.{bn}.beta"), &[cout])?;
        self.running.push(RunningStats {
            name: format!("{prefix}.{bn}"),
            mean: Tensor::zeros(&[cout]),
            var: Tensor::ones(&[cout]),
        });
        Ok(ConvBn {
            weight,
            gamma,
            beta,
            stats: self.running.len() - 1,
            stride,
            padding: k / 2,
        })
    }

    fn attention(&mut self, prefix: &str, layout: &BlockLayout) -> Result<Option<AttentionLayer>> {
        let Some(att) = layout.attention else {
            return Ok(None);
        };
        let tag = match att.kind {
            AttentionKind::Senet => "senet",
            _ => "stac",
        };
        let c = layout.out_channels;
        let p = format!("{prefix}.{tag}");
        Ok(Some(AttentionLayer {
            c1_weight: self.he_normal(format!("{p}.c1.weight"), &[c, c, att.k1, att.k1], c * att.k1 * att.k1)?,
            c1_bias: self.zeros(format!("{p}.c1.bias"), &[c])?,
            c2_weight: self.he_normal(format!("{p}.c2.weight"), &[c, c, att.k2, att.k2], c * att.k2 * att.k2)?,
            c2_bias: self.zeros(format!("{p}.c2.bias"), &[c])?,
            window: att.window,
            placement: att.placement,
        }))
    }
}

/// Builds and initializes a model: fan-in scaled normal weights, zero
/// biases, unit batch-norm scale.
pub fn build_model<T: Element>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    Model::new(spec.clone(), seed)
}

impl<T: Element> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            running: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let neck = b.conv_bn("neck", "conv", "bn", spec.input_channels, spec.neck_channels(), 3, 1)?;
        let mut blocks = Vec::new();
        for layout in spec.blocks() {
            let prefix = layout.name();
            let (cin, cout) = (layout.in_channels, layout.out_channels);
            let conv1 = b.conv_bn(&prefix, "conv1", "bn1", cin, cout, 3, layout.stride)?;
            let conv2 = b.conv_bn(&prefix, "conv2", "bn2", cout, cout, 3, 1)?;
            let skip = if layout.has_projection() {
                Some(b.conv_bn(&format!("{prefix}.skip"), "conv", "bn", cin, cout, 1, layout.stride)?)
            } else {
                None
            };
            let attention = b.attention(&prefix, &layout)?;
            blocks.push(Block {
                conv1,
                conv2,
                skip,
                attention,
            });
        }
        let feat = spec.final_channels();
        let fc_std = (1.0 / feat as f64).sqrt();
        let fc_weight = b
            .params
            .add("fc.weight", Tensor::randn(&[feat, spec.num_classes], fc_std, &mut b.rng), true)?;
        let fc_bias = b.zeros("fc.bias".into(), &[spec.num_classes])?;
        Ok(Self {
            spec,
            params: b.params,
            running: b.running,
            neck,
            blocks,
            fc_weight,
            fc_bias,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    /// Number of scalar trainable parameters.
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Names of every tap in layer-index order.
    pub fn tap_names(&self) -> Vec<String> {
        self.spec.tap_names()
    }

    /// Parameter ids of all attention convolutions.
    pub fn attention_params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .filter_map(|b| b.attention.as_ref())
            .flat_map(|a| [a.c1_weight, a.c1_bias, a.c2_weight, a.c2_bias])
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.spec.input_channels {
            return Err(Error::shape(
                "model_forward",
                format!("model expects {} input channels, got {c}", self.spec.input_channels),
            ));
        }
        let factor = 1usize << (self.spec.stages.len() - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "model_forward",
                format!("input {h}x{w} is not divisible by the total stride {factor}"),
            ));
        }
        Ok(())
    }

    fn conv_bn(&self, tape: &mut Tape<T>, x: Var, cb: &ConvBn, mode: Mode, stats: &mut Vec<(usize, BatchStats)>) -> Result<Var> {
        let w = tape.param(&self.params, cb.weight);
        let y = tape.conv2d(x, w, None, cb.stride, cb.padding)?;
        let gamma = tape.param(&self.params, cb.gamma);
        let beta = tape.param(&self.params, cb.beta);
        match mode {
            Mode::Train => {
                let (out, cache) = tape.batchnorm2d_train(y, gamma, beta, BN_EPS)?;
                stats.push((cb.stats, cache.stats()));
                Ok(out)
            }
            Mode::Eval => {
                let rs = &self.running[cb.stats];
                tape.batchnorm2d_eval(y, gamma, beta, &rs.mean, &rs.var, BN_EPS)
            }
        }
    }

    fn attend(&self, tape: &mut Tape<T>, y: Var, att: &AttentionLayer) -> Result<Var> {
        let vars = AttentionVars {
            c1_weight: tape.param(&self.params, att.c1_weight),
            c1_bias: tape.param(&self.params, att.c1_bias),
            c2_weight: tape.param(&self.params, att.c2_weight),
            c2_bias: tape.param(&self.params, att.c2_bias),
        };
        stac_forward(tape, y, &vars, att.window)
    }

    fn block(&self, tape: &mut Tape<T>, x: Var, block: &Block, mode: Mode, stats: &mut Vec<(usize, BatchStats)>) -> Result<Var> {
        let h = self.conv_bn(tape, x, &block.conv1, mode, stats)?;
        let h = tape.relu(h);
        let mut h = self.conv_bn(tape, h, &block.conv2, mode, stats)?;
        let skip = match &block.skip {
            Some(cb) => self.conv_bn(tape, x, cb, mode, stats)?,
            None => x,
        };
        if let Some(att) = block.attention.as_ref().filter(|a| a.placement == Placement::Standard) {
            h = self.attend(tape, h, att)?;
        }
        let sum = tape.add(skip, h)?;
        let mut out = tape.relu(sum);
        if let Some(att) = block.attention.as_ref().filter(|a| a.placement == Placement::Post) {
            out = self.attend(tape, out, att)?;
        }
        Ok(out)
    }

    /// Records a forward pass of `input` (a `[N, C, H, W]` leaf) on `tape`.
    /// Training mode returns batch statistics instead of applying them; see
    /// [`Model::apply_batch_stats`].
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<Forward> {
        self.check_input(tape.value(input))?;
        let mut stats = Vec::new();
        let mut taps = vec![input];
        let h = self.conv_bn(tape, input, &self.neck, mode, &mut stats)?;
        let mut h = tape.relu(h);
        taps.push(h);
        for block in &self.blocks {
            h = self.block(tape, h, block, mode, &mut stats)?;
            taps.push(h);
        }
        let pooled = tape.global_avg_pool(h)?;
        let features = tape.flatten(pooled)?;
        taps.push(features);
        let w = tape.param(&self.params, self.fc_weight);
        let b = tape.param(&self.params, self.fc_bias);
        let logits = tape.linear(features, w, Some(b))?;
        taps.push(logits);
        Ok(Forward {
            logits,
            taps,
            batch_stats: stats,
        })
    }

    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (idx, s) in stats {
            let rs = &mut self.running[*idx];
            update_running_stats(s, &mut rs.mean, &mut rs.var, BN_MOMENTUM);
        }
    }

    /// Training-mode forward that also updates batch-norm running estimates.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let fwd = self.forward(tape, input, Mode::Train)?;
        self.apply_batch_stats(&fwd.batch_stats);
        Ok(fwd.logits)
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let input = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, input, Mode::Eval)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Eval-mode logits plus detached copies of every tap.
    pub fn forward_with_taps(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::inference();
        let input = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, input, Mode::Eval)?;
        let taps = fwd.taps.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.value(fwd.logits).clone(), taps))
    }
}
