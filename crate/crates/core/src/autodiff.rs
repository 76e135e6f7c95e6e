//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with
//! the data the backward pass needs. [`Tape::backward`] walks the record in
//! reverse and returns the gradient of a scalar loss with respect to every
//! node that requires one. Trainable values live in a [`ParamStore`]; their
//! gradient buffers are accumulated by [`ParamStore::accumulate`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Whether weight decay applies (conv/linear weights only).
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            decay,
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Adds the gradients of every parameter leaf on `tape` into the
    /// corresponding parameter's `grad` buffer.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        for (i, node) in tape.nodes.iter().enumerate() {
            let (Some(pid), Some(g)) = (node.param, grads.grads[i].as_ref()) else {
                continue;
            };
            for (a, &b) in self.params[pid.0].grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        input: Var,
        window: usize,
    },
    Upsample {
        input: Var,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache<T>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Operation record for reverse-mode differentiation.
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which no leaf requires a gradient.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).value.clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(
            value.is_finite() || inputs.iter().any(|v| !self.nodes[v.0].value.is_finite()),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &inputs,
        ))
    }

    pub fn avg_pool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let value = ops::avg_pool2d(self.value(input), window)?;
        Ok(self.push(value, Op::AvgPool { input, window }, &[input]))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(input).dims4()?;
        self.avg_pool2d(input, h.max(w))
    }

    pub fn upsample_to(&mut self, input: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let value = ops::upsample_to(self.value(input), target_h, target_w)?;
        Ok(self.push(value, Op::Upsample { input }, &[input]))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let value = ops::upsample_nearest(self.value(input), factor)?;
        Ok(self.push(value, Op::Upsample { input }, &[input]))
    }

    /// Training-mode batch norm. Returns the output and the batch statistics
    /// so the caller can update running estimates.
    pub fn batchnorm2d_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, &BatchNormCache<T>)> {
        let (value, cache) = ops::batchnorm2d_train(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let v = self.push(
            value,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                cache,
            },
            &[input, gamma, beta],
        );
        let Op::BatchNormTrain { cache, .. } = &self.nodes[v.0].op else {
            unreachable!()
        };
        Ok((v, cache))
    }

    pub fn batchnorm2d_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let value = ops::batchnorm2d_eval(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let mean = running_mean.data().iter().map(|v| v.as_f64()).collect();
        let inv_std = running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v.as_f64() + eps).sqrt())
            .collect();
        Ok(self.push(
            value,
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let value = ops::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, &inputs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `[N, C, 1, 1]` (or any `[N, ...]`) to `[N, F]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let shape = [t.batch(), t.sample_len()];
        self.reshape(x, &shape)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).sum();
        self.push(Tensor::scalar(T::of_f64(s)), Op::Sum(x), &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(T::of_f64(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass followed by [`ParamStore::accumulate`].
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        store.accumulate(self, &grads);
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let cg = ops::conv2d_backward(self.value(*input), self.value(*weight), *stride, *padding, g)?;
                send(*input, cg.input);
                send(*weight, cg.weight);
                if let Some(b) = bias {
                    send(*b, cg.bias);
                }
            }
            Op::AvgPool { input, window } => {
                send(*input, ops::avg_pool2d_backward(self.value(*input).shape(), *window, g)?);
            }
            Op::Upsample { input } => {
                send(*input, ops::upsample_to_backward(self.value(*input).shape(), g)?);
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                cache,
            } => {
                let bg = ops::batchnorm2d_train_backward(cache, self.value(*gamma), g)?;
                send(*input, bg.input);
                send(*gamma, bg.gamma);
                send(*beta, bg.beta);
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let x = self.value(*input);
                let (_, c, h, w) = x.dims4()?;
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                let dx = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .enumerate()
                    .map(|(i, (&xv, &gv))| {
                        let ch = (i / hw) % c;
                        let gv64 = gv.as_f64();
                        dbeta[ch] += gv64;
                        dgamma[ch] += gv64 * (xv.as_f64() - mean[ch]) * inv_std[ch];
                        T::of_f64(gv64 * gam[ch].as_f64() * inv_std[ch])
                    })
                    .collect();
                send(*input, Tensor::from_parts(x.shape().to_vec(), dx));
                send(*gamma, Tensor::from_parts(vec![c], dgamma.into_iter().map(T::of_f64).collect()));
                send(*beta, Tensor::from_parts(vec![c], dbeta.into_iter().map(T::of_f64).collect()));
            }
            Op::Relu(x) => send(*x, ops::relu_backward(self.value(*x), g)),
            Op::Sigmoid(x) => send(*x, ops::sigmoid_backward(&node.value, g)),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ga, gb) = ops::mul_backward(self.value(*a), self.value(*b), g)?;
                send(*a, ga);
                send(*b, gb);
            }
            Op::Linear { input, weight, bias } => {
                let lg = ops::linear_backward(self.value(*input), self.value(*weight), g)?;
                send(*input, lg.input);
                send(*weight, lg.weight);
                if let Some(b) = bias {
                    send(*b, lg.bias);
                }
            }
            Op::Reshape(x) => {
                send(*x, g.reshape(self.value(*x).shape())?);
            }
            Op::Sum(x) => {
                send(*x, Tensor::full(self.value(*x).shape(), g.data()[0]));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let shape = self.value(*logits).shape().to_vec();
                let (n, k) = (shape[0], shape[1]);
                let scale = g.data()[0].as_f64() / n as f64;
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let onehot = if labels[i / k] == i % k { 1.0 } else { 0.0 };
                        T::of_f64((p - onehot) * scale)
                    })
                    .collect();
                send(*logits, Tensor::from_parts(shape, data));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gives_twice_x() {
        let mut tape = Tape::<f64>::new();
        let xv = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
        let x = tape.leaf(xv.clone(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        for (gv, xv) in g.get(x).unwrap().data().iter().zip(xv.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[2, 2]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_accumulation_is_additive() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_fn(&[3], |i| i as f64), true).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let s = tape.sum(w);
            tape.backward_into(s, &mut store).unwrap();
        }
        assert!(store.get(id).grad.data().iter().all(|&v| v == 2.0));
        store.zero_grads();
        assert!(store.get(id).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::ones(&[1]), false).unwrap();
        assert!(store.add("a", Tensor::ones(&[1]), false).is_err());
    }

    #[test]
    fn inference_tape_has_no_gradients() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::ones(&[2]), true).unwrap();
        let mut tape = Tape::inference();
        let w = tape.param(&store, id);
        let s = tape.sum(w);
        assert!(!tape.requires_grad(s));
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).is_none());
    }
}
