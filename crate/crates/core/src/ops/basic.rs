use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Logistic sigmoid, clamped to the open interval `(0, 1)` so that the
/// output never rounds to exactly 0 or 1.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let hi = T::one() - T::epsilon() / T::of_f64(2.0);
    let lo = T::min_positive_value();
    x.map(|v| {
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

/// Gradient given the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Element>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// How the operands of [`mul`] line up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MulBroadcast {
    /// Identical shapes.
    Same,
    /// Left operand is `[N,C,1,1]`, right is `[N,C,H,W]`.
    ChannelLeft,
    /// Right operand is `[N,C,1,1]`, left is `[N,C,H,W]`.
    ChannelRight,
}

pub fn mul_broadcast_kind<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<MulBroadcast> {
    if a.shape() == b.shape() {
        return Ok(MulBroadcast::Same);
    }
    if let (Ok((an, ac, ah, aw)), Ok((bn, bc, bh, bw))) = (a.dims4(), b.dims4()) {
        if an == bn && ac == bc {
            if ah == 1 && aw == 1 {
                return Ok(MulBroadcast::ChannelLeft);
            }
            if bh == 1 && bw == 1 {
                return Ok(MulBroadcast::ChannelRight);
            }
        }
    }
    Err(Error::shape(
        "mul",
        format!(
            "cannot broadcast {:?} with {:?}; only equal shapes or [N,C,1,1] x [N,C,H,W] are allowed",
            a.shape(),
            b.shape()
        ),
    ))
}

/// Elementwise product with optional per-channel broadcast.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    match mul_broadcast_kind(a, b)? {
        MulBroadcast::Same => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), data))
        }
        MulBroadcast::ChannelLeft => Ok(channel_scale(b, a)),
        MulBroadcast::ChannelRight => Ok(channel_scale(a, b)),
    }
}

fn channel_scale<T: Element>(full: &Tensor<T>, gate: &Tensor<T>) -> Tensor<T> {
    let plane = full.shape()[2] * full.shape()[3];
    let mut data = Vec::with_capacity(full.len());
    for (chunk, &g) in full.data().chunks_exact(plane).zip(gate.data()) {
        data.extend(chunk.iter().map(|&v| v * g));
    }
    Tensor::from_parts(full.shape().to_vec(), data)
}

/// Gradients of `mul(a, b)` with respect to `a` and `b`.
pub fn mul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let reduce = |full: &Tensor<T>, gate_shape: &[usize]| {
        let plane = full.shape()[2] * full.shape()[3];
        let data = full
            .data()
            .chunks_exact(plane)
            .zip(grad_out.data().chunks_exact(plane))
            .map(|(x, g)| x.iter().zip(g).map(|(&x, &g)| x * g).sum())
            .collect();
        Tensor::from_parts(gate_shape.to_vec(), data)
    };
    Ok(match mul_broadcast_kind(a, b)? {
        MulBroadcast::Same => (mul(grad_out, b)?, mul(grad_out, a)?),
        MulBroadcast::ChannelLeft => (reduce(b, a.shape()), channel_scale(grad_out, a)),
        MulBroadcast::ChannelRight => (channel_scale(grad_out, b), reduce(a, b.shape())),
    })
}

/// `x[N,F] @ weight[F,G] + bias[G]`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, f) = x.dims2()?;
    let (wf, g) = weight.dims2()?;
    if wf != f {
        return Err(Error::shape(
            "linear",
            format!("input has {f} features but weight is [{wf},{g}]"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [g] {
            return Err(Error::shape("linear", format!("bias must be [{g}], got {:?}", b.shape())));
        }
    }
    let w = weight.data();
    let mut out = vec![T::zero(); n * g];
    for (row, dst) in x.data().chunks_exact(f).zip(out.chunks_exact_mut(g)) {
        if let Some(b) = bias {
            dst.copy_from_slice(b.data());
        }
        for (k, &xv) in row.iter().enumerate() {
            for (d, &wv) in dst.iter_mut().zip(&w[k * g..(k + 1) * g]) {
                *d += xv * wv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, g], out))
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (n, f) = x.dims2()?;
    let (_, g) = weight.dims2()?;
    let dy = grad_out.data();
    let w = weight.data();
    let mut dx = vec![T::zero(); n * f];
    let mut dw = vec![T::zero(); f * g];
    let mut db = vec![T::zero(); g];
    for b in 0..n {
        let xr = &x.data()[b * f..(b + 1) * f];
        let dyr = &dy[b * g..(b + 1) * g];
        for (d, &v) in db.iter_mut().zip(dyr) {
            *d += v;
        }
        for k in 0..f {
            let wr = &w[k * g..(k + 1) * g];
            dx[b * f + k] = wr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
            for (d, &v) in dw[k * g..(k + 1) * g].iter_mut().zip(dyr) {
                *d += xr[k] * v;
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_parts(vec![n, f], dx),
        weight: Tensor::from_parts(vec![f, g], dw),
        bias: Tensor::from_parts(vec![g], db),
    })
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Returns the loss and the softmax probabilities.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (n, k) = logits.dims2()?;
    if k < 2 {
        return Err(Error::shape("cross_entropy", format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label].as_f64() - max);
        probs.extend(exps.iter().map(|e| e / z));
    }
    Ok((loss / n as f64, probs))
}
