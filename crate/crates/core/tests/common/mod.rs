#![allow(dead_code)]

use classrepsim::autodiff::{Tape, Var};
use classrepsim::nn::{build_model, AttentionSpec, Mode, Model, ModelSpec, Placement, Window};
use classrepsim::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` over whole gradient vectors (2-norm); exact
/// zeros on both sides count as agreement.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds `f(inputs)` on a fresh tape and reduces it to a scalar with a
/// fixed random projection.
fn projected<F>(f: &F, inputs: &[Tensor<f64>], grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let r = Tensor::randn(&shape, 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod);
    Ok((tape, vars, loss))
}

/// Worst relative error between backprop and central differences over
/// every input of `f`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = projected(&f, inputs, true)?;
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut perturbed = inputs.to_vec();
                perturbed[k].data_mut()[i] += delta;
                let (t, _, l) = projected(&f, &perturbed, false)?;
                Ok(t.value(l).data()[0])
            };
            numeric.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Gaussian tensor with every entry at least `margin` away from zero, so
/// finite differences never straddle a ReLU kink.
pub fn randn_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor<f64> {
    let mut t = Tensor::<f64>::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * (1.0 + rng.random::<f64>());
        }
    }
    t
}

/// Named per-op checks, each over at least three shapes.
pub fn op_gradchecks() -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let mut push = |name: String, err: f64| out.push((name, err));

    for (n, cin, cout, h, w, k, stride) in [(1, 1, 2, 4, 4, 3, 1), (2, 2, 3, 5, 4, 3, 2), (2, 3, 2, 3, 3, 1, 1), (1, 2, 2, 6, 6, 5, 2)] {
        let x = Tensor::randn(&[n, cin, h, w], 1.0, &mut rng);
        let wt = Tensor::randn(&[cout, cin, k, k], 0.5, &mut rng);
        let b = Tensor::randn(&[cout], 0.5, &mut rng);
        let err = gradcheck(|t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2), &[x, wt, b])?;
        push(format!("conv2d [{n},{cin},{h},{w}] k{k} s{stride}"), err);
    }
    for (shape, window) in [([1, 2, 4, 4], 2), ([2, 1, 5, 3], 2), ([1, 3, 6, 6], 4), ([2, 2, 3, 3], 1)] {
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("avg_pool2d {shape:?} w{window}"), gradcheck(|t, v| t.avg_pool2d(v[0], window), &[x])?);
    }
    for shape in [[1, 2, 4, 4], [2, 3, 3, 5], [3, 1, 2, 2]] {
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("global_avg_pool {shape:?}"), gradcheck(|t, v| t.global_avg_pool(v[0]), &[x])?);
    }
    for (shape, th, tw) in [([1, 2, 2, 2], 4, 4), ([2, 1, 3, 2], 7, 5), ([1, 2, 1, 1], 3, 3)] {
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("upsample_to {shape:?} -> {th}x{tw}"), gradcheck(|t, v| t.upsample_to(v[0], th, tw), &[x])?);
    }
    for (shape, f) in [([1, 2, 2, 2], 2), ([2, 1, 3, 1], 3), ([1, 1, 2, 3], 1)] {
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("upsample_nearest {shape:?} x{f}"), gradcheck(|t, v| t.upsample_nearest(v[0], f), &[x])?);
    }
    for shape in [[4, 2, 2, 2], [2, 3, 3, 3], [3, 1, 4, 2]] {
        let c = shape[1];
        let x = Tensor::randn(&shape, 2.0, &mut rng);
        let g = Tensor::randn(&[c], 1.0, &mut rng);
        let b = Tensor::randn(&[c], 1.0, &mut rng);
        push(
            format!("batchnorm2d_train {shape:?}"),
            gradcheck(|t, v| Ok(t.batchnorm2d_train(v[0], v[1], v[2], 1e-5)?.0), &[x, g, b])?,
        );
        let rm = Tensor::randn(&[c], 1.0, &mut rng);
        let rv = Tensor::<f64>::randn(&[c], 1.0, &mut rng).map(|v| v.abs() + 0.5);
        let x = Tensor::randn(&shape, 2.0, &mut rng);
        let g = Tensor::randn(&[c], 1.0, &mut rng);
        let b = Tensor::randn(&[c], 1.0, &mut rng);
        push(
            format!("batchnorm2d_eval {shape:?}"),
            gradcheck(|t, v| t.batchnorm2d_eval(v[0], v[1], v[2], &rm, &rv, 1e-5), &[x, g, b])?,
        );
    }
    for shape in [vec![3, 4], vec![2, 2, 3, 3], vec![1, 5, 1, 2]] {
        let x = randn_away_from_zero(&shape, &mut rng, 1e-2);
        push(format!("relu {shape:?}"), gradcheck(|t, v| Ok(t.relu(v[0])), &[x])?);
        let x = Tensor::randn(&shape, 2.0, &mut rng);
        push(format!("sigmoid {shape:?}"), gradcheck(|t, v| Ok(t.sigmoid(v[0])), &[x])?);
        let a = Tensor::randn(&shape, 1.0, &mut rng);
        let b = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("add {shape:?}"), gradcheck(|t, v| t.add(v[0], v[1]), &[a.clone(), b.clone()])?);
        push(format!("mul {shape:?}"), gradcheck(|t, v| t.mul(v[0], v[1]), &[a, b])?);
        let x = Tensor::randn(&shape, 1.0, &mut rng);
        push(format!("sum {shape:?}"), gradcheck(|t, v| Ok(t.sum(v[0])), std::slice::from_ref(&x))?);
        push(format!("flatten {shape:?}"), gradcheck(|t, v| t.flatten(v[0]), &[x])?);
    }
    for (n, c, h, w) in [(2, 3, 2, 2), (1, 2, 3, 4), (3, 1, 2, 1)] {
        let y = Tensor::randn(&[n, c, h, w], 1.0, &mut rng);
        let g = Tensor::randn(&[n, c, 1, 1], 1.0, &mut rng);
        push(
            format!("mul channel-broadcast [{n},{c},{h},{w}]"),
            gradcheck(|t, v| t.mul(v[0], v[1]), &[y.clone(), g.clone()])?,
        );
        push(
            format!("mul channel-broadcast (left) [{n},{c},{h},{w}]"),
            gradcheck(|t, v| t.mul(v[0], v[1]), &[g, y])?,
        );
    }
    for (n, f, g) in [(1, 3, 2), (4, 2, 5), (3, 6, 3)] {
        let x = Tensor::randn(&[n, f], 1.0, &mut rng);
        let wt = Tensor::randn(&[f, g], 1.0, &mut rng);
        let b = Tensor::randn(&[g], 1.0, &mut rng);
        push(
            format!("linear [{n},{f}]x[{f},{g}]"),
            gradcheck(|t, v| t.linear(v[0], v[1], Some(v[2])), &[x, wt, b])?,
        );
    }
    for (n, k) in [(1, 2), (4, 3), (5, 10)] {
        let logits = Tensor::randn(&[n, k], 2.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|i| (i * 7) % k).collect();
        push(
            format!("cross_entropy [{n},{k}]"),
            gradcheck(|t, v| t.cross_entropy(v[0], &labels), &[logits])?,
        );
    }
    Ok(out)
}

fn model_loss(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::inference();
    let input = tape.constant(x.clone());
    let fwd = model.forward(&mut tape, input, Mode::Train)?;
    let loss = tape.cross_entropy(fwd.logits, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// End-to-end gradient of the training-mode cross-entropy of small ResNets
/// with attention blocks, with respect to the input and every parameter.
pub fn model_gradchecks() -> Result<Vec<(String, f64)>> {
    let cases = [
        ("stac standard w2 3x3", AttentionSpec::stac(Window::Size(2), 3, 3, Placement::Standard)),
        ("stac post w1 1x3", AttentionSpec::stac(Window::Size(1), 1, 3, Placement::Post)),
        ("senet standard", AttentionSpec::senet(Placement::Standard)),
    ];
    let mut out = Vec::new();
    for (i, (name, att)) in cases.into_iter().enumerate() {
        let spec = ModelSpec::resnet(&[1, 1], 2, 2, 4, 3).with_attention(att);
        let mut model = build_model::<f64>(&spec, 10 + i as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(77 + i as u64);
        let x = Tensor::randn(&[3, 2, 4, 4], 1.0, &mut rng);
        let labels = [0usize, 2, 1];
        // Zero biases put ReLU inputs exactly on the kink wherever a
        // post-placement gate sees an all-zero pixel.
        for p in model.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.value = randn_away_from_zero(p.value.shape(), &mut rng, 0.05);
        }

        let mut tape = Tape::new();
        let input = tape.leaf(x.clone(), true);
        let fwd = model.forward(&mut tape, input, Mode::Train)?;
        let loss = tape.cross_entropy(fwd.logits, &labels)?;
        model.params_mut().zero_grads();
        let grads = tape.backward_into(loss, model.params_mut())?;

        let mut analytic: Vec<f64> = grads.get(input).expect("input gradient").data().to_vec();
        for p in model.params().iter() {
            analytic.extend_from_slice(p.grad.data());
        }
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..x.len() {
            let mut central = [0.0; 2];
            for (slot, delta) in [FD_STEP, -FD_STEP].into_iter().enumerate() {
                let mut xp = x.clone();
                xp.data_mut()[j] += delta;
                central[slot] = model_loss(&model, &xp, &labels)?;
            }
            numeric.push((central[0] - central[1]) / (2.0 * FD_STEP));
        }
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        for name in &names {
            let len = model.params().by_name(name).expect("parameter").value.len();
            for j in 0..len {
                let mut central = [0.0; 2];
                for (slot, delta) in [FD_STEP, -FD_STEP].into_iter().enumerate() {
                    let mut m = model.clone();
                    m.params_mut().by_name_mut(name).expect("parameter").value.data_mut()[j] += delta;
                    central[slot] = model_loss(&m, &x, &labels)?;
                }
                numeric.push((central[0] - central[1]) / (2.0 * FD_STEP));
            }
        }
        out.push((format!("resnet end-to-end, {name}"), relative_error(&analytic, &numeric)));
    }
    Ok(out)
}

/// Brute-force kNN: sort every other sample by (distance, index).
pub fn knn_oracle(x: &Tensor<f64>, m: usize, cosine: bool) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let n = x.batch();
    let row = |i: usize| x.sample(i);
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        if cosine {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            1.0 - a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb)
        } else {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        }
    };
    let mut idx = Vec::new();
    let mut dst = Vec::new();
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(row(i), row(j)), j)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        idx.push(all[..m].iter().map(|e| e.1).collect());
        dst.push(all[..m].iter().map(|e| e.0).collect());
    }
    (idx, dst)
}

/// Class similarity by enumerating every directed edge.
pub fn cs_oracle(neighbors: &[Vec<usize>], labels: &[usize]) -> f64 {
    let mut same = 0usize;
    let mut total = 0usize;
    for (i, row) in neighbors.iter().enumerate() {
        for &j in row {
            total += 1;
            if labels[i] == labels[j] {
                same += 1;
            }
        }
    }
    same as f64 / total as f64
}

/// Desk-scale training setup shared by the acceptance checks.
pub mod desk {
    use classrepsim::data::{synth_blobs, LabeledDataset, SynthConfig};
    use classrepsim::nn::{AttentionSpec, ModelSpec, Placement, Window};
    use classrepsim::train::TrainConfig;

    pub fn data() -> LabeledDataset {
        synth_blobs(&SynthConfig {
            classes: 4,
            n_per_class: 64,
            size: 16,
            channels: 3,
            separation: 0.3,
            seed: 1,
        })
        .expect("synthetic data")
    }

    /// 3 stages, 1 block each, widths 8/16/32.
    pub fn spec() -> ModelSpec {
        ModelSpec::resnet(&[1, 1, 1], 8, 3, 16, 4)
    }

    pub fn stac_spec() -> ModelSpec {
        spec().with_attention(AttentionSpec::stac(Window::Size(4), 3, 3, Placement::Standard))
    }

    pub fn config() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            warmup_epochs: 2,
            base_lr: 0.05,
            batch_size: 32,
            seed: 3,
            augment: false,
            ..TrainConfig::default()
        }
    }

    pub const MODEL_SEED: u64 = 7;
}
