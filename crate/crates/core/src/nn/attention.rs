//! Attention gates applied to residual feature maps.
//!
//! A scale-transformed attention condenser (STAC) pools its input with a
//! non-overlapping window, runs `conv -> ReLU -> conv -> sigmoid` on the
//! pooled map, resizes the result back with nearest-neighbour upsampling and
//! multiplies it into the input. With a global window the pooled map is a
//! single pixel and the module reduces to squeeze-and-excitation channel
//! gating without a bottleneck.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::spec::Window;
use crate::tensor::Element;

/// Tape handles for the two attention convolutions.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub c1_weight: Var,
    pub c1_bias: Var,
    pub c2_weight: Var,
    pub c2_bias: Var,
}

/// Gate map `T` for feature map `y`, at the pooled resolution.
pub fn attention_map<T: Element>(tape: &mut Tape<T>, y: Var, p: &AttentionVars, window: Window) -> Result<Var> {
    let (_, _, h, w) = tape.value(y).dims4()?;
    let pooled = tape.avg_pool2d(y, window.resolve(h, w))?;
    let k1 = tape.value(p.c1_weight).shape()[2];
    let a = tape.conv2d(pooled, p.c1_weight, Some(p.c1_bias), 1, k1 / 2)?;
    let a = tape.relu(a);
    let k2 = tape.value(p.c2_weight).shape()[2];
    let a = tape.conv2d(a, p.c2_weight, Some(p.c2_bias), 1, k2 / 2)?;
    Ok(tape.sigmoid(a))
}

/// `y * upsample(sigmoid(conv2(relu(conv1(avg_pool(y, window))))))`.
pub fn stac_forward<T: Element>(tape: &mut Tape<T>, y: Var, p: &AttentionVars, window: Window) -> Result<Var> {
    let (_, _, h, w) = tape.value(y).dims4()?;
    let gate = attention_map(tape, y, p, window)?;
    let (_, _, gh, gw) = tape.value(gate).dims4()?;
    let gate = if gh == 1 && gw == 1 {
        gate
    } else {
        tape.upsample_to(gate, h, w)?
    };
    tape.mul(y, gate)
}

/// Squeeze-and-excitation gating with reduction ratio 1: the global-window
/// case of [`stac_forward`].
pub fn senet_forward<T: Element>(tape: &mut Tape<T>, y: Var, p: &AttentionVars) -> Result<Var> {
    stac_forward(tape, y, p, Window::Global)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn vars(tape: &mut Tape<f64>, c: usize, k1: usize, k2: usize, rng: &mut ChaCha8Rng) -> AttentionVars {
        AttentionVars {
            c1_weight: tape.leaf(Tensor::randn(&[c, c, k1, k1], 0.5, rng), true),
            c1_bias: tape.leaf(Tensor::randn(&[c], 0.5, rng), true),
            c2_weight: tape.leaf(Tensor::randn(&[c, c, k2, k2], 0.5, rng), true),
            c2_bias: tape.leaf(Tensor::randn(&[c], 0.5, rng), true),
        }
    }

    #[test]
    fn zero_second_conv_halves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f64>::new();
        let y = tape.leaf(Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng), false);
        let mut p = vars(&mut tape, 3, 3, 3, &mut rng);
        p.c2_weight = tape.constant(Tensor::zeros(&[3, 3, 3, 3]));
        p.c2_bias = tape.constant(Tensor::zeros(&[3]));
        let out = stac_forward(&mut tape, y, &p, Window::Size(4)).unwrap();
        for (o, i) in tape.value(out).data().iter().zip(tape.value(y).data()) {
            assert!((o - 0.5 * i).abs() < 1e-15);
        }
    }

    #[test]
    fn per_pixel_gating_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::<f64>::new();
        let y = tape.leaf(Tensor::randn(&[1, 2, 5, 7], 1.0, &mut rng), false);
        let p = vars(&mut tape, 2, 1, 1, &mut rng);
        let out = stac_forward(&mut tape, y, &p, Window::Size(1)).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 2, 5, 7]);
    }

    #[test]
    fn global_window_is_channel_gating() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let yv = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        let y = tape.leaf(yv.clone(), false);
        let p = vars(&mut tape, 3, 1, 1, &mut rng);
        let out = stac_forward(&mut tape, y, &p, Window::Global).unwrap();

        // Direct oracle: per-channel mean -> 1x1 convs as matrix products.
        let w1 = tape.value(p.c1_weight).data().to_vec();
        let b1 = tape.value(p.c1_bias).data().to_vec();
        let w2 = tape.value(p.c2_weight).data().to_vec();
        let b2 = tape.value(p.c2_bias).data().to_vec();
        for n in 0..2 {
            let means: Vec<f64> = (0..3)
                .map(|c| (0..16).map(|k| yv.data()[(n * 3 + c) * 16 + k]).sum::<f64>() / 16.0)
                .collect();
            let hidden: Vec<f64> = (0..3)
                .map(|o| (b1[o] + (0..3).map(|i| w1[o * 3 + i] * means[i]).sum::<f64>()).max(0.0))
                .collect();
            for c in 0..3 {
                let z = b2[c] + (0..3).map(|i| w2[c * 3 + i] * hidden[i]).sum::<f64>();
                let t = 1.0 / (1.0 + (-z).exp());
                for k in 0..16 {
                    let idx = (n * 3 + c) * 16 + k;
                    assert!((tape.value(out).data()[idx] - yv.data()[idx] * t).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn senet_equals_global_stac_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::<f32>::new();
        let y = tape.leaf(Tensor::randn(&[2, 4, 6, 6], 1.0, &mut rng), false);
        let p = AttentionVars {
            c1_weight: tape.leaf(Tensor::randn(&[4, 4, 1, 1], 0.5, &mut rng), true),
            c1_bias: tape.leaf(Tensor::randn(&[4], 0.5, &mut rng), true),
            c2_weight: tape.leaf(Tensor::randn(&[4, 4, 1, 1], 0.5, &mut rng), true),
            c2_bias: tape.leaf(Tensor::randn(&[4], 0.5, &mut rng), true),
        };
        let a = stac_forward(&mut tape, y, &p, Window::Global).unwrap();
        let b = senet_forward(&mut tape, y, &p).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn gating_never_grows_or_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f32>::new();
        let y = tape.leaf(Tensor::randn(&[2, 3, 8, 8], 2.0, &mut rng), false);
        let p = AttentionVars {
            c1_weight: tape.leaf(Tensor::randn(&[3, 3, 3, 3], 1.0, &mut rng), true),
            c1_bias: tape.leaf(Tensor::randn(&[3], 1.0, &mut rng), true),
            c2_weight: tape.leaf(Tensor::randn(&[3, 3, 3, 3], 1.0, &mut rng), true),
            c2_bias: tape.leaf(Tensor::randn(&[3], 1.0, &mut rng), true),
        };
        for window in [Window::Size(1), Window::Size(2), Window::Size(3), Window::Global] {
            let out = stac_forward(&mut tape, y, &p, window).unwrap();
            for (&o, &i) in tape.value(out).data().iter().zip(tape.value(y).data()) {
                assert!(o.abs() <= i.abs());
                if i != 0.0 {
                    assert_eq!(o.signum(), i.signum());
                }
            }
        }
    }
}
