use crate::autodiff::ParamStore;
use crate::tensor::{Element, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = momentum * v + grad + wd * param`, `param -= lr * v`.
/// Decay applies only to parameters flagged `decay` (conv and linear
/// weights); batch-norm scale/shift and biases are not decayed.
#[derive(Clone, Debug)]
pub struct Sgd<T = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        let mu = T::of_f64(self.momentum);
        let lr = T::of_f64(lr);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = T::of_f64(if p.decay { self.weight_decay } else { 0.0 });
            for ((w, g), vel) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *vel = mu * *vel + *g + wd * *w;
                *w -= lr * *vel;
            }
        }
    }
}
