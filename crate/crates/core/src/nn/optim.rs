use super::network::{Gradients, Network, Params};
use crate::error::{Error, Result};

/// SGD with classic momentum: `v ← μ·v + g`, `w ← w − lr·v`.
///
/// Weight decay adds `λ·w` to weight gradients only; biases are not decayed.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Option<Params>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay: 0.0,
            velocity: Vec::new(),
        })
    }

    pub fn with_weight_decay(mut self, weight_decay: f32) -> Result<Self> {
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        self.weight_decay = weight_decay;
        Ok(self)
    }

    /// Applies one update. Layers without a gradient entry (frozen or parameter-free) are untouched.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers().len() {
            return Err(Error::ShapeMismatch {
                expected: vec![net.layers().len()],
                actual: vec![grads.layers.len()],
            });
        }
        if self.velocity.len() != grads.layers.len() {
            self.velocity = vec![None; grads.layers.len()];
        }
        let trainable: Vec<bool> = net.layers().iter().map(|l| l.trainable).collect();
        for (i, (param, grad)) in net.params_mut().iter_mut().zip(&grads.layers).enumerate() {
            let (Some(param), Some(grad), true) = (param.as_mut(), grad.as_ref(), trainable[i]) else {
                continue;
            };
            if param.weight.shape() != grad.weight.shape() || param.bias.shape() != grad.bias.shape() {
                return Err(Error::ShapeMismatch {
                    expected: param.weight.shape().to_vec(),
                    actual: grad.weight.shape().to_vec(),
                });
            }
            let velocity = self.velocity[i].get_or_insert_with(|| Params {
                weight: crate::Tensor::zeros(grad.weight.shape()),
                bias: crate::Tensor::zeros(grad.bias.shape()),
            });
            let (lr, mu) = (self.lr, self.momentum);
            update(param.weight.data_mut(), velocity.weight.data_mut(), grad.weight.data(), lr, mu, self.weight_decay);
            update(param.bias.data_mut(), velocity.bias.data_mut(), grad.bias.data(), lr, mu, 0.0);
        }
        Ok(())
    }
}

fn update(param: &mut [f32], velocity: &mut [f32], grad: &[f32], lr: f32, momentum: f32, decay: f32) {
    for ((w, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g + decay * *w;
        *w -= lr * *v;
    }
}
