use serde::{Deserialize, Serialize};

use super::{GradientSet, Mlp};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Adam,
}

/// Optimizer for one network. Adam moments are allocated on the first step.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    algorithm: Algorithm,
    lr: f64,
    first: Option<GradientSet>,
    second: Option<GradientSet>,
    step: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            algorithm,
            lr,
            first: None,
            second: None,
            step: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(Algorithm::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(Algorithm::Adam, lr)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `model`.
    pub fn step(&mut self, model: &mut Mlp, grads: &GradientSet) -> Result<()> {
        if !grads.is_congruent(model) {
            return Err(Error::shape("gradient set does not match the network"));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
        self.step += 1;
        match self.algorithm {
            Algorithm::Sgd => {
                let lr = self.lr;
                for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                    for (p, d) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                        *p -= lr * d;
                    }
                    for (p, d) in layer.bias.iter_mut().zip(&g.bias) {
                        *p -= lr * d;
                    }
                }
            }
            Algorithm::Adam => {
                let m = self.first.get_or_insert_with(|| GradientSet::zeros_like(model));
                let v = self.second.get_or_insert_with(|| GradientSet::zeros_like(model));
                if !m.is_congruent(model) {
                    return Err(Error::shape("optimizer moments do not match the network"));
                }
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let lr = self.lr;
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                };
                for (((layer, g), lm), lv) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    let ps = layer.weights.as_mut_slice().iter_mut();
                    let gs = g.weights.as_slice();
                    let ms = lm.weights.as_mut_slice();
                    let vs = lv.weights.as_mut_slice();
                    for (((p, &g), m), v) in ps.zip(gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                        update(p, g, m, v);
                    }
                    for (((p, &g), m), v) in layer
                        .bias
                        .iter_mut()
                        .zip(&g.bias)
                        .zip(lm.bias.iter_mut())
                        .zip(lv.bias.iter_mut())
                    {
                        update(p, g, m, v);
                    }
                }
            }
        }
        Ok(())
    }
}
