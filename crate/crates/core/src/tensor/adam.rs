use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How weight decay enters the Adam update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// `θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)` (AdamW).
    #[default]
    Decoupled,
    /// `wd·θ` is added to the gradient before the moment updates.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_mode: WeightDecay::Decoupled,
        }
    }
}

/// Adam optimizer state for a fixed list of parameter matrices.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Array2<T>>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim())))
            .unzip();
        Adam {
            config,
            first,
            second,
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Clears moments and the step counter.
    pub fn reset(&mut self) {
        self.first.iter_mut().for_each(|m| m.fill(T::zero()));
        self.second.iter_mut().for_each(|v| v.fill(T::zero()));
        self.steps = 0;
    }

    /// One bias-corrected update of every parameter. `grads[k]` must match
    /// `params[k]` in shape.
    pub fn step(&mut self, params: &mut [&mut Array2<T>], grads: &[&Array2<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params / {} grads for {} state slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for k in 0..params.len() {
            if params[k].dim() != self.first[k].dim() || grads[k].dim() != self.first[k].dim() {
                return Err(Error::shape("adam_step", format!("slot {k} shape changed")));
            }
        }
        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);
        let coupled = c.decay_mode == WeightDecay::L2;
        let bc1 = T::one() - b1.powi(self.steps);
        let bc2 = T::one() - b2.powi(self.steps);
        for k in 0..params.len() {
            Zip::from(&mut *params[k])
                .and(grads[k])
                .and(&mut self.first[k])
                .and(&mut self.second[k])
                .for_each(|p, &g, m, v| {
                    let g = if coupled { g + wd * *p } else { g };
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    let mut update = m_hat / (v_hat.sqrt() + eps);
                    if !coupled {
                        update += wd * *p;
                    }
                    *p -= lr * update;
                });
        }
        Ok(())
    }
}
