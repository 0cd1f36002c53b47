use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Parameters are stored at single precision: every update is rounded
/// through `f32`, so checkpoints hold them losslessly.
#[inline]
pub(crate) fn store(v: f64) -> f64 {
    f64::from(v as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &Gradients) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if params.len() != grads.0.len()
            || params.iter().zip(&grads.0).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::ShapeMismatch(
                "parameter and gradient layouts differ".into(),
            ));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(&grads.0) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi = store(*pi - self.learning_rate * gi);
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                if self.first_moment.len() != grads.0.len()
                    || self
                        .first_moment
                        .iter()
                        .zip(&grads.0)
                        .any(|(m, g)| m.len() != g.len())
                {
                    return Err(Error::ShapeMismatch("Adam moments do not match gradients".into()));
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(&grads.0)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for i in 0..p.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] = store(p[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Step decay: `initial_rate * decay_factor^(epoch / step_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_rate: f64,
    pub decay_factor: f64,
    pub step_epochs: usize,
}

impl LrSchedule {
    pub fn new(initial_rate: f64, decay_factor: f64, step_epochs: usize) -> Result<Self> {
        if !(initial_rate > 0.0) {
            return Err(Error::ConfigInvalid("initial rate must be positive".into()));
        }
        if !(decay_factor > 0.0 && decay_factor < 1.0) {
            return Err(Error::ConfigInvalid("decay factor must lie in (0, 1)".into()));
        }
        if step_epochs == 0 {
            return Err(Error::ConfigInvalid("step_epochs must be at least 1".into()));
        }
        Ok(Self {
            initial_rate,
            decay_factor,
            step_epochs,
        })
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let k = (epoch / self.step_epochs) as i32;
        // Factors like 0.1 are not exact in binary; dividing by their integral
        // reciprocal keeps 0.005 -> 0.0005 -> 0.00005 correctly rounded.
        let inverse = 1.0 / self.decay_factor;
        if inverse.fract() == 0.0 && inverse.powi(k).is_finite() {
            self.initial_rate / inverse.powi(k)
        } else {
            self.initial_rate * self.decay_factor.powi(k)
        }
    }
}
