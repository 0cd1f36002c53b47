//! Minimal deterministic neural engine with manual reverse-mode gradients.

pub mod checkpoint;
pub mod classifier;
pub mod conv;
pub mod optim;
pub mod tensor;

pub use classifier::{cam, raw_cam, CamClassifier, ForwardPass, Upstream};
pub use conv::{Conv2d, ConvTranspose2d};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Models whose parameters are a fixed, ordered list of flat tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
    /// Human-readable name per parameter tensor, aligned with [`Self::parameters`].
    fn parameter_names(&self) -> Vec<String>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Gradient tensors aligned with a model's [`Parameterized::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like<M: Parameterized + ?Sized>(model: &M) -> Self {
        Self(model.parameters().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.0
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.0.len() != other.0.len()
            || self.0.iter().zip(&other.0).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("gradient layouts differ".into()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Sum a batch of per-sample gradients in order and divide by its size.
    pub fn mean_of(batch: &[Gradients]) -> Result<Gradients> {
        let (first, rest) = batch.split_first().ok_or(Error::EmptyDataset)?;
        let mut acc = first.clone();
        for g in rest {
            acc.accumulate(g)?;
        }
        acc.scale(1.0 / batch.len() as f64);
        Ok(acc)
    }
}

pub fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// ReLU, or with `gate` given, keep exactly the units whose gate is set.
///
/// Replaying the on/off pattern of a reference pass makes the network a
/// smooth function of its parameters, which finite-difference checks rely on.
pub fn relu_gated(values: &mut [f64], gate: Option<&[bool]>) {
    match gate {
        None => relu_inplace(values),
        Some(g) => {
            for (v, &on) in values.iter_mut().zip(g) {
                if !on {
                    *v = 0.0;
                }
            }
        }
    }
}

/// On/off pattern of post-ReLU activations.
pub fn active_units(values: &[f64]) -> Vec<bool> {
    values.iter().map(|&v| v > 0.0).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]`, stabilised by subtracting the max logit.
///
/// # Panics
/// If `label` is out of range.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}
