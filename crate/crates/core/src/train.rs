//! Mini-batch training of the CAM classifier with plain cross-entropy or the
//! composite saliency-guided loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cyborg::{cyborg_gradients_from_pass, unguided_gradients_from_pass, CyborgConfig};
use crate::error::{Error, Result};
use crate::nn::{CamClassifier, Gradients, LrSchedule, OptimizerKind, OptimizerState, Parameterized, Tensor};
use crate::par;
use crate::saliency::SaliencyMap;
use crate::synth::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub step_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            decay_factor: 0.1,
            step_epochs: 12,
            epochs: 50,
            batch_size: 20,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigInvalid("epochs and batch_size must be at least 1".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.learning_rate, self.decay_factor, self.step_epochs)
    }
}

/// Cross-entropy only, or the composite loss for samples that carry a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    CrossEntropy,
    Guided(CyborgConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub label: usize,
    pub saliency: Option<SaliencyMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: CamClassifier,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Called after every optimizer step with the step index and the model.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &CamClassifier);

fn sample_gradients(
    model: &CamClassifier,
    sample: &TrainSample,
    loss: &LossMode,
) -> Result<(f64, Gradients)> {
    let pass = model.forward(&sample.image)?;
    let eval = match (loss, &sample.saliency) {
        (LossMode::CrossEntropy, _) => {
            let ce = crate::nn::cross_entropy(&pass.logits, sample.label);
            return Ok((ce, model.cross_entropy_gradients(&pass, sample.label)));
        }
        (LossMode::Guided(cfg), Some(sal)) => {
            cyborg_gradients_from_pass(model, &pass, sample.label, sal, cfg)
        }
        (LossMode::Guided(cfg), None) => unguided_gradients_from_pass(model, &pass, sample.label, cfg),
    };
    Ok((eval.loss, eval.gradients))
}

fn check_samples(model: &CamClassifier, samples: &[TrainSample]) -> Result<()> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (_, h, w) = first.image.chw()?;
    for s in samples {
        let (c, sh, sw) = s.image.chw()?;
        if c != model.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "image has {c} channels, model expects {}",
                model.in_channels
            )));
        }
        if (sh, sw) != (h, w) {
            return Err(Error::dims((w, h), (sw, sh)));
        }
        if s.label >= model.classes {
            return Err(Error::ConfigInvalid(format!("label {} out of range", s.label)));
        }
    }
    Ok(())
}

/// Trains `model` in place order-deterministically: the model seed and the
/// shuffle seed fully determine the trajectory, whatever the thread count.
pub fn train_classifier(
    mut model: CamClassifier,
    samples: &[TrainSample],
    loss: LossMode,
    config: &TrainConfig,
    shuffle_seed: u64,
    mut observer: Option<StepObserver<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let LossMode::Guided(c) = &loss {
        c.validate()?;
    }
    check_samples(&model, samples)?;
    let schedule = config.schedule()?;
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(shuffle_seed, 0x0074_7261_696e));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        optimizer.learning_rate = schedule.rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = par::map(batch, |&i| sample_gradients(&model, &samples[i], &loss));
            let mut grads = Vec::with_capacity(batch.len());
            for r in results {
                let (l, g) = r?;
                total += l;
                grads.push(g);
            }
            let mean = Gradients::mean_of(&grads)?;
            if !mean.is_finite() {
                return Err(Error::NumericFailure(format!("non-finite gradient in epoch {epoch}")));
            }
            optimizer.step(model.parameters_mut(), &mean)?;
            if let Some(obs) = observer.as_mut() {
                obs(steps, &model);
            }
            steps += 1;
        }
        let avg = total / samples.len() as f64;
        if !avg.is_finite() {
            return Err(Error::NumericFailure(format!("non-finite loss in epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {avg:.5}");
        epoch_loss.push(avg);
    }
    Ok(TrainOutcome {
        model,
        epoch_loss,
        steps,
    })
}

/// Attack-class probability for each image.
pub fn score_images(model: &CamClassifier, images: &[&Tensor]) -> Result<Vec<f64>> {
    par::map(images, |img| model.predict_proba(img, 1))
        .into_iter()
        .collect()
}
