//! Convolutional autoencoder that regresses FOI-style saliency from images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{decode, encode, expect_tensor, ModelKind, StoredTensor};
use crate::nn::{active_units, relu_gated, sigmoid, Conv2d, ConvTranspose2d, Gradients, OptimizerState, Parameterized, Tensor};
use crate::par;
use crate::saliency::{to_unit, SaliencyMap, UnitMap};

/// Each input image is standardized to zero mean and unit variance before
/// the encoder sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct MimicAutoencoder {
    /// 1 -> 8, stride 2.
    pub enc1: Conv2d,
    /// 8 -> 16, stride 2.
    pub enc2: Conv2d,
    /// 16 -> 8, stride 2, ReLU.
    pub dec1: ConvTranspose2d,
    /// 8 -> 1, stride 2, sigmoid.
    pub dec2: ConvTranspose2d,
}

#[derive(Debug, Clone)]
pub struct MimicPass {
    pub output: Vec<f64>,
    dims: [(usize, usize); 3],
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    d1: Vec<f64>,
}

impl MimicPass {
    pub fn relu_gates(&self) -> [Vec<bool>; 3] {
        [
            active_units(&self.h1),
            active_units(&self.h2),
            active_units(&self.d1),
        ]
    }
}

impl MimicAutoencoder {
    pub fn zeros() -> Self {
        Self {
            enc1: Conv2d::zeros(1, 8, 2, 1),
            enc2: Conv2d::zeros(8, 16, 2, 1),
            dec1: ConvTranspose2d::zeros(16, 8, 2, 1),
            dec2: ConvTranspose2d::zeros(8, 1, 2, 1),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            enc1: Conv2d::glorot(1, 8, 2, 1, &mut rng),
            enc2: Conv2d::glorot(8, 16, 2, 1, &mut rng),
            dec1: ConvTranspose2d::glorot(16, 8, 2, 1, &mut rng),
            dec2: ConvTranspose2d::glorot(8, 1, 2, 1, &mut rng),
        }
    }

    pub fn forward(&self, image: &Tensor) -> Result<MimicPass> {
        self.forward_gated(image, None)
    }

    /// Forward pass with the ReLU pattern replayed from a reference pass.
    pub fn forward_gated(&self, image: &Tensor, gates: Option<&[Vec<bool>; 3]>) -> Result<MimicPass> {
        let (c, h, w) = image.chw()?;
        if c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "mimic expects one channel, got {c}"
            )));
        }
        let input = image.standardized().data().to_vec();
        let mut h1 = self.enc1.forward(&input, h, w);
        relu_gated(&mut h1, gates.map(|g| g[0].as_slice()));
        let s1 = self.enc1.output_size(h, w);
        let mut h2 = self.enc2.forward(&h1, s1.0, s1.1);
        relu_gated(&mut h2, gates.map(|g| g[1].as_slice()));
        let s2 = self.enc2.output_size(s1.0, s1.1);
        // decoder outputs are cropped / padded back to the encoder sizes
        let mut d1 = self.dec1.forward(&h2, s2.0, s2.1, s1.0, s1.1);
        relu_gated(&mut d1, gates.map(|g| g[2].as_slice()));
        let logits = self.dec2.forward(&d1, s1.0, s1.1, h, w);
        let output = logits.into_iter().map(sigmoid).collect();
        Ok(MimicPass {
            output,
            dims: [(h, w), s1, s2],
            input,
            h1,
            h2,
            d1,
        })
    }

    /// Backward pass given the gradient of the loss on the sigmoid output.
    pub fn backward(&self, pass: &MimicPass, d_output: &[f64]) -> Gradients {
        let [(h, w), s1, s2] = pass.dims;
        let d_logits: Vec<f64> = d_output
            .iter()
            .zip(&pass.output)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        let g4 = self.dec2.backward(&pass.d1, s1.0, s1.1, h, w, &d_logits, true);
        let mut d = g4.input.expect("requested");
        mask_relu(&mut d, &pass.d1);
        let g3 = self.dec1.backward(&pass.h2, s2.0, s2.1, s1.0, s1.1, &d, true);
        let mut d = g3.input.expect("requested");
        mask_relu(&mut d, &pass.h2);
        let g2 = self.enc2.backward(&pass.h1, s1.0, s1.1, &d, true);
        let mut d = g2.input.expect("requested");
        mask_relu(&mut d, &pass.h1);
        let g1 = self.enc1.backward(&pass.input, h, w, &d, false);
        Gradients(vec![
            g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias, g4.weight, g4.bias,
        ])
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let layers = vec![
            vec![
                StoredTensor::new(vec![8, 1, 3, 3], &self.enc1.weight),
                StoredTensor::new(vec![8], &self.enc1.bias),
            ],
            vec![
                StoredTensor::new(vec![16, 8, 3, 3], &self.enc2.weight),
                StoredTensor::new(vec![16], &self.enc2.bias),
            ],
            vec![
                StoredTensor::new(vec![16, 8, 3, 3], &self.dec1.weight),
                StoredTensor::new(vec![8], &self.dec1.bias),
            ],
            vec![
                StoredTensor::new(vec![8, 1, 3, 3], &self.dec2.weight),
                StoredTensor::new(vec![1], &self.dec2.bias),
            ],
        ];
        encode(ModelKind::Mimic, &layers)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (kind, layers) = decode(bytes)?;
        if kind != ModelKind::Mimic || layers.len() != 4 {
            return Err(Error::Checkpoint("not a mimic checkpoint".into()));
        }
        let mut m = Self::zeros();
        m.enc1.weight = expect_tensor(&layers[0], 0, &[8, 1, 3, 3])?.to_vec();
        m.enc1.bias = expect_tensor(&layers[0], 1, &[8])?.to_vec();
        m.enc2.weight = expect_tensor(&layers[1], 0, &[16, 8, 3, 3])?.to_vec();
        m.enc2.bias = expect_tensor(&layers[1], 1, &[16])?.to_vec();
        m.dec1.weight = expect_tensor(&layers[2], 0, &[16, 8, 3, 3])?.to_vec();
        m.dec1.bias = expect_tensor(&layers[2], 1, &[8])?.to_vec();
        m.dec2.weight = expect_tensor(&layers[3], 0, &[8, 1, 3, 3])?.to_vec();
        m.dec2.bias = expect_tensor(&layers[3], 1, &[1])?.to_vec();
        Ok(m)
    }
}

fn mask_relu(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Parameterized for MimicAutoencoder {
    fn parameters(&self) -> Vec<&[f64]> {
        vec![
            &self.enc1.weight,
            &self.enc1.bias,
            &self.enc2.weight,
            &self.enc2.bias,
            &self.dec1.weight,
            &self.dec1.bias,
            &self.dec2.weight,
            &self.dec2.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.enc1.weight,
            &mut self.enc1.bias,
            &mut self.enc2.weight,
            &mut self.enc2.bias,
            &mut self.dec1.weight,
            &mut self.dec1.bias,
            &mut self.dec2.weight,
            &mut self.dec2.bias,
        ]
    }

    fn parameter_names(&self) -> Vec<String> {
        ["enc1", "enc2", "dec1", "dec2"]
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect()
    }
}

pub const DEFAULT_MIMIC_LR: f64 = 0.0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MimicTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MimicTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_MIMIC_LR,
            epochs: 50,
            batch_size: 20,
            seed: 0,
        }
    }
}

impl MimicTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid("mimic learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigInvalid("mimic epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One image with its FOI training target.
#[derive(Debug, Clone)]
pub struct MimicPair {
    pub image: Tensor,
    pub target: SaliencyMap,
}

#[derive(Debug, Clone)]
pub struct MimicTrained {
    pub model: MimicAutoencoder,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epoch_mse: Vec<f64>,
}

/// Pixel-mean squared error of the sigmoid output against the unit-view target.
pub fn mimic_loss(model: &MimicAutoencoder, image: &Tensor, target: &UnitMap) -> Result<f64> {
    let pass = model.forward(image)?;
    Ok(mse(&pass.output, target.values()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Loss and gradients for one pair.
pub fn mimic_gradients(
    model: &MimicAutoencoder,
    image: &Tensor,
    target: &UnitMap,
) -> Result<(f64, Gradients)> {
    let pass = model.forward(image)?;
    if pass.output.len() != target.values().len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", pass.output.len()),
            got: format!("{} pixels", target.values().len()),
        });
    }
    let n = pass.output.len() as f64;
    let d: Vec<f64> = pass
        .output
        .iter()
        .zip(target.values())
        .map(|(y, t)| 2.0 * (y - t) / n)
        .collect();
    Ok((mse(&pass.output, target.values()), model.backward(&pass, &d)))
}

/// Mean loss over a dataset.
pub fn dataset_mse(model: &MimicAutoencoder, pairs: &[MimicPair]) -> Result<f64> {
    let losses = par::map(pairs, |p| mimic_loss(model, &p.image, &to_unit(&p.target)));
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn check_pairs(pairs: &[MimicPair]) -> Result<(usize, usize)> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let (_, h, w) = first.image.chw()?;
    for p in pairs {
        let (c, ph, pw) = p.image.chw()?;
        if c != 1 || (ph, pw) != (h, w) {
            return Err(Error::dims((w, h), (pw, ph)));
        }
        if p.target.dims() != (w, h) {
            return Err(Error::dims((w, h), p.target.dims()));
        }
    }
    Ok((w, h))
}

/// Adam on mean MSE; deterministic for a fixed seed.
pub fn train_mimic(pairs: &[MimicPair], config: &MimicTrainConfig) -> Result<MimicTrained> {
    config.validate()?;
    check_pairs(pairs)?;
    let targets: Vec<UnitMap> = pairs.iter().map(|p| to_unit(&p.target)).collect();
    let mut model = MimicAutoencoder::seeded(config.seed);
    let initial_mse = dataset_mse(&model, pairs)?;
    let mut optimizer = OptimizerState::adam(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d69_6d69_635f_7368);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_mse = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = par::map(batch, |&i| mimic_gradients(&model, &pairs[i].image, &targets[i]));
            let mut grads = Vec::with_capacity(batch.len());
            for r in results {
                let (loss, g) = r?;
                total += loss;
                grads.push(g);
            }
            let mean = Gradients::mean_of(&grads)?;
            if !mean.is_finite() {
                return Err(Error::NumericFailure(format!("mimic epoch {epoch}")));
            }
            optimizer.step(model.parameters_mut(), &mean)?;
        }
        let avg = total / pairs.len() as f64;
        if !avg.is_finite() {
            return Err(Error::NumericFailure(format!("mimic epoch {epoch}")));
        }
        log::debug!("mimic epoch {epoch}: mse {avg:.5}");
        epoch_mse.push(avg);
    }
    let final_mse = dataset_mse(&model, pairs)?;
    Ok(MimicTrained {
        model,
        initial_mse,
        final_mse,
        epoch_mse,
    })
}

/// Sigmoid output scaled to an 8-bit FOI map.
pub fn generate_saliency(model: &MimicAutoencoder, image: &Tensor) -> Result<SaliencyMap> {
    let (_, h, w) = image.chw()?;
    let pass = model.forward(image)?;
    let data = pass
        .output
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    SaliencyMap::new(w, h, data)
}
