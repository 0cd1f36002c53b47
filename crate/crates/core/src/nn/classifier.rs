//! Convolutional classifier with a global-average-pooling head, which makes
//! class activation maps well defined.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{glorot, Conv2d};
use super::{active_units, cross_entropy_grad, relu_gated, Gradients, Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::saliency::{minmax_values, UnitMap};

/// Channel widths of the desk-scale backbone.
pub const DESK_CHANNELS: [usize; 3] = [8, 16, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct CamClassifier {
    pub in_channels: usize,
    pub classes: usize,
    /// Stride 1, padding 1, ReLU after each.
    pub convs: Vec<Conv2d>,
    /// `classes x channels`.
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// Values cached by [`CamClassifier::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    /// Post-ReLU output of the final conv layer, `[channels, h, w]`.
    pub feature_maps: Tensor,
    input: Tensor,
    /// Post-ReLU outputs of every conv layer but the last.
    hidden: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl ForwardPass {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    /// ReLU pattern of every conv layer, for [`CamClassifier::forward_gated`].
    pub fn relu_gates(&self) -> Vec<Vec<bool>> {
        self.hidden
            .iter()
            .map(|h| active_units(h))
            .chain(std::iter::once(active_units(self.feature_maps.data())))
            .collect()
    }
}

/// Upstream gradients of a scalar loss.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub logits: Vec<f64>,
    /// Extra gradient on the final feature maps (for example from a CAM term).
    pub feature_maps: Option<Vec<f64>>,
    /// Extra gradient on the head weights that bypasses the logits.
    pub head_weight: Option<Vec<f64>>,
}

impl CamClassifier {
    pub fn zeros(in_channels: usize, channels: &[usize], classes: usize) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let mut prev = in_channels;
        for &c in channels {
            convs.push(Conv2d::zeros(prev, c, 1, 1));
            prev = c;
        }
        Self {
            in_channels,
            classes,
            convs,
            head_weight: vec![0.0; classes * prev],
            head_bias: vec![0.0; classes],
        }
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn seeded(in_channels: usize, channels: &[usize], classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(in_channels, channels, classes);
        let mut prev = in_channels;
        for (conv, &c) in model.convs.iter_mut().zip(channels) {
            *conv = Conv2d::glorot(prev, c, 1, 1, &mut rng);
            prev = c;
        }
        model.head_weight = glorot(&mut rng, classes * prev, prev, classes);
        model
    }

    /// Three conv layers (8, 16, 16 channels) on one input channel, two classes.
    pub fn desk(seed: u64) -> Self {
        Self::seeded(1, &DESK_CHANNELS, 2, seed)
    }

    pub fn feature_channels(&self) -> usize {
        self.convs.last().map_or(self.in_channels, |c| c.out_channels)
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardPass> {
        self.forward_gated(image, None)
    }

    /// Forward pass with the ReLU pattern replayed from `gates`.
    pub fn forward_gated(&self, image: &Tensor, gates: Option<&[Vec<bool>]>) -> Result<ForwardPass> {
        let (c, h, w) = image.chw()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, image has {c}",
                self.in_channels
            )));
        }
        let mut hidden = Vec::with_capacity(self.convs.len());
        let mut current = image.data().to_vec();
        if gates.is_some_and(|g| g.len() != self.convs.len()) {
            return Err(Error::ShapeMismatch("one gate per conv layer expected".into()));
        }
        for (i, conv) in self.convs.iter().enumerate() {
            let mut out = conv.forward(&current, h, w);
            relu_gated(&mut out, gates.map(|g| g[i].as_slice()));
            hidden.push(std::mem::replace(&mut current, out));
        }
        // hidden[0] is the image itself; keep only intermediate activations
        hidden.remove(0);
        let k = self.feature_channels();
        let area = (h * w) as f64;
        let pooled: Vec<f64> = current
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum::<f64>() / area)
            .collect();
        let logits = (0..self.classes)
            .map(|cls| {
                let row = &self.head_weight[cls * k..(cls + 1) * k];
                self.head_bias[cls] + row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Ok(ForwardPass {
            logits,
            feature_maps: Tensor::from_parts(vec![k, h, w], current),
            input: image.clone(),
            hidden,
            pooled,
        })
    }

    pub fn backward(&self, pass: &ForwardPass, upstream: &Upstream) -> Gradients {
        let (_, h, w) = pass.input.chw().expect("checked in forward");
        let k = self.feature_channels();
        let hw = h * w;
        let d_logits = &upstream.logits;

        let mut g_head_w = vec![0.0; self.head_weight.len()];
        let mut d_pooled = vec![0.0; k];
        for cls in 0..self.classes {
            for ch in 0..k {
                g_head_w[cls * k + ch] = d_logits[cls] * pass.pooled[ch];
                d_pooled[ch] += self.head_weight[cls * k + ch] * d_logits[cls];
            }
        }
        if let Some(extra) = &upstream.head_weight {
            for (g, e) in g_head_w.iter_mut().zip(extra) {
                *g += e;
            }
        }
        let g_head_b = d_logits.clone();

        let mut grad: Vec<f64> = Vec::with_capacity(k * hw);
        for &dp in &d_pooled {
            grad.extend(std::iter::repeat(dp / hw as f64).take(hw));
        }
        if let Some(extra) = &upstream.feature_maps {
            for (g, e) in grad.iter_mut().zip(extra) {
                *g += e;
            }
        }

        let n = self.convs.len();
        let mut layer_grads = vec![(Vec::new(), Vec::new()); n];
        for idx in (0..n).rev() {
            let output = if idx + 1 == n {
                pass.feature_maps.data()
            } else {
                &pass.hidden[idx]
            };
            // ReLU: zero gradient where the output was clamped (including at 0)
            for (g, &o) in grad.iter_mut().zip(output) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = if idx == 0 {
                pass.input.data()
            } else {
                &pass.hidden[idx - 1]
            };
            let lg = self.convs[idx].backward(input, h, w, &grad, idx > 0);
            layer_grads[idx] = (lg.weight, lg.bias);
            if let Some(gi) = lg.input {
                grad = gi;
            }
        }

        let mut tensors = Vec::with_capacity(2 * n + 2);
        for (gw, gb) in layer_grads {
            tensors.push(gw);
            tensors.push(gb);
        }
        tensors.push(g_head_w);
        tensors.push(g_head_b);
        Gradients(tensors)
    }

    /// Gradient of plain cross-entropy for one sample.
    pub fn cross_entropy_gradients(&self, pass: &ForwardPass, label: usize) -> Gradients {
        self.backward(
            pass,
            &Upstream {
                logits: cross_entropy_grad(&pass.logits, label),
                ..Default::default()
            },
        )
    }

    /// Softmax probability of `class` for one image.
    pub fn predict_proba(&self, image: &Tensor, class: usize) -> Result<f64> {
        let pass = self.forward(image)?;
        Ok(super::softmax(&pass.logits)[class])
    }
}

impl Parameterized for CamClassifier {
    fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.convs.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }
}

/// `sum_k head_weight[class, k] * feature_maps[k]`, before normalization.
///
/// # Panics
/// If `class_index` is out of range or the feature maps do not match the head.
pub fn raw_cam(model: &CamClassifier, feature_maps: &Tensor, class_index: usize) -> Vec<f64> {
    assert!(class_index < model.classes, "class {class_index} out of range");
    let (k, h, w) = feature_maps.chw().expect("feature maps are [C, H, W]");
    assert_eq!(k, model.feature_channels(), "feature channel mismatch");
    let weights = &model.head_weight[class_index * k..(class_index + 1) * k];
    let mut out = vec![0.0; h * w];
    for (plane, &wk) in feature_maps.data().chunks_exact(h * w).zip(weights) {
        for (o, &f) in out.iter_mut().zip(plane) {
            *o += wk * f;
        }
    }
    out
}

/// Class activation map, min-max normalized to `[0, 1]`.
pub fn cam(model: &CamClassifier, feature_maps: &Tensor, class_index: usize) -> UnitMap {
    let (_, h, w) = feature_maps.chw().expect("feature maps are [C, H, W]");
    let raw = raw_cam(model, feature_maps, class_index);
    UnitMap::from_clamped(w, h, minmax_values(&raw))
}
