//! Composite saliency-guided loss: `alpha * human + (1 - alpha) * CE`,
//! where the human term is the mean squared error between the min-max
//! normalized CAM of the true class and the normalized human map resampled
//! to CAM resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, cross_entropy_grad, raw_cam, CamClassifier, ForwardPass, Gradients, Tensor,
    Upstream,
};
use crate::saliency::{minmax_normalize, resize_bilinear, to_unit, SaliencyMap, UnitMap};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyborgConfig {
    #[serde(default = "default_alpha", deserialize_with = "unit_interval")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn unit_interval<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("alpha must lie in [0, 1], got {v}")))
    }
}

impl Default for CyborgConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl CyborgConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::ConfigInvalid(format!(
                "cyborg.alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalized human map at the given resolution.
pub fn saliency_target(saliency: &SaliencyMap, width: usize, height: usize) -> UnitMap {
    minmax_normalize(&resize_bilinear(&to_unit(saliency), width, height))
}

pub fn human_loss(cam: &UnitMap, saliency: &SaliencyMap) -> f64 {
    let target = saliency_target(saliency, cam.width(), cam.height());
    mse(cam.values(), target.values())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn cyborg_loss(
    logits: &[f64],
    label: usize,
    cam: &UnitMap,
    saliency: &SaliencyMap,
    config: &CyborgConfig,
) -> f64 {
    config.alpha * human_loss(cam, saliency) + (1.0 - config.alpha) * cross_entropy(logits, label)
}

/// Loss terms and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub loss: f64,
    pub cross_entropy: f64,
    /// `None` when the sample carried no saliency map.
    pub human_loss: Option<f64>,
    pub gradients: Gradients,
}

/// Human-loss value and its gradient with respect to the raw CAM.
///
/// The argmin/argmax pixels of the normalization are held fixed; their
/// values still carry gradient. A constant raw CAM normalizes to zeros and
/// passes no gradient.
fn human_term(raw: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = raw.len();
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in raw.iter().enumerate() {
        if v < raw[imin] {
            imin = i;
        }
        if v > raw[imax] {
            imax = i;
        }
    }
    let span = raw[imax] - raw[imin];
    if !(span > 0.0) {
        let loss = target.iter().map(|t| t * t).sum::<f64>() / n as f64;
        return (loss, vec![0.0; n]);
    }
    let norm: Vec<f64> = raw.iter().map(|&r| (r - raw[imin]) / span).collect();
    let loss = mse(&norm, target);
    let g: Vec<f64> = norm
        .iter()
        .zip(target)
        .map(|(a, t)| 2.0 * (a - t) / n as f64)
        .collect();
    let total: f64 = g.iter().sum();
    let weighted: f64 = g.iter().zip(&norm).map(|(a, b)| a * b).sum();
    let mut d_raw: Vec<f64> = g.iter().map(|v| v / span).collect();
    d_raw[imin] += (weighted - total) / span;
    d_raw[imax] -= weighted / span;
    (loss, d_raw)
}

/// Gradients of the composite loss for one sample whose forward pass is given.
pub fn cyborg_gradients_from_pass(
    model: &CamClassifier,
    pass: &ForwardPass,
    label: usize,
    saliency: &SaliencyMap,
    config: &CyborgConfig,
) -> LossEvaluation {
    let alpha = config.alpha;
    let (k, h, w) = pass.feature_maps.chw().expect("feature maps are [C, H, W]");
    let raw = raw_cam(model, &pass.feature_maps, label);
    let target = saliency_target(saliency, w, h);
    let (h_loss, d_raw) = human_term(&raw, target.values());

    let ce = cross_entropy(&pass.logits, label);
    let d_logits: Vec<f64> = cross_entropy_grad(&pass.logits, label)
        .into_iter()
        .map(|g| (1.0 - alpha) * g)
        .collect();

    let hw = h * w;
    let class_weights = &model.head_weight[label * k..(label + 1) * k];
    let mut d_features = vec![0.0; k * hw];
    let mut d_head = vec![0.0; model.head_weight.len()];
    for (ch, (plane, &wk)) in pass
        .feature_maps
        .data()
        .chunks_exact(hw)
        .zip(class_weights)
        .enumerate()
    {
        let dst = &mut d_features[ch * hw..(ch + 1) * hw];
        let mut acc = 0.0;
        for ((d, &f), &dr) in dst.iter_mut().zip(plane).zip(&d_raw) {
            let scaled = alpha * dr;
            *d = wk * scaled;
            acc += scaled * f;
        }
        d_head[label * k + ch] = acc;
    }

    let gradients = model.backward(
        pass,
        &Upstream {
            logits: d_logits,
            feature_maps: Some(d_features),
            head_weight: Some(d_head),
        },
    );
    LossEvaluation {
        loss: alpha * h_loss + (1.0 - alpha) * ce,
        cross_entropy: ce,
        human_loss: Some(h_loss),
        gradients,
    }
}

/// Gradients of [`cyborg_loss`] with respect to every model parameter.
pub fn cyborg_gradients(
    model: &CamClassifier,
    image: &Tensor,
    label: usize,
    saliency: &SaliencyMap,
    config: &CyborgConfig,
) -> Result<LossEvaluation> {
    let pass = model.forward(image)?;
    Ok(cyborg_gradients_from_pass(
        model, &pass, label, saliency, config,
    ))
}

/// Cross-entropy scaled by `1 - alpha`, for samples without a saliency map.
pub fn unguided_gradients_from_pass(
    model: &CamClassifier,
    pass: &ForwardPass,
    label: usize,
    config: &CyborgConfig,
) -> LossEvaluation {
    let weight = 1.0 - config.alpha;
    let ce = cross_entropy(&pass.logits, label);
    let d_logits = cross_entropy_grad(&pass.logits, label)
        .into_iter()
        .map(|g| weight * g)
        .collect();
    LossEvaluation {
        loss: weight * ce,
        cross_entropy: ce,
        human_loss: None,
        gradients: model.backward(
            pass,
            &Upstream {
                logits: d_logits,
                ..Default::default()
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cam, Parameterized};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_saliency(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SaliencyMap {
        SaliencyMap::from_fn(w, h, |_, _| rng.gen())
    }

    #[test]
    fn human_loss_examples() {
        let sal = SaliencyMap::from_fn(4, 4, |x, y| (x * 60 + y) as u8);
        let target = saliency_target(&sal, 4, 4);
        assert_eq!(human_loss(&target, &sal), 0.0);

        // A min-max normalized map always holds a zero, so an all-ones
        // target only exists at the kernel level.
        assert_eq!(mse(&[0.0; 9], &[1.0; 9]), 1.0);
        let cam = UnitMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        let sal = SaliencyMap::new(2, 1, vec![255, 0]).unwrap();
        assert_eq!(human_loss(&cam, &sal), 1.0);

        // constant saliency normalizes to zeros
        let cam = UnitMap::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(human_loss(&cam, &SaliencyMap::filled(2, 1, 255)), 0.0);
    }

    #[test]
    fn human_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cam_vals: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
        let cam = UnitMap::new(8, 8, cam_vals.clone()).unwrap();
        let sal = random_saliency(&mut rng, 8, 8);
        let unit: Vec<f64> = sal.pixels().iter().map(|&v| f64::from(v) / 255.0).collect();
        let lo = unit.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = unit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for i in 0..64 {
            let t = (unit[i] - lo) / (hi - lo);
            acc += (cam_vals[i] - t).powi(2);
        }
        assert!((human_loss(&cam, &sal) - acc / 64.0).abs() < 1e-14);
    }

    #[test]
    fn composite_is_affine_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let logits = [0.3, -1.1];
        let cam = UnitMap::new(4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
        let sal = random_saliency(&mut rng, 6, 6);
        let ce = cross_entropy(&logits, 1);
        let hl = human_loss(&cam, &sal);
        let at = |a: f64| cyborg_loss(&logits, 1, &cam, &sal, &CyborgConfig::new(a).unwrap());
        assert_eq!(at(0.0), ce);
        assert_eq!(at(1.0), hl);
        assert!((at(0.5) - 0.5 * (hl + ce)).abs() < 1e-15);
        assert!((at(0.25) - (0.25 * hl + 0.75 * ce)).abs() < 1e-15);
        assert!(CyborgConfig::new(1.5).is_err());
        assert!(CyborgConfig::new(-0.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn composite_stays_between_its_terms(
            alpha in 0.0f64..=1.0,
            l0 in -5.0f64..5.0,
            l1 in -5.0f64..5.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = UnitMap::new(4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
            let sal = random_saliency(&mut rng, 5, 7);
            let logits = [l0, l1];
            let ce = cross_entropy(&logits, 0);
            let hl = human_loss(&cam, &sal);
            let loss = cyborg_loss(&logits, 0, &cam, &sal, &CyborgConfig::new(alpha).unwrap());
            proptest::prop_assert!((loss - (alpha * hl + (1.0 - alpha) * ce)).abs() <= 1e-12 * (1.0 + ce));
            proptest::prop_assert!(loss >= hl.min(ce) - 1e-12 && loss <= hl.max(ce) + 1e-12);
        }
    }

    #[test]
    fn affine_combination_example() {
        let alpha = 0.5;
        assert!((alpha * 0.2 + (1.0 - alpha) * 0.6 - 0.4f64).abs() < 1e-15);
    }

    fn setup(seed: u64) -> (CamClassifier, Tensor, SaliencyMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = CamClassifier::seeded(1, &[3, 4, 4], 2, seed);
        for b in model.parameters_mut() {
            for v in b.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let image =
            Tensor::new(vec![1, 8, 8], (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
        let sal = SaliencyMap::from_fn(8, 8, |x, y| {
            let d = (x as f64 - 3.0).powi(2) + (y as f64 - 5.0).powi(2);
            (255.0 * (-d / 6.0).exp()).round() as u8
        });
        (model, image, sal)
    }

    fn loss_of(model: &CamClassifier, image: &Tensor, sal: &SaliencyMap, cfg: &CyborgConfig) -> f64 {
        let pass = model.forward(image).unwrap();
        let c = cam(model, &pass.feature_maps, 1);
        cyborg_loss(&pass.logits, 1, &c, sal, cfg)
    }

    /// Composite loss with the ReLU pattern and CAM extrema pinned to a
    /// reference pass, so the loss is smooth around it.
    fn pinned_loss(
        model: &CamClassifier,
        image: &Tensor,
        sal: &SaliencyMap,
        alpha: f64,
        gates: &[Vec<bool>],
        (imin, imax): (usize, usize),
    ) -> f64 {
        let pass = model.forward_gated(image, Some(gates)).unwrap();
        let raw = raw_cam(model, &pass.feature_maps, 1);
        let span = raw[imax] - raw[imin];
        let norm: Vec<f64> = raw.iter().map(|r| (r - raw[imin]) / span).collect();
        let target = saliency_target(sal, 8, 8);
        alpha * mse(&norm, target.values()) + (1.0 - alpha) * cross_entropy(&pass.logits, 1)
    }

    fn extrema(v: &[f64]) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for i in 0..v.len() {
            if v[i] < v[lo] {
                lo = i;
            }
            if v[i] > v[hi] {
                hi = i;
            }
        }
        (lo, hi)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, alpha) in [(50u64, 0.0), (51, 0.5), (52, 1.0)] {
            let (model, image, sal) = setup(seed);
            let cfg = CyborgConfig::new(alpha).unwrap();
            let eval = cyborg_gradients(&model, &image, 1, &sal, &cfg).unwrap();
            assert!((eval.loss - loss_of(&model, &image, &sal, &cfg)).abs() < 1e-12);
            let pass = model.forward(&image).unwrap();
            let gates = pass.relu_gates();
            let ext = extrema(&raw_cam(&model, &pass.feature_maps, 1));
            let loss = |m: &CamClassifier| pinned_loss(m, &image, &sal, alpha, &gates, ext);
            let h = 1e-3;
            for t in 0..model.parameters().len() {
                for idx in 0..model.parameters()[t].len() {
                    let mut plus = model.clone();
                    plus.parameters_mut()[t][idx] += h;
                    let mut minus = model.clone();
                    minus.parameters_mut()[t][idx] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let an = eval.gradients.0[t][idx];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        rel <= 1e-3,
                        "alpha {alpha} {}[{idx}]: fd {fd} analytic {an}",
                        model.parameter_names()[t]
                    );
                }
            }
        }
    }

    #[test]
    fn alpha_zero_equals_cross_entropy_backward() {
        let (model, image, sal) = setup(60);
        let pass = model.forward(&image).unwrap();
        let cfg = CyborgConfig::new(0.0).unwrap();
        let guided = cyborg_gradients_from_pass(&model, &pass, 1, &sal, &cfg);
        let plain = model.cross_entropy_gradients(&pass, 1);
        assert_eq!(guided.gradients, plain);
        let unguided = unguided_gradients_from_pass(&model, &pass, 1, &cfg);
        assert_eq!(unguided.gradients, plain);
    }

    #[test]
    fn constant_cam_passes_no_human_gradient() {
        let mut model = CamClassifier::zeros(1, &[2], 2);
        model.convs[0].bias = vec![0.5, 0.25];
        model.head_weight = vec![0.1, 0.2, 0.3, 0.4];
        let image = Tensor::new(vec![1, 4, 4], vec![0.3; 16]).unwrap();
        let sal = SaliencyMap::from_fn(4, 4, |x, _| (x * 80) as u8);
        let pass = model.forward(&image).unwrap();
        let human_only = cyborg_gradients_from_pass(
            &model,
            &pass,
            1,
            &sal,
            &CyborgConfig::new(1.0).unwrap(),
        );
        assert!(human_only.gradients.0.iter().flatten().all(|&g| g == 0.0));
        assert!(human_only.human_loss.unwrap() > 0.0);
    }
}
