use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salgran::granularity::binarize;
use salgran::mimic::{dataset_mse, generate_saliency, train_mimic, MimicAutoencoder, MimicPair, MimicTrainConfig};
use salgran::nn::Tensor;
use salgran::synth::{gaussian_bump, generate, SynthConfig};
use salgran::{SaliencyMap, ThresholdMode};

/// Noisy images with a bright blob where the target bump sits.
fn toy_pairs(n: usize, seed: u64) -> Vec<MimicPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (cx, cy) = (rng.gen_range(5.0..27.0), rng.gen_range(5.0..27.0));
            let target = gaussian_bump(32, cx, cy, 2.0);
            let data = (0..32 * 32)
                .map(|i| {
                    let bump = target.pixels()[i] as f64 / 255.0;
                    0.3 + 0.5 * bump + rng.gen_range(-0.05..0.05)
                })
                .collect();
            MimicPair {
                image: Tensor::new(vec![1, 32, 32], data).unwrap(),
                target,
            }
        })
        .collect()
}

#[test]
fn toy_bumps_cut_mse_to_a_fifth_of_the_untrained_model() {
    let pairs = toy_pairs(100, 1);
    let config = MimicTrainConfig {
        learning_rate: 1e-3,
        ..MimicTrainConfig::default()
    };
    let untrained = dataset_mse(&MimicAutoencoder::seeded(config.seed), &pairs).unwrap();
    let trained = train_mimic(&pairs, &config).unwrap();
    assert_eq!(trained.initial_mse, untrained);
    assert_eq!(trained.epoch_mse.len(), 50);
    assert!(
        trained.final_mse <= 0.2 * untrained,
        "{} vs untrained {untrained}",
        trained.final_mse
    );
}

fn iou(a: &SaliencyMap, b: &SaliencyMap) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        inter += usize::from(x > 0 && y > 0);
        union += usize::from(x > 0 || y > 0);
    }
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[test]
fn predicted_maps_overlap_the_planted_bump() {
    // Broad bumps: the stride-4 bottleneck cannot render one-pixel ones.
    let data = generate(&SynthConfig {
        n_train: 100,
        artifact_radius: 3,
        companion_amplitude: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let attacks: Vec<_> = data.train.iter().filter(|s| s.label.is_attack()).collect();
    let pairs: Vec<MimicPair> = attacks
        .iter()
        .map(|s| MimicPair {
            image: s.image.clone(),
            target: s.true_foi.clone().unwrap(),
        })
        .collect();
    let config = MimicTrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        epochs: 200,
        ..MimicTrainConfig::default()
    };
    let trained = train_mimic(&pairs, &config).unwrap();
    let scores: Vec<f64> = attacks
        .iter()
        .map(|s| {
            let predicted = binarize(&generate_saliency(&trained.model, &s.image).unwrap(), ThresholdMode::Half);
            let truth = binarize(s.true_foi.as_ref().unwrap(), ThresholdMode::Half);
            iou(&predicted, &truth)
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean > 0.3, "mean IoU {mean}");
    assert!(scores[0] > 0.3, "first training image IoU {}", scores[0]);
}

#[test]
fn training_is_reproducible() {
    let pairs = toy_pairs(12, 2);
    let config = MimicTrainConfig {
        epochs: 3,
        batch_size: 5,
        seed: 9,
        ..MimicTrainConfig::default()
    };
    let a = train_mimic(&pairs, &config).unwrap();
    let b = train_mimic(&pairs, &config).unwrap();
    assert_eq!(a.model.to_checkpoint(), b.model.to_checkpoint());
    assert_eq!(a.epoch_mse, b.epoch_mse);
}
