//! One row of the comparison matrix: a saliency source, a granularity and a
//! list of seeds, trained and scored on the shifted test split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cyborg::CyborgConfig;
use crate::error::{Error, Result};
use crate::eval::{auc, summarize_runs, EvalReport, ScoredSet, DEFAULT_FPR_GRID};
use crate::granularity::{derive_or_full, GranularityLevel, GranularitySpec, ThresholdMode};
use crate::io::manifest::{load_manifest, ManifestRecord};
use crate::io::pgm::read_pgm;
use crate::mimic::{generate_saliency, train_mimic, MimicPair, MimicTrainConfig};
use crate::nn::{CamClassifier, Tensor};
use crate::par;
use crate::saliency::{aggregate_annotations, SaliencyMap};
use crate::synth::{generate, mix_seed, SynthConfig, SynthSample};
use crate::train::{score_images, train_classifier, LossMode, TrainConfig, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencySource {
    Human,
    Mimic,
    SegmenterExternal,
    None,
}

impl SaliencySource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Human => "human",
            Self::Mimic => "mimic",
            Self::SegmenterExternal => "segmenter_external",
            Self::None => "none",
        }
    }

    /// Thresholding recipe used when the config names only a level.
    pub fn recipe(self, level: GranularityLevel) -> GranularitySpec {
        match self {
            Self::Human | Self::None => GranularitySpec::human(level),
            Self::Mimic => GranularitySpec::mimic_iris(level),
            Self::SegmenterExternal => GranularitySpec {
                level,
                threshold_mode: ThresholdMode::Half,
                erode_before_boi: false,
            },
        }
    }
}

/// Either a bare level (`"aoi"`) or a full spec object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GranularitySetting {
    Level(GranularityLevel),
    Spec(GranularitySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    /// Unlabeled-saliency split for the mimic source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_train: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Manifest(ManifestPaths),
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub saliency_source: SaliencySource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub granularity: Option<GranularitySetting>,
    pub cyborg: CyborgConfig,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub mimic: MimicTrainConfig,
    pub dataset: DatasetSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmenter_dir: Option<PathBuf>,
    pub fpr_grid_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            saliency_source: SaliencySource::None,
            granularity: None,
            cyborg: CyborgConfig::default(),
            seeds: vec![1, 2, 3],
            train: TrainConfig::default(),
            mimic: MimicTrainConfig::default(),
            dataset: DatasetSource::default(),
            segmenter_dir: None,
            fpr_grid_size: DEFAULT_FPR_GRID,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        self.cyborg.validate()?;
        self.train.validate()?;
        self.mimic.validate()?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.fpr_grid_size < 2 {
            return bad("fpr_grid_size must be at least 2");
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        match self.saliency_source {
            SaliencySource::None => {}
            _ if self.granularity.is_none() => {
                return bad("granularity is required unless saliency_source is none")
            }
            SaliencySource::SegmenterExternal if self.segmenter_dir.is_none() => {
                return bad("segmenter_external needs segmenter_dir")
            }
            SaliencySource::Mimic => {
                if let DatasetSource::Manifest(m) = &self.dataset {
                    if m.second_train.is_none() {
                        return bad("mimic source with a manifest dataset needs second_train");
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Resolved granularity; `None` for unguided training.
    pub fn granularity_spec(&self) -> Option<GranularitySpec> {
        if self.saliency_source == SaliencySource::None {
            return None;
        }
        self.granularity.map(|g| match g {
            GranularitySetting::Level(level) => self.saliency_source.recipe(level),
            GranularitySetting::Spec(spec) => spec,
        })
    }

    /// Label used in reports: `none` for unguided runs.
    pub fn granularity_label(&self) -> String {
        self.granularity_spec()
            .map_or_else(|| "none".to_string(), |g| g.level.to_string())
    }
}

/// A sample with whatever saliency its source provides.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub image: Tensor,
    pub label: usize,
    /// Full-resolution FOI map, if available.
    pub foi: Option<SaliencyMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
    /// Second training split, only loaded for the mimic source.
    pub second_train: Option<Vec<Record>>,
}

fn record_from_synth(s: &SynthSample) -> Record {
    let foi = s.annotations.as_ref().and_then(|a| match aggregate_annotations(a) {
        Ok(map) => Some(map),
        Err(e) => {
            log::warn!("{}: {e}; sample trained without saliency", s.id);
            None
        }
    });
    Record {
        id: s.id.clone(),
        image: s.image.clone(),
        label: s.label.index(),
        foi,
    }
}

fn record_from_manifest(r: &ManifestRecord) -> Result<Record> {
    let foi = match (&r.saliency, &r.annotations) {
        (Some(map), _) => Some(map.clone()),
        (None, Some(set)) => match aggregate_annotations(set) {
            Ok(map) => Some(map),
            Err(Error::NoCorrectAnnotations) => {
                log::warn!("{}: no correct annotations; sample trained without saliency", r.id);
                None
            }
            Err(e) => return Err(e),
        },
        (None, None) => None,
    };
    Ok(Record {
        id: r.id.clone(),
        image: r.image.clone(),
        label: r.label,
        foi,
    })
}

/// Generator settings for the second, same-sized training split.
pub fn second_train_config(synth: &SynthConfig) -> SynthConfig {
    synth.with_seed(mix_seed(synth.seed, 0x5345_434f_4e44))
}

pub fn load_splits(config: &ExperimentConfig) -> Result<Splits> {
    let want_second = config.saliency_source == SaliencySource::Mimic;
    match &config.dataset {
        DatasetSource::Synthetic(synth) => {
            let data = generate(synth)?;
            let convert = |v: &[SynthSample]| v.iter().map(record_from_synth).collect::<Vec<_>>();
            let second_train = if want_second {
                let fresh = generate(&second_train_config(synth))?;
                Some(convert(&fresh.train))
            } else {
                None
            };
            Ok(Splits {
                train: convert(&data.train),
                val: convert(&data.val),
                test: convert(&data.test),
                second_train,
            })
        }
        DatasetSource::Manifest(paths) => {
            let load = |p: &Path| -> Result<Vec<Record>> {
                load_manifest(p)?.iter().map(record_from_manifest).collect()
            };
            let second_train = match (&paths.second_train, want_second) {
                (Some(p), true) => Some(load(p)?),
                _ => None,
            };
            Ok(Splits {
                train: load(&paths.train)?,
                val: load(&paths.val)?,
                test: load(&paths.test)?,
                second_train,
            })
        }
    }
}

/// Result of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub test_auc: f64,
    pub val_auc: f64,
    pub test_scores: ScoredSet,
    /// Serialized classifier.
    pub checkpoint: Vec<u8>,
    /// Held-out mimic MSE (trained, untrained), mimic source only.
    pub mimic_mse: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub source: SaliencySource,
    pub granularity: String,
    pub runs: Vec<RunResult>,
    pub report: EvalReport,
}

/// Attack probabilities for `records`, labelled attack-positive.
pub fn score_records(model: &CamClassifier, records: &[Record]) -> Result<ScoredSet> {
    let inputs: Vec<Tensor> = records.iter().map(|r| r.image.standardized()).collect();
    let images: Vec<&Tensor> = inputs.iter().collect();
    ScoredSet::new(
        score_images(model, &images)?,
        records.iter().map(|r| r.label == 1).collect(),
    )
}

fn derive_all(
    records: &[Record],
    maps: Vec<Option<SaliencyMap>>,
    spec: &GranularitySpec,
) -> Result<Vec<TrainSample>> {
    records
        .iter()
        .zip(maps)
        .map(|(r, m)| {
            Ok(TrainSample {
                image: r.image.standardized(),
                label: r.label,
                saliency: m.map(|m| derive_or_full(&m, spec)).transpose()?,
            })
        })
        .collect()
}

/// Image and FOI pairs for every record that has a map.
pub fn mimic_pairs(records: &[Record]) -> Vec<MimicPair> {
    records
        .iter()
        .filter_map(|r| {
            r.foi.as_ref().map(|f| MimicPair {
                image: r.image.clone(),
                target: f.clone(),
            })
        })
        .collect()
}

fn external_maps(dir: &Path, records: &[Record]) -> Result<Vec<Option<SaliencyMap>>> {
    records
        .iter()
        .map(|r| {
            if r.label != 1 {
                return Ok(None);
            }
            let map = read_pgm(&dir.join(format!("{}.pgm", r.id)))?;
            let (_, h, w) = r.image.chw()?;
            if map.dims() != (w, h) {
                return Err(Error::dims((w, h), map.dims()));
            }
            Ok(Some(map))
        })
        .collect()
}

/// Seed-specific streams: model init, shuffling and mimic init never share one.
pub fn run_seeds(seed: u64) -> (u64, u64, u64) {
    (mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3))
}

/// Runs one seed on already-loaded splits.
pub fn run_single(config: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<RunResult> {
    let (init_seed, shuffle_seed, mimic_seed) = run_seeds(seed);
    let spec = config.granularity_spec();
    let mut mimic_mse = None;
    let (samples, loss) = match (config.saliency_source, spec) {
        (SaliencySource::None, _) | (_, None) => (
            derive_all(&splits.train, vec![None; splits.train.len()], &GranularitySpec::human(GranularityLevel::Foi))?,
            LossMode::CrossEntropy,
        ),
        (SaliencySource::Human, Some(spec)) => {
            let maps = splits.train.iter().map(|r| r.foi.clone()).collect();
            (derive_all(&splits.train, maps, &spec)?, LossMode::Guided(config.cyborg))
        }
        (SaliencySource::SegmenterExternal, Some(spec)) => {
            let dir = config
                .segmenter_dir
                .as_ref()
                .ok_or_else(|| Error::ConfigInvalid("segmenter_dir missing".into()))?;
            let maps = external_maps(dir, &splits.train)?;
            (derive_all(&splits.train, maps, &spec)?, LossMode::Guided(config.cyborg))
        }
        (SaliencySource::Mimic, Some(spec)) => {
            let second = splits
                .second_train
                .as_ref()
                .ok_or_else(|| Error::ConfigInvalid("mimic source needs a second training split".into()))?;
            let mimic_cfg = MimicTrainConfig {
                seed: mimic_seed,
                ..config.mimic
            };
            let trained = train_mimic(&mimic_pairs(&splits.train), &mimic_cfg)?;
            let held_out = mimic_pairs(second);
            if !held_out.is_empty() {
                let untrained = crate::mimic::MimicAutoencoder::seeded(mimic_seed);
                mimic_mse = Some((
                    crate::mimic::dataset_mse(&trained.model, &held_out)?,
                    crate::mimic::dataset_mse(&untrained, &held_out)?,
                ));
            }
            let maps = par::map(second, |r| {
                if r.label == 1 {
                    generate_saliency(&trained.model, &r.image).map(Some)
                } else {
                    Ok(None)
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            (derive_all(second, maps, &spec)?, LossMode::Guided(config.cyborg))
        }
    };
    let in_channels = samples
        .first()
        .ok_or(Error::EmptyDataset)?
        .image
        .chw()?
        .0;
    let model = CamClassifier::seeded(in_channels, &crate::nn::classifier::DESK_CHANNELS, 2, init_seed);
    let outcome = train_classifier(model, &samples, loss, &config.train, shuffle_seed, None)?;
    let test_scores = score_records(&outcome.model, &splits.test)?;
    let val_scores = score_records(&outcome.model, &splits.val)?;
    Ok(RunResult {
        seed,
        test_auc: auc(&test_scores)?,
        val_auc: auc(&val_scores)?,
        test_scores,
        checkpoint: outcome.model.to_checkpoint(),
        mimic_mse,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let splits = load_splits(config)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = run_single(config, &splits, seed)?;
        log::info!(
            "{} {} seed {seed}: test AUC {:.4}, val AUC {:.4}",
            config.saliency_source.as_str(),
            config.granularity_label(),
            run.test_auc,
            run.val_auc
        );
        runs.push(run);
    }
    runs.sort_by_key(|r| r.seed);
    let sets: Vec<ScoredSet> = runs.iter().map(|r| r.test_scores.clone()).collect();
    let report = summarize_runs(&sets, config.fpr_grid_size)?;
    Ok(ExperimentOutcome {
        source: config.saliency_source,
        granularity: config.granularity_label(),
        runs,
        report,
    })
}
