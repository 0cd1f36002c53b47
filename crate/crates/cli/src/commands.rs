use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use salgran::eval::{roc_curve, ScoredSet};
use salgran::experiment::{
    load_splits, mimic_pairs, run_experiment, run_single, score_records, second_train_config, DatasetSource,
    ExperimentConfig, SaliencySource,
};
use salgran::granularity::derive;
use salgran::io::config::parse_config;
use salgran::io::manifest::{load_manifest, write_rows, ManifestRow};
use salgran::io::pgm::{read_pgm, write_pgm};
use salgran::io::report::{checkpoint_name, write_outputs};
use salgran::mimic::{self, generate_saliency, MimicAutoencoder, MimicTrainConfig};
use salgran::nn::CamClassifier;
use salgran::saliency::aggregate_annotations;
use salgran::synth::{generate, image_to_map, SynthSample};
use salgran::{Error, GranularitySpec};

use crate::Common;

fn load_config(path: Option<&Path>) -> salgran::Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run_seed(config: &ExperimentConfig, common: &Common) -> salgran::Result<u64> {
    common
        .seed
        .or_else(|| config.seeds.first().copied())
        .ok_or_else(|| Error::ConfigInvalid("seeds must not be empty".into()))
}

/// Writes one split into `dir/name/` and returns its manifest rows.
fn write_split(dir: &Path, name: &str, samples: &[SynthSample]) -> anyhow::Result<Vec<ManifestRow>> {
    create_dir(&dir.join(name))?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let image = format!("{name}/{}.pgm", s.id);
        write_pgm(&image_to_map(&s.image)?, &dir.join(&image))?;
        let mut row = ManifestRow {
            image,
            label: s.label.index() as u8,
            ..ManifestRow::default()
        };
        if let Some(set) = &s.annotations {
            let mut paths = Vec::new();
            for (k, map) in set.annotator_maps.iter().enumerate() {
                let p = format!("{name}/{}_ann{k}.pgm", s.id);
                write_pgm(map, &dir.join(&p))?;
                paths.push(p);
            }
            row.annotators = paths.join(";");
            row.correct = set
                .annotator_correct
                .iter()
                .map(|&c| if c { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(";");
        }
        rows.push(row);
    }
    write_rows(&dir.join(format!("{name}.csv")), &rows)?;
    Ok(rows)
}

pub fn gen_data(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common.config.as_deref())?;
    let DatasetSource::Synthetic(mut synth) = config.dataset else {
        return Err(Error::ConfigInvalid("gen-data needs a synthetic dataset config".into()).into());
    };
    if let Some(seed) = common.seed {
        synth = synth.with_seed(seed);
    }
    create_dir(&common.out)?;
    let data = generate(&synth)?;
    let second = generate(&second_train_config(&synth))?;
    for (name, split) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
        ("second_train", &second.train),
    ] {
        let rows = write_split(&common.out, name, split)?;
        info!("{name}: {} samples", rows.len());
    }
    println!("wrote dataset to {}", common.out.display());
    Ok(())
}

pub fn aggregate(manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let records = load_manifest(manifest)?;
    create_dir(out)?;
    let mut written = 0;
    for r in &records {
        let Some(set) = &r.annotations else { continue };
        match aggregate_annotations(set) {
            Ok(map) => {
                write_pgm(&map, &out.join(format!("{}.pgm", r.id)))?;
                written += 1;
            }
            Err(Error::NoCorrectAnnotations) => warn!("{}: no correct annotations, skipped", r.id),
            Err(e) => return Err(e.into()),
        }
    }
    println!("aggregated {written} maps into {}", out.display());
    Ok(())
}

fn pgm_inputs(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn transform(input: &Path, out: &Path, spec: GranularitySpec) -> anyhow::Result<()> {
    create_dir(out)?;
    let mut written = 0;
    for path in pgm_inputs(input)? {
        let map = read_pgm(&path)?;
        let name = path.file_name().expect("pgm paths have a file name");
        match derive(&map, &spec) {
            Ok(derived) => {
                write_pgm(&derived, &out.join(name))?;
                written += 1;
            }
            Err(Error::EmptySaliency) => warn!("{}: empty map, skipped", path.display()),
            Err(e) => return Err(e.into()),
        }
    }
    println!("wrote {written} {} maps to {}", spec.level, out.display());
    Ok(())
}

pub fn train(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common.config.as_deref())?;
    let seed = run_seed(&config, common)?;
    let splits = load_splits(&config)?;
    let run = run_single(&config, &splits, seed)?;
    create_dir(&common.out)?;
    write_bytes(&common.out.join(checkpoint_name(seed)), &run.checkpoint)?;
    println!("seed {seed}: test AUC {:.4}, val AUC {:.4}", run.test_auc, run.val_auc);
    Ok(())
}

pub fn train_mimic(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common.config.as_deref())?;
    let splits = load_splits(&ExperimentConfig {
        saliency_source: SaliencySource::Human,
        ..config.clone()
    })?;
    let pairs = mimic_pairs(&splits.train);
    let settings = MimicTrainConfig {
        seed: common.seed.unwrap_or(config.mimic.seed),
        ..config.mimic
    };
    let trained = mimic::train_mimic(&pairs, &settings)?;
    create_dir(&common.out)?;
    write_bytes(&common.out.join("mimic.ckpt"), &trained.model.to_checkpoint())?;
    println!(
        "{} pairs: MSE {:.5} -> {:.5}",
        pairs.len(),
        trained.initial_mse,
        trained.final_mse
    );
    Ok(())
}

pub fn mimic_generate(model: &Path, manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let bytes = fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let mimic = MimicAutoencoder::from_checkpoint(&bytes)?;
    let records = load_manifest(manifest)?;
    create_dir(out)?;
    for r in &records {
        let map = generate_saliency(&mimic, &r.image)?;
        write_pgm(&map, &out.join(format!("{}.pgm", r.id)))?;
    }
    println!("generated {} maps into {}", records.len(), out.display());
    Ok(())
}

fn write_scores(path: &Path, ids: &[&str], scores: &ScoredSet) -> anyhow::Result<()> {
    let mut text = String::from("id,label,score\n");
    for ((id, s), l) in ids.iter().zip(&scores.scores).zip(&scores.labels) {
        text.push_str(&format!("{id},{},{s}\n", u8::from(*l)));
    }
    write_bytes(path, text.as_bytes())
}

pub fn evaluate(model: &Path, common: &Common) -> anyhow::Result<()> {
    let config = load_config(common.config.as_deref())?;
    let bytes = fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let classifier = CamClassifier::from_checkpoint(&bytes)?;
    let splits = load_splits(&config)?;
    let scores = score_records(&classifier, &splits.test)?;
    let curve = roc_curve(&scores)?;
    create_dir(&common.out)?;
    let ids: Vec<&str> = splits.test.iter().map(|r| r.id.as_str()).collect();
    write_scores(&common.out.join("scores.csv"), &ids, &scores)?;
    let mut roc = String::from("fpr,tpr\n");
    for p in &curve.points {
        roc.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    write_bytes(&common.out.join("roc.csv"), roc.as_bytes())?;
    println!("test AUC {:.4}", curve.area());
    Ok(())
}

pub fn experiment(common: &Common) -> anyhow::Result<()> {
    let mut config = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    let outcome = run_experiment(&config)?;
    write_outputs(&outcome, &common.out)?;
    println!(
        "{} {}: AUC {:.4} +/- {:.4} over {} runs",
        outcome.source.as_str(),
        outcome.granularity,
        outcome.report.mean,
        outcome.report.std,
        outcome.runs.len()
    );
    Ok(())
}
