//! `salgran` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salgran::{GranularityLevel, GranularitySpec};

#[derive(Parser, Debug)]
#[command(name = "salgran", version)]
#[command(about = "Saliency granularity experiments on a desk-scale CAM classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Only log warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
}

/// Flags shared by the config-driven subcommands.
#[derive(Args, Debug)]
pub struct Common {
    /// JSON experiment config; every field is optional
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,

    /// Seed override: dataset seed for gen-data, run seed elsewhere
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as PGM files plus CSV manifests
    GenData(Common),
    /// Average the correct annotators of every manifest row into one map
    Aggregate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive FOI, AOI or BOI maps from a PGM file or a directory of them
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_level)]
        level: GranularityLevel,
        #[arg(long, value_enum, default_value_t = Recipe::Human)]
        recipe: Recipe,
    },
    /// Train one classifier and save its checkpoint
    Train(Common),
    /// Train the saliency mimic on the training split's maps
    TrainMimic(Common),
    /// Predict a saliency map for every image in a manifest
    MimicGenerate {
        /// Mimic checkpoint written by train-mimic
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split with a saved classifier
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every seed of a config and write the report files
    Experiment(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Recipe {
    Human,
    MimicIris,
    MimicFace,
}

impl Recipe {
    pub fn spec(self, level: GranularityLevel) -> GranularitySpec {
        match self {
            Recipe::Human => GranularitySpec::human(level),
            Recipe::MimicIris => GranularitySpec::mimic_iris(level),
            Recipe::MimicFace => GranularitySpec::mimic_face(level),
        }
    }
}

fn parse_level(s: &str) -> Result<GranularityLevel, String> {
    s.parse().map_err(|e: salgran::Error| e.to_string())
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        salgran::Error::ConfigInvalid(format!("FORGE_THREADS must be a positive integer, got `{raw}`"))
    })?;
    salgran::par::configure_threads(n);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Aggregate { manifest, out } => commands::aggregate(&manifest, &out),
        Command::Transform {
            input,
            out,
            level,
            recipe,
        } => commands::transform(&input, &out, recipe.spec(level)),
        Command::Train(c) => commands::train(&c),
        Command::TrainMimic(c) => commands::train_mimic(&c),
        Command::MimicGenerate { model, manifest, out } => commands::mimic_generate(&model, &manifest, &out),
        Command::Evaluate { model, common } => commands::evaluate(&model, &common),
        Command::Experiment(c) => commands::experiment(&c),
    }
}

/// Exit code and class of a failure; errors outside the library count as data errors.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    let core = err.chain().find_map(|e| e.downcast_ref::<salgran::Error>());
    match core.map(salgran::Error::kind) {
        Some(salgran::ErrorKind::Config) => (2, "config"),
        Some(salgran::ErrorKind::Numeric) => (4, "numeric"),
        Some(salgran::ErrorKind::Data) | None => (3, "data"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            eprintln!("salgran-error code={code} kind={kind} message={:?}", format!("{err:#}"));
            ExitCode::from(code)
        }
    }
}
