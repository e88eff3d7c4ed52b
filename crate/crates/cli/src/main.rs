//! `nmf`: train, evaluate and query neural metric factorization models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmf_core::dataset::AssociationFormat;
use nmf_core::Variant;

/// Environment variable selecting log verbosity: quiet, info (default) or debug.
pub const LOG_ENV: &str = "NMF_LOG";

#[derive(Parser, Debug)]
#[command(name = "nmf", version, about = "Drug-disease association prediction by neural metric factorization")]
#[command(after_help = "Logging: set NMF_LOG=quiet|info|debug (default info). Logs go to stderr.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check an association matrix and two similarity matrices.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        /// Directory for manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model and write checkpoint.json, loss_log.tsv and manifest.json.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the held-out split and write metrics.json, roc.tsv, pr.tsv.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split seed; defaults to the seed recorded in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
        /// Train fraction; defaults to the ratio recorded in the checkpoint.
        #[arg(long)]
        ratio: Option<f64>,
        /// Refuse checkpoints of any other variant.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top-ranked diseases for one drug as tab-separated text.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        drug: String,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Leave out diseases already associated with the drug.
        #[arg(long)]
        exclude_known: bool,
        /// Directory for manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a planted synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_drugs: usize,
        #[arg(long, default_value_t = 150)]
        n_diseases: usize,
        /// Dimension of the planted geometry.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        /// Fraction of positives swapped with random zero cells.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Association file.
    #[arg(long)]
    pub assoc: PathBuf,
    #[arg(long, default_value = "matrix")]
    pub assoc_format: AssociationFormat,
    /// Drug similarity matrix.
    #[arg(long)]
    pub drug_sim: PathBuf,
    /// Disease similarity matrix.
    #[arg(long)]
    pub disease_sim: PathBuf,
}

/// Flags that override the JSON config; unset flags keep file or default values.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat JSON object with TrainConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the split, initialization and sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// nmf, nmf-oh or mf [default: nmf].
    #[arg(long)]
    pub variant: Option<Variant>,
    /// [default: 32]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Train fraction of the positives [default: 0.7].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Negatives drawn per positive each epoch [default: 5].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the drug side loss [default: 0.01].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the disease side loss [default: 0.01].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Labeled pairs per minibatch [default: 256].
    #[arg(long)]
    pub batch_size: Option<usize>,
}

fn init_logging() {
    let level = match std::env::var(LOG_ENV).unwrap_or_default().to_ascii_lowercase().as_str() {
        "quiet" | "off" => log::LevelFilter::Off,
        "debug" => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { data, out } => commands::validate(&data, out.as_deref()),
        Command::Train { data, overrides, out } => commands::train(&data, &overrides, &out),
        Command::Evaluate { data, checkpoint, seed, ratio, variant, out } => {
            commands::evaluate(&data, &checkpoint, seed, ratio, variant, &out)
        }
        Command::Predict { data, checkpoint, drug, top_n, exclude_known, out } => {
            commands::predict(&data, &checkpoint, &drug, top_n, exclude_known, out.as_deref())
        }
        Command::Synth { n_drugs, n_diseases, dim, density, noise, seed, out } => commands::synth(
            nmf_core::dataset::SynthParams { n_drugs, n_diseases, latent_dim: dim, density, noise, seed },
            &out,
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
