use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nids_core::ClassLabel;

#[derive(Debug, Parser)]
#[command(name = "hybrid-nids", version, about = "Hybrid flow-based intrusion detection: random forest prefilter + VAE anomaly scoring")]
pub struct Cli {
    /// Run seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Feature schema JSON (tracked ports, minimum flows, window length).
    #[arg(long, global = true, value_name = "PATH")]
    pub schema: Option<PathBuf>,

    /// Suppress summaries on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test flow dataset.
    Gen(GenArgs),
    /// Aggregate flows into window samples.
    Extract(ExtractArgs),
    /// Train the random forest filter.
    FitFilter(FitFilterArgs),
    /// Train the VAE on background samples and select its threshold.
    FitVae(FitVaeArgs),
    /// Run the hybrid detector over a flow file.
    Run(RunArgs),
    /// Compare filter modes or the VAE with and without the filter.
    Eval(EvalArgs),
    /// Evaluate with attack classes held out of classifier training.
    Novelty(NoveltyArgs),
    /// Measure per-stage throughput.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Extract(_) => "extract",
            Command::FitFilter(_) => "fit-filter",
            Command::FitVae(_) => "fit-vae",
            Command::Run(_) => "run",
            Command::Eval(_) => "eval",
            Command::Novelty(_) => "novelty",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args, serde::Serialize)]
pub struct GenArgs {
    /// Output directory for train.csv, test.csv and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Simulated seconds per file.
    #[arg(long)]
    pub duration: Option<u64>,
    #[arg(long)]
    pub train_sources: Option<usize>,
    #[arg(long)]
    pub test_sources: Option<usize>,
    /// Attack windows per class in the training file.
    #[arg(long)]
    pub train_attack_windows: Option<usize>,
    #[arg(long)]
    pub test_attack_windows: Option<usize>,
    /// Start from the small test configuration.
    #[arg(long)]
    pub small: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ExtractArgs {
    /// Flow CSV (optionally gzip-compressed).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Sample CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Flow visibility report JSON.
    #[arg(long)]
    pub visibility: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Candidate features per split (default: floor(sqrt(d))).
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Samples drawn per class when balancing.
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct FitFilterArgs {
    /// Training sample CSV.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub mode: ModeArg,
    /// Attack classes to leave out of training.
    #[arg(long, num_args = 1.., value_parser = parse_label)]
    pub omit: Vec<ClassLabel>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct VaeArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.01)]
    pub kl_weight: f64,
    /// Encoder widths; the decoder mirrors them.
    #[arg(long, value_delimiter = ',', default_values_t = [512, 512, 1024])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub latent: usize,
    /// Threshold coefficient: tau = mean + k * std of training losses.
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct FitVaeArgs {
    /// Training sample CSV; only background rows are used for training.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV (default: <out>.loss.csv).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[command(flatten)]
    pub vae: VaeArgs,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct RunArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Filter artifact from fit-filter.
    #[arg(long)]
    pub filter: PathBuf,
    /// VAE artifact from fit-vae.
    #[arg(long)]
    pub vae: PathBuf,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the threshold stored with the VAE.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Include the flows' labels in the results.
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Filter,
    Hybrid,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Training sample CSV.
    #[arg(long)]
    pub train: PathBuf,
    /// Test sample CSV.
    #[arg(long)]
    pub test: PathBuf,
    /// Report JSON; a text table goes to <out>.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a trained VAE artifact instead of training one.
    #[arg(long)]
    pub vae_artifact: Option<PathBuf>,
    /// ROC points of the score-level curves (hybrid experiment).
    #[arg(long)]
    pub roc_csv: Option<PathBuf>,
    /// Score densities by class (hybrid experiment).
    #[arg(long)]
    pub kde_csv: Option<PathBuf>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub vae: VaeArgs,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct NoveltyArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Attack classes held out of classifier training.
    #[arg(long, num_args = 1.., required = true, value_parser = parse_label)]
    pub omit: Vec<ClassLabel>,
    /// Also evaluate on background plus the omitted classes only.
    #[arg(long)]
    pub restricted: bool,
    #[arg(long)]
    pub vae_artifact: Option<PathBuf>,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub vae: VaeArgs,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct BenchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub filter: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
}

fn parse_label(s: &str) -> Result<ClassLabel, String> {
    s.parse::<ClassLabel>().map_err(|e| e.to_string())
}
