use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use longrisk::cohort::CohortConfig;
use longrisk::trainer::TrainConfig;
use longrisk::ModelConfig;
use serde::{Deserialize, Serialize};

fn cohort() -> CohortConfig {
    CohortConfig::default()
}

fn train() -> TrainConfig {
    TrainConfig::default()
}

fn model() -> ModelConfig {
    ModelConfig::default()
}

pub const TABLE_SCENARIOS: &str = "0,1*,2*,3*,4*,4+";

#[derive(Parser, Debug)]
#[command(name = "longrisk", version, about = "Breast cancer risk prediction from longitudinal screening histories")]
pub struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "LONGRISK_OUT", default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic screening cohort archive.
    Generate(GenerateArgs),
    /// Train a risk model on a cohort archive.
    Train(TrainArgs),
    /// Evaluate a checkpoint under history scenarios.
    Evaluate(EvaluateArgs),
    /// Write pixel saliency maps for selected subjects.
    Saliency(SaliencyArgs),
    /// Repeated split protocol: grid search, training and evaluation per split.
    Experiment(ExperimentArgs),
    /// Print a saved metric report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat TOML file of settings; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: <OUT_ROOT>/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the output directory of an earlier run.
    #[arg(long)]
    pub force: bool,
    /// Parallel grid points or scenarios.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = cohort().n_subjects)]
    pub subjects: usize,
    #[arg(long, default_value_t = cohort().seed)]
    pub seed: u64,
    /// Fraction of subjects who are diagnosed.
    #[arg(long, default_value_t = cohort().incidence)]
    pub incidence: f64,
    /// Probability of attending each yearly screening.
    #[arg(long, default_value_t = cohort().attendance)]
    pub attendance: f64,
    #[arg(long, default_value_t = cohort().span_years)]
    pub span_years: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = cohort().resolution)]
    pub resolution: usize,
    /// Lesion contrast at diagnosis.
    #[arg(long, default_value_t = cohort().signal.peak_amplitude)]
    pub peak_amplitude: f64,
    /// Yearly log-rate at which lesion contrast fades going back in time.
    #[arg(long, default_value_t = cohort().signal.growth_rate)]
    pub growth_rate: f64,
    #[arg(long, default_value_t = cohort().signal.pixel_noise)]
    pub pixel_noise: f64,
    /// Fraction of subjects with a benign spot.
    #[arg(long, default_value_t = cohort().signal.benign_rate)]
    pub benign_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Train the configuration given by the flags.
    Single,
    /// Search all 27 width, head and L2 combinations.
    Full,
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Cohort archive directory.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Master seed for splits and initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = train().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = train().dropout)]
    pub dropout: f64,
    #[arg(long, default_value_t = train().d_visit)]
    pub d_visit: usize,
    #[arg(long, default_value_t = train().n_heads)]
    pub heads: usize,
    #[arg(long, default_value_t = train().l2)]
    pub l2: f64,
    #[arg(long, default_value_t = train().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = train().max_epochs)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = train().patience)]
    pub patience: usize,
    /// Randomly hide past visits during training.
    #[arg(long, default_value_t = train().augment, action = clap::ArgAction::Set)]
    pub augment: bool,
    #[arg(long, default_value_t = train().drop_prob)]
    pub drop_prob: f64,
    /// Width of the per-visit image features.
    #[arg(long, default_value_t = model().d_img)]
    pub d_img: usize,
    /// Keep the visit encoder's attention block fixed.
    #[arg(long, default_value_t = model().freeze_image_aggregator, action = clap::ArgAction::Set)]
    pub freeze: bool,
    #[arg(long, value_enum, default_value_t = GridMode::Single)]
    pub grid: GridMode,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Continue from this checkpoint's parameters and architecture.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    /// Subjects held out when the checkpoint was trained.
    Test,
    /// Every subject in the cohort.
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cohort archive directory.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Comma-separated `<years><*|+>` (annual or biennial history).
    #[arg(long, default_value = TABLE_SCENARIOS)]
    pub scenarios: String,
    /// Pseudo test sets per cell.
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Comma-separated subject ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub subjects: Vec<String>,
    /// Follow-up year whose risk is explained.
    #[arg(long, default_value_t = 1)]
    pub year: usize,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value = TABLE_SCENARIOS)]
    pub scenarios: String,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
    Json,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// A report.json file or a directory holding one.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}
