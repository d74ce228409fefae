//! `latmorph` command-line pipeline: dataset generation, training, latent
//! sweeps, transition rendering and regression reports.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "latmorph",
    version,
    about = "Latent-space transition regions for lattice unit cells"
)]
pub struct Cli {
    /// JSON file supplying defaults for any flag (explicit flags win).
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    /// Log progress (info level).
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, homogenize and save a synthetic unit-cell dataset.
    GenData(GenDataArgs),
    /// Train the geometry or hybrid VAE.
    Train(TrainArgs),
    /// Run the standard-deviation sweep and score every transition.
    Sweep(SweepArgs),
    /// Render one transition (or a 2D mesh) with its metrics.
    Interpolate(InterpolateArgs),
    /// Fit OLS models to one or two sweep CSVs.
    Regress(RegressArgs),
    /// Sweep and regress both checkpoints in one go.
    Report(ReportArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Number of cells.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output dataset file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Family weights, e.g. `frame=1,ring=2` (default: all families equally).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub families: Option<String>,
    /// Stiffness storage width: f32 or f64.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stiffness_dtype: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// geometry or hybrid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output checkpoint file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Maximum number of epochs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// KL weight before normalization by D/W.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Epochs without test-loss improvement before stopping.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset the checkpoint must have been trained on (hash check).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated distances in standard deviations (default 1..6).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances: Option<String>,
    /// Comma-separated transition lengths (default 5,10,15).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<String>,
    /// Random sign directions per (distance, length).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    /// Score smoothness on cells thresholded at 0.5 instead of grayscale decodes.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub threshold_smoothness: bool,
    /// Homogenize grayscale decodes directly instead of thresholding them.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub grayscale_stiffness: bool,
    /// Average C_K over the first n−3 pairs like C_s, instead of all n−1.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub ck_first_n_minus_3: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct InterpolateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset holding the endpoint cells.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Start cell id.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<u64>,
    /// End cell id.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<u64>,
    /// Start latent vector, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_latent: Option<String>,
    /// End latent vector, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to_latent: Option<String>,
    /// Pick endpoints from the same latent cluster.
    #[arg(long, conflicts_with = "inter_cluster")]
    #[serde(default, skip_serializing_if = "is_false")]
    pub intra_cluster: bool,
    /// Pick endpoints from different latent clusters.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub inter_cluster: bool,
    /// Number of latent clusters for endpoint picking.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    /// Cells in the transition, endpoints included (default 10).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Bilinear mesh between four corner cells instead of a strip.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub mesh: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    /// Corner ids `top-left,top-right,bottom-left,bottom-right`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corners: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RegressArgs {
    /// Sweep CSV; give once or twice (geometry and hybrid).
    #[arg(long = "input", value_name = "CSV")]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input: Vec<PathBuf>,
    /// Write the text report here as well as to stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Fit on per-configuration means instead of one row per transition.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub aggregate: bool,
    /// Significance level for starring.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<PathBuf>,
    /// Training dataset; enables hash checks and test-split reconstruction scores.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    /// Score smoothness on cells thresholded at 0.5 instead of grayscale decodes.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub threshold_smoothness: bool,
    /// Homogenize grayscale decodes directly instead of thresholding them.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub grayscale_stiffness: bool,
    /// Average C_K over the first n−3 pairs like C_s, instead of all n−1.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub ck_first_n_minus_3: bool,
    /// Fit on per-configuration means instead of one row per transition.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub aggregate: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}
