//! Command-line surface: data generation, graph building, training,
//! evaluation, ablation grids and gradient checking.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

pub mod ablate;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use ablate::{AblationReport, AblationRow, Grid};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Bad flags, configuration or inputs; maps to exit code 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError(pub Vec<String>);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ValidationError>()
            || matches!(
                cause.downcast_ref::<fcn_core::Error>(),
                Some(fcn_core::Error::Config(_))
            )
        {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

#[derive(Debug, Parser)]
#[command(
    name = "fcn",
    version,
    about = "Fashion cognitive network: outfit to physical-label classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-rule dataset.
    GenData(GenDataArgs),
    /// Build the label co-occurrence graph from the training split.
    BuildGraph(BuildGraphArgs),
    /// Train a model, then evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a saved model on one split.
    Eval(EvalArgs),
    /// Run an ablation grid.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub outfits: usize,
    #[arg(long, default_value_t = 17)]
    pub labels: usize,
    /// Labels driven by planted rules (default: all).
    #[arg(long)]
    pub rules: Option<usize>,
    #[arg(long, default_value_t = 14)]
    pub n_attrs: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    /// Size of the shared item pool (default: one item per outfit).
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// train,val,test ratios.
    #[arg(long, default_value = "8,1,1")]
    pub split: String,
}

#[derive(Debug, Clone, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.lr0=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set train.seed=S`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Train the linear baseline instead of the network.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory (default: the model's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub grid: Grid,
    #[command(flatten)]
    pub run: RunArgs,
    /// Custom settings instead of the defaults: `;`-separated window lists for
    /// `region`, comma-separated counts otherwise.
    #[arg(long)]
    pub values: Option<String>,
    /// Only run these row indices (comma-separated, 0-based).
    #[arg(long)]
    pub rows: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Negative control: perturbs the analytic gradient of the first tensor.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
