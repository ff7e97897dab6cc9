mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Coefficient-wise confidence intervals for p ≫ n linear regression by
/// approximate orthogonalization.
#[derive(Debug, Parser)]
#[command(name = "orthoinfer", version, about)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, env = "ORTHOINFER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate every coefficient with a confidence interval.
    Infer(InferArgs),
    /// Build an F-test confidence set of models and filter it by the intervals.
    Models(ModelsArgs),
    /// Run coverage simulations on equicorrelated designs.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Header of the response column.
    #[arg(long)]
    pub response: String,
    /// Merge adjacent columns whose absolute correlation exceeds this value.
    #[arg(long, default_value_t = 0.95)]
    pub collapse_threshold: f64,
    /// Keep every column.
    #[arg(long)]
    pub no_collapse: bool,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Interval level is 1 − alpha.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Known error variance; estimated by refitted cross-validation otherwise.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct ModelsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Encompassing variables, as column labels or zero-based indices.
    #[arg(long, value_delimiter = ',', conflicts_with = "screen", required_unless_present = "screen")]
    pub s_hat: Vec<String>,
    /// Choose the encompassing set by stability screening.
    #[arg(long)]
    pub screen: bool,
    #[arg(long, default_value_t = 1000)]
    pub stability_reps: usize,
    /// Variables kept per screening run; defaults to ⌊n/3⌋.
    #[arg(long)]
    pub screen_size: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub max_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha_f: f64,
    /// Widening factor applied to the intervals in the compatibility filter.
    #[arg(long, default_value_t = 1.0)]
    pub slack: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config.
    #[arg(long, conflicts_with = "table1", required_unless_present = "table1")]
    pub config: Option<PathBuf>,
    /// Run the eight cells of the factorial coverage design.
    #[arg(long)]
    pub table1: bool,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Infer(a) => commands::infer(&a),
        Command::Models(a) => commands::models(&a),
        Command::Simulate(a) => commands::simulate(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
