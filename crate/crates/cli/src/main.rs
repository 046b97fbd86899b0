//! `ltsm`: simulate, train, sample and evaluate diffusion posterior estimators.

mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<ltsm::Error> for CliError {
    fn from(e: ltsm::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ltsm", version, about = "Diffusion posterior estimation with latent target score matching")]
pub struct Cli {
    /// Sectioned TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (default: config, then $LTSM_OUT_DIR, then ./ltsm-out).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a joint dataset from a simulator.
    Simulate(SimulateArgs),
    /// Train a score network on a dataset.
    Train(TrainArgs),
    /// Draw posterior samples from a checkpoint.
    Sample(SampleArgs),
    /// MMD between checkpoint samples and reference posterior samples.
    EvalMmd(EvalMmdArgs),
    /// Regression-target variance profile over diffusion time.
    DiagVariance(DiagVarianceArgs),
    /// Optimal (and optionally learned) mixture weight over diffusion time.
    DiagWeights(DiagWeightsArgs),
    /// Gaussian-task l1 score error of checkpoints.
    DiagScoreError(DiagScoreErrorArgs),
    /// Render CSV columns as an SVG line plot.
    Plot(PlotArgs),
    /// Run a complete figure pipeline.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Number of joint draws.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (default under the output root).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// dsm, tsm, ltsm, mix-learned or mix-fixed:<w>.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Hidden widths of the score network, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Hidden widths of the weight network, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub weight_hidden: Option<Vec<usize>>,
    /// unit or noise-variance.
    #[arg(long)]
    pub weighting: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Run directory (default under the output root).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Reverse-time Euler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalMmdArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Observations, comma separated (default: the task's five).
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Simulation budget label recorded in the output.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_reference: Option<usize>,
    #[arg(long)]
    pub n_model: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagVarianceArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Condition on this observation instead of the joint.
    #[arg(long)]
    pub x: Option<String>,
    /// Monte-Carlo draws per grid time.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagWeightsArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// MIX-learned checkpoint whose weight schedule is compared.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagScoreErrorArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// Observations to average over, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<f64>>,
    #[arg(long)]
    pub grid_t: Option<usize>,
    #[arg(long)]
    pub grid_theta: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Column for the horizontal axis.
    #[arg(long)]
    pub x: String,
    /// Columns to draw, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    #[arg(long)]
    pub log_x: bool,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Variance,
    ScoreError,
    MmdBudget,
    Weights,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long, value_enum)]
    pub figure: Figure,
    /// Restrict to one task (default depends on the figure).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub objectives: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Training steps per cell.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Monte-Carlo draws per grid point for variance and weight figures.
    #[arg(long)]
    pub n: Option<usize>,
    /// Concurrent training cells.
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
