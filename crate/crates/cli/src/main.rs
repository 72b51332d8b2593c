//! `meshsr`: dataset generation, training, evaluation, HR-subset selection
//! and loss-landscape probing from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use meshsr_core::mpnn::{Centering, LayerKind};
use meshsr_core::train::Mode;
use meshsr_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "meshsr",
    version,
    about = "Semi-supervised super-resolution of mesh PDE fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train F (and G in complementary mode) on a dataset.
    Train(TrainArgs),
    /// Report test RMSE of a checkpoint next to the kNN baseline.
    Eval(EvalArgs),
    /// Pick the paired samples that keep their HR labels by MMD herding.
    SelectHr(SelectArgs),
    /// Compare the loss before and after a gradient step of multiplier·lr.
    ProbeLandscape(ProbeArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Poisson,
    Jitter,
}

#[derive(clap::Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "poisson")]
    pub kind: DataKind,
    /// Training draws (paired plus unpaired).
    #[arg(long)]
    pub n: usize,
    /// Paired draws among the N training draws.
    #[arg(long)]
    pub nh: usize,
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    /// Falls back to MESHSR_SEED, then 0.
    #[arg(long, env = "MESHSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON file overriding generator settings field by field.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the checkpoint, metrics and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub mpnn: Option<LayerKind>,
    /// none (O), n (N), m (M) or nm (N+M).
    #[arg(long)]
    pub centering: Option<Centering>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Record one loss-landscape probe per epoch at this multiple of lr.
    #[arg(long)]
    pub probe_multiplier: Option<f64>,
    #[arg(long, env = "MESHSR_SEED")]
    pub seed: Option<u64>,
    /// Selection file from `select-hr`; other paired samples lose their HR
    /// fields and join the unpaired pool.
    #[arg(long)]
    pub hr_subset: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Test,
    Paired,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub nh: usize,
    /// RBF bandwidth; the median pairwise distance when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, env = "MESHSR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "complementary")]
    pub mode: Mode,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = meshsr_core::train::DEFAULT_PROBE_MULTIPLIER)]
    pub multiplier: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, env = "MESHSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Run directory for probe.csv and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Validation(_) => 2,
            Error::Divergence { .. } | Error::Solver { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } => 4,
            Error::Dimension { .. } | Error::Index { .. } | Error::Contract(_) => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::SelectHr(a) => commands::select_hr(&a),
        Command::ProbeLandscape(a) => commands::probe(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
