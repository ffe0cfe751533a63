//! `cmes`: generate synthetic data, train, evaluate and run ablations.

mod ablate;
mod commands;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use cmes_core::model::ModelKind;
use cmes_core::train::Strategy;

#[derive(Parser, Debug)]
#[command(name = "cmes", version, about = "Mixed exercise sampling for cognitive diagnosis")]
pub struct Cli {
    /// Root for run directories when --out is not given.
    #[arg(long, global = true, env = "CMES_OUT_ROOT", default_value = "runs")]
    pub out_root: PathBuf,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset with known mastery.
    Gen(GenArgs),
    /// Train one model and write metrics and a checkpoint.
    Train(TrainCmd),
    /// Evaluate a trained run on its test split.
    Eval(EvalArgs),
    /// Compare strategies across seeds, optionally over a parameter grid.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub students: usize,
    #[arg(long, default_value_t = 300)]
    pub exercises: usize,
    #[arg(long, default_value_t = 20)]
    pub concepts: usize,
    #[arg(long, default_value_t = 40)]
    pub logs_per_student: usize,
    /// Response temperature; smaller is less noisy.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory (default: <out-root>/synthetic-<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").args(["data", "interactions", "synthetic_seed"])))]
pub struct DataArgs {
    /// Directory with interactions.csv and q_matrix.csv (and ground_truth.json).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "q_matrix")]
    pub interactions: Option<PathBuf>,
    #[arg(long, requires = "interactions")]
    pub q_matrix: Option<PathBuf>,
    /// Generate the reference synthetic population in memory with this seed.
    #[arg(long)]
    pub synthetic_seed: Option<u64>,
    /// Drop students with fewer logs.
    #[arg(long, default_value_t = 15)]
    pub min_logs: usize,
}

/// Training flags. Unset flags take the defaults (or the values of --config).
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Exercises attached per answered exercise.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub alpha_w: Option<f64>,
    #[arg(long)]
    pub beta_w: Option<f64>,
    /// Weight of the ranking loss.
    #[arg(long)]
    pub balance: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// NCD hidden widths, e.g. 64,32.
    #[arg(long, value_parser = parse_pair)]
    pub hidden: Option<(usize, usize)>,
    /// Embedding size (default: number of concepts).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Fraction of each student's train logs to keep.
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Re-run from a resolved config written by an earlier run.
    #[arg(long, conflicts_with_all = ["data", "interactions", "synthetic_seed"])]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Run directory (default: <out-root>/<model>-<strategy>-s<seed>-<hash>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    /// Write the candidate sets of this epoch to sampler_audit.csv.
    #[arg(long)]
    pub audit_epoch: Option<usize>,
    /// Write the pseudo labels of this epoch to pseudo_labels.csv.
    #[arg(long)]
    pub dump_labels_epoch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Evaluate another checkpoint file instead of <run>/checkpoint.json.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Number of seeds, counting up from --seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = Strategy::ALL)]
    pub strategies: Vec<Strategy>,
    /// Sweep one parameter, e.g. n=5,10,20 (n, clusters, balance, train-frac).
    #[arg(long)]
    pub grid: Option<String>,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Failures with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Core(cmes_core::Error),
    /// Refusal to overwrite or to evaluate under a different configuration.
    Refused(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use cmes_core::Error as E;
        match self {
            CliError::Core(E::Parse { .. } | E::Validation(_) | E::Index { .. } | E::Config(_)) => 2,
            CliError::Core(E::Numeric(_) | E::Diverged { .. } | E::UndefinedMetric(_)) => 3,
            CliError::Core(E::Checkpoint(_)) | CliError::Refused(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Refused(m) => f.write_str(m),
        }
    }
}

impl From<cmes_core::Error> for CliError {
    fn from(e: cmes_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(&cli, a),
        Command::Train(a) => commands::train(&cli, a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => ablate::run(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two widths like 64,32, got {s:?}"))?;
    let width = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((width(a)?, width(b)?))
}
