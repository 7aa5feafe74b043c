//! `stagewise`: simulate, label, train and evaluate from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 validation,
//! 4 numerical failure, 5 I/O.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stagewise_core::bc::{BcMode, WeightMode};
use stagewise_core::sampler::MinLengthPolicy;
use stagewise_core::{Error, Exec};

#[derive(Debug, Parser)]
#[command(name = "stagewise", version, about = "Stage-aware progress estimation and reward-aligned behavior cloning")]
pub struct Cli {
    /// TOML configuration with [sim], [gen], [sampler], [train], [estimator], [weights], [policy] and [bc] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every stochastic stage; overrides the configuration file.
    #[arg(long, global = true, env = "STAGEWISE_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for the parallel core (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LengthPolicyArg {
    Error,
    ShrinkGap,
}

impl From<LengthPolicyArg> for MinLengthPolicy {
    fn from(p: LengthPolicyArg) -> Self {
        match p {
            LengthPolicyArg::Error => MinLengthPolicy::Error,
            LengthPolicyArg::ShrinkGap => MinLengthPolicy::ShrinkGap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Uniform,
    RaBc,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<BcMode> {
        match self {
            ModeArg::Uniform => vec![BcMode::Uniform],
            ModeArg::RaBc => vec![BcMode::RaBc],
            ModeArg::Both => vec![BcMode::Uniform, BcMode::RaBc],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightModeArg {
    Online,
    Offline,
}

impl From<WeightModeArg> for WeightMode {
    fn from(w: WeightModeArg) -> Self {
        match w {
            WeightModeArg::Online => WeightMode::Online,
            WeightModeArg::Offline => WeightMode::Offline,
        }
    }
}

/// Source of progress estimates.
#[derive(Debug, Clone, Args)]
#[group(multiple = false)]
pub struct PredictorArgs {
    /// Use the dataset's ground-truth progress.
    #[arg(long)]
    pub oracle: bool,
    /// Use a trained estimator checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use a constant progress value.
    #[arg(long)]
    pub constant: Option<f64>,
}

/// Overrides for the RA-BC weighting section.
#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// Progress-delta threshold above which a chunk gets full weight.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Chunk length in frames.
    #[arg(long)]
    pub delta: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated demonstration dataset (and a rollout set).
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        experts: Option<usize>,
        #[arg(long)]
        suboptimal: Option<usize>,
        /// Rollouts per class (SE, PSE, FE); 0 skips the rollout set.
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Filter annotations, compute stage priors and write progress labels.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump augmented training windows as JSONL.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_trajectory: Option<usize>,
        #[arg(long, value_enum)]
        min_length_policy: Option<LengthPolicyArg>,
    },
    /// Train the progress estimator.
    TrainReward {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        per_trajectory: Option<usize>,
        /// Hold-out fraction of the kept trajectories.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long, value_enum)]
        min_length_policy: Option<LengthPolicyArg>,
    },
    /// Progress MSE of a checkpoint on labeled demonstrations.
    EvalDemo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// `split.json` from train-reward; evaluates its hold-out ids only.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify rollouts as SE/PSE/FE and score them against truth.
    EvalRollout {
        /// Trace JSONL with `{rollout_id, t, p}` lines.
        #[arg(long, conflicts_with = "dataset")]
        traces: Option<PathBuf>,
        /// Rollout dataset; progress comes from the chosen predictor.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Ground-truth classes as `{rollout_id, class}` lines.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute RA-BC chunk weights for a dataset.
    Weigh {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train behavior-cloning policies and compare hold-out action error.
    TrainBc {
        #[arg(long)]
        dataset: PathBuf,
        /// Separate evaluation dataset; defaults to a hold-out split.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long, value_enum)]
        weight_mode: Option<WeightModeArg>,
        /// Comma-separated seeds; defaults to the global seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise the artifacts found in a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Exit code and category name for an error.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => (2, "usage"),
                Error::Validation(_) | Error::TooShort { .. } | Error::Version { .. } => (3, "validation"),
                Error::Numerical(_) => (4, "numerical"),
                Error::Io { .. } | Error::Format { .. } => (5, "io"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (5, "io");
        }
    }
    (1, "internal")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
        #[cfg(not(feature = "parallel"))]
        log::warn!("--threads {n} ignored: built without the parallel feature");
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match commands::run(cli, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, category) = classify(&e);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{category}]: {message}");
            ExitCode::from(code)
        }
    }
}
