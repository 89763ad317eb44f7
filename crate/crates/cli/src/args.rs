use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "steerlabel", about = "Pseudo steering-angle labels from LiDAR odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options every subcommand accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config value by dotted path, e.g. `--set pipeline.k=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Derive every random seed of the run from this value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the deterministic reference mode.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drive the simulator and write a log (poses, ground truth, scans).
    Simulate(SimulateArgs),
    /// Estimate poses from the scans of a log by scan matching.
    Odometry(OdometryArgs),
    /// Produce steering labels from poses, and score them when ground truth is at hand.
    Label(LabelArgs),
    /// Score a label file against a ground-truth file.
    Eval(EvalArgs),
    /// Run the self-supervised regression sweep on the Gaussian task.
    #[command(name = "ssrl-demo")]
    SsrlDemo(SsrlArgs),
    /// Simulate, estimate poses, label with both predictors and evaluate.
    Full(FullArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OdometryArgs {
    #[command(flatten)]
    pub common: Common,
    /// Log directory with a `scans/` folder. Timestamps come from its
    /// trajectory file when present, otherwise from `simulator.dt`.
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    Proposed,
    Pid,
    Both,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Temporal interval; overrides `pipeline.k`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use these poses (JSONL) instead of running odometry.
    #[arg(long, conflicts_with = "log")]
    pub trajectory: Option<PathBuf>,
    /// Run odometry on the scans of this log instead of simulating.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Ground-truth CSV to score against.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Predictor::Proposed)]
    pub predictor: Predictor,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Linear,
    Mlp,
}

#[derive(Debug, Args)]
pub struct SsrlArgs {
    #[command(flatten)]
    pub common: Common,
    /// Overrides `ssrl.model`.
    #[arg(long, value_enum)]
    pub model: Option<Model>,
}

#[derive(Debug, Args)]
pub struct FullArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also write the scans, making the output directory a complete log.
    #[arg(long)]
    pub write_scans: bool,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Odometry(_) => "odometry",
            Command::Label(_) => "label",
            Command::Eval(_) => "eval",
            Command::SsrlDemo(_) => "ssrl-demo",
            Command::Full(_) => "full",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate(a) => &a.common,
            Command::Odometry(a) => &a.common,
            Command::Label(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::SsrlDemo(a) => &a.common,
            Command::Full(a) => &a.common,
        }
    }
}
