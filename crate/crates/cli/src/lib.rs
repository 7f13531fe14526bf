//! The `kdp` command line: dataset generation, training, closed-loop
//! evaluation, latency benchmarks and the ablation matrix.

mod commands;
pub mod overrides;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{load_backend, load_scorer, run, Backend};

/// Bad flags, bad override keys, incompatible inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    use kdp_core::Error;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Spec(_) | Error::Shape(_) => EXIT_USAGE,
                Error::Io { .. } | Error::Format(_) => EXIT_IO,
                Error::NonFinite(_) => EXIT_NUMERICAL,
                Error::State(_) => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "kdp", version, about = "Keyed drifting policy experiments")]
pub struct Cli {
    /// Output directory for every artifact of the command.
    #[arg(long, global = true, env = "KDP_OUT_DIR", default_value = "kdp_out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the scripted policy mix and save a window dataset.
    GenData(GenDataArgs),
    /// Train a generator, diffusion baseline, behaviour clone or return scorer.
    Train(TrainArgs),
    /// Closed-loop receding-horizon evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Planning-latency grid over K for each given backend.
    Bench(BenchArgs),
    /// Train and evaluate every drift-objective ablation on one dataset.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Environment TOML replacing the built-in defaults.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Dataset path; defaults to `<out-dir>/<env>.kdpw`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Kdp,
    Diffuser,
    Bc,
    Scorer,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Kdp => "kdp",
            Variant::Diffuser => "diffuser",
            Variant::Bc => "bc",
            Variant::Scorer => "scorer",
        }
    }
}

#[derive(Debug, Args)]
pub struct OverrideArgs {
    /// Config override `key=value`; keys are dotted paths or unique leaf names.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// TOML file layered over the defaults before any `--set`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub variant: Variant,
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Drift ablation (kdp only): full, no_keying, include_self_negatives,
    /// attraction_only, no_drift_norm, single_tau.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Write the loss curve as SVG.
    #[arg(long)]
    pub svg: bool,
    /// Write distances and softmax weights of the last training batch (kdp only).
    #[arg(long)]
    pub dump_drift: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scorer: Option<PathBuf>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(short = 'k', long = "k", default_value_t = 16)]
    pub k: usize,
    /// Actions executed per plan call.
    #[arg(long, default_value_t = 1)]
    pub chunk: usize,
    #[arg(long)]
    pub ranked: bool,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Rollout worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write per-step states and actions to CSV.
    #[arg(long)]
    pub dump_trajectories: bool,
    /// Write rollout paths as SVG (PointMaze2D only).
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub kdp: Option<PathBuf>,
    #[arg(long)]
    pub diffuser: Option<PathBuf>,
    #[arg(long)]
    pub bc: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,16,64")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub calls: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Rank candidates with this scorer during evaluation.
    #[arg(long)]
    pub scorer: Option<PathBuf>,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(short = 'k', long = "k", default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub chunk: usize,
    /// Probe conditions for action diversity.
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    /// Samples per probe for action diversity.
    #[arg(long, default_value_t = 256)]
    pub probe_samples: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}
