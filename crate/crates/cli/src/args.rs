use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "pdelab", version, about = "Solvers, emulator training and diagnostics for 1D/2D turbulence")]
pub struct Cli {
    /// Worker threads for training and ensembles (0 = all cores).
    #[arg(long, global = true, env = "PDE_LAB_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a solver trajectory.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Pre-train an emulator on one conditioning value.
    Pretrain(TrainArgs),
    /// Fine-tune a checkpoint on several conditioning values.
    Finetune(TrainArgs),
    /// Repeat a training run from its manifest.
    Replay(ReplayArgs),
    /// Autoregressive emulator rollout.
    Rollout(RolloutArgs),
    /// Statistical diagnostics.
    #[command(subcommand)]
    Evaluate(Evaluate),
    /// Print the header of a trajectory or checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Subcommand, Debug)]
pub enum Simulate {
    /// Kuramoto-Sivashinsky on a periodic domain of length L.
    Ks(KsArgs),
    /// Stochastically forced barotropic beta-plane; records zonal means.
    Beta(BetaArgs),
}

#[derive(Args, Debug)]
pub struct KsArgs {
    #[arg(long = "L", value_name = "L")]
    pub length: f64,
    #[arg(long, default_value_t = 100)]
    pub snapshots: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time between snapshots.
    #[arg(long, default_value_t = 1.0)]
    pub interval: f64,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Grid points (default from the domain length).
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BetaArgs {
    /// Default 0.9, or that of the jet regime.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub snapshots: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub interval: f64,
    #[arg(long, default_value_t = 100.0)]
    pub warmup: f64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub k_f: Option<f64>,
    #[arg(long)]
    pub delta_k: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Start from the strong-jet parameter set instead of the defaults.
    #[arg(long)]
    pub jet_regime: bool,
    /// Also write the final 2D vorticity field here.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Trajectory files; conditioning is read from their metadata.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// JSON with optional "model" and "train" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting checkpoint (required for finetune).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Run seed; the weight initialization uses a derived stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Deterministic,
    Probabilistic,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trajectory supplying the initial history.
    #[arg(long)]
    pub init: PathBuf,
    /// Index of the first history frame in the initial trajectory.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Conditioning value (default: from the initial trajectory).
    #[arg(long)]
    pub cond: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub members: u64,
    #[arg(long, default_value_t = pdelab::diagnostics::DEFAULT_CAP)]
    pub cap: f64,
}

#[derive(Subcommand, Debug)]
pub enum Evaluate {
    /// Joint PDF of (u, ∂u, ∂t u) for a solver trajectory and an emulator rollout.
    Pdf(PdfArgs),
    /// Time-mean power spectrum of a trajectory.
    Psd(PsdArgs),
    /// Jet counts and nucleation/coalescence events.
    Events(EventsArgs),
    /// Emulator tracking horizon in Lyapunov times.
    Horizon(HorizonArgs),
    /// Leading Lyapunov exponent of the KS equation.
    Lyapunov(LyapunovArgs),
}

#[derive(Args, Debug)]
pub struct PdfArgs {
    #[arg(long)]
    pub truth: PathBuf,
    /// Emulator checkpoint rolled out from the first frames of the truth.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Second trajectory compared directly against the truth.
    #[arg(long)]
    pub other: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "L", value_name = "L")]
    pub length: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "eval_pdf")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PsdArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "eval_psd")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EventsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = pdelab::diagnostics::DEFAULT_PROMINENCE)]
    pub prominence: f64,
    #[arg(long, default_value_t = pdelab::diagnostics::DEFAULT_DEBOUNCE)]
    pub debounce: usize,
    #[arg(long, default_value = "eval_events")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct HorizonArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Leading exponent; estimated from the solver when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "eval_horizon")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct LyapunovArgs {
    #[arg(long = "L", value_name = "L")]
    pub length: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 10.0)]
    pub interval: f64,
    #[arg(long, default_value = "eval_lyapunov")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub file: PathBuf,
}
