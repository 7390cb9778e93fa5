//! Command-line surface. Every subcommand parameter is optional here so a
//! config file can fill what the flags leave out; built-in defaults apply
//! last and are listed in each flag's help.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "latent-events", version, about = "Latent event dynamics toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Root seed for every random stream [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core [default: 0]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory for outputs without an explicit path [default: .]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Log filter, e.g. info or debug; RUST_LOG is used when absent [default: info]
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// JSON file with parameters for the chosen subcommand; flags win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the banded synthetic dataset as JSON lines
    Gen(GenArgs),
    /// Train the toy model and write a checkpoint with its training log
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a reference model) on a split
    Eval(EvalArgs),
    /// Evaluate the IVP upper bound on KL(q || p_r) for a problem file
    Klbound(KlboundArgs),
    /// Build Pearson and event-lag adjacencies from an observation CSV
    Graph(GraphArgs),
    /// Run the adjacency perturbation checks
    Stability(StabilityArgs),
    /// Emit CSV inputs for boundary-scatter and rate-density plots
    PlotData(PlotDataArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Klbound(_) => "klbound",
            Command::Graph(_) => "graph",
            Command::Stability(_) => "stability",
            Command::PlotData(_) => "plot-data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandChoice {
    Low,
    Mid,
    High,
    All,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    /// Band to generate [default: all]
    #[arg(long, value_enum)]
    pub band: Option<BandChoice>,
    /// Distinct training rates per band [default: 10]
    #[arg(long)]
    pub rates: Option<usize>,
    /// Distinct validation rates per band [default: half of --rates, rounded up]
    #[arg(long)]
    pub val_rates: Option<usize>,
    /// Distinct test rates per band [default: half of --rates, rounded up]
    #[arg(long)]
    pub test_rates: Option<usize>,
    /// Sequences per rate [default: 10]
    #[arg(long)]
    pub seqs: Option<usize>,
    /// Observation noise standard deviation [default: 0.07]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Observations per sequence [default: 20]
    #[arg(long)]
    pub observations: Option<usize>,
    /// Output directory [default: --out-dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and val.jsonl [default: --out-dir]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint and log [default: --out-dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Records per optimizer step [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 1e-2]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam weight decay [default: 1e-4]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Global gradient-norm clip [default: 1.0]
    #[arg(long)]
    pub clip: Option<f64>,
    /// Records stacked per group; 2 or more enables the graph term [default: 1]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Graph regulariser weight [default: 0.1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rate-consistency weight [default: 1e-3]
    #[arg(long)]
    pub lambda_lif: Option<f64>,
    /// Reconstruction weight [default: 1/(2·0.07²)]
    #[arg(long)]
    pub lambda_aux: Option<f64>,
    /// Epochs without validation-accuracy gain before halving the rate [default: 15]
    #[arg(long)]
    pub plateau: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Frozen constant-rate model with a zero reconstruction
    Constant,
    /// Reads the generating truth back from each record
    Oracle,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; required unless --reference is given
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Evaluate a reference model instead of a checkpoint
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
    /// Rate of the constant reference model, Hz [default: 1.0]
    #[arg(long)]
    pub constant_rate: Option<f64>,
    /// JSONL split file, or a directory holding test.jsonl [default: --out-dir]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report path [default: <out-dir>/report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Boundary scatter CSV path [default: <out-dir>/scatter.csv]
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlboundArgs {
    /// Problem file: q family, prior rate, horizon and tail parameter
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// RK4 steps across the change-of-variables domain [default: 4096]
    #[arg(long)]
    pub ode_steps: Option<usize>,
    /// Absolute tolerance of the quadrature oracle [default: 1e-10]
    #[arg(long)]
    pub oracle_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphArgs {
    /// CSV with a header, a time column first and one column per channel
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Edge decay rate, 1/s [default: 2.0]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Time-grid points over the recording [default: 16]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Keep the raw (possibly asymmetric) event-lag adjacency
    #[arg(long)]
    pub no_symmetrize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseChoice {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckChoice {
    Deterministic,
    Tail,
    Expectation,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityArgs {
    /// Edge decay rate, 1/s [default: 2.0]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Lag noise model [default: uniform]
    #[arg(long, value_enum)]
    pub noise: Option<NoiseChoice>,
    /// Uniform noise half-width, s [default: 0.1]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Gaussian noise standard deviation, s [default: 0.1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Channels [default: 4]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Grid points times Monte-Carlo samples [default: 128]
    #[arg(long)]
    pub ms: Option<usize>,
    /// Trials [default: 1000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Check to run [default: deterministic for uniform noise, tail for gaussian]
    #[arg(long, value_enum)]
    pub check: Option<CheckChoice>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotDataArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// JSONL split file, or a directory holding test.jsonl [default: --out-dir]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory [default: --out-dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
}
