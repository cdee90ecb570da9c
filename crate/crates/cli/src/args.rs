use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use egnn::diagnostics::BandSource;
use egnn::model::{Activation, Variant, WeightInit};

#[derive(Parser, Debug)]
#[command(name = "egnn", version, about = "Energy-constrained graph neural networks")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per seed and aggregate test accuracy.
    Train(TrainArgs),
    /// Export the per-layer energy trace of a checkpoint or a fresh model.
    Trace(TraceArgs),
    /// Randomized checks of the energy bounds plus the residual preconditions.
    Verify(VerifyArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic Erdős–Rényi dataset directory.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelOverrides {
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Number of propagation layers K.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub cmin: Option<f64>,
    #[arg(long)]
    pub cmax: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Initial SReLU shift.
    #[arg(long, allow_negative_numbers = true)]
    pub b_init: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Trunk weight initialization: orthogonal or glorot.
    #[arg(long)]
    pub init: Option<WeightInit>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Apply weight decay to trunk weights as well.
    #[arg(long)]
    pub trunk_weight_decay: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// Dataset directory, or a name under ./data (cora, pubmed).
    #[arg(long)]
    pub dataset: String,
    /// Skip L1 row normalization of the features.
    #[arg(long, default_value_t = false)]
    pub raw_features: bool,
    /// Largest graph for dense eigendecomposition.
    #[arg(long, default_value_t = egnn::spectral::DEFAULT_EIGEN_CAP)]
    pub eigen_cap: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Seeds as `a..b` (end exclusive) or a comma-separated list.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// JSON file with "model" and "train" objects; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "at_init"])))]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Trace a freshly initialized model built from the flags.
    #[arg(long, default_value_t = false)]
    pub at_init: bool,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace every shift with -1e30 so SReLU is the identity.
    #[arg(long, default_value_t = false)]
    pub linearize_shifts: bool,
    #[arg(long, default_value = "post", value_parser = parse_band_source)]
    pub band_source: BandSource,
    #[arg(long, default_value = "trace.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub cmin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cmax: f64,
    /// Defaults to cmin - beta.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Defaults to min(cmin, 0.1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Graph whose λ₀ enters the preconditions; a synthetic graph otherwise.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "egnn")]
    pub variant: Variant,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Defaults to srelu for egnn, relu for gcn, linear for sgc.
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Test hook: scale the input-weight gradient before comparing.
    #[arg(long, default_value_t = false, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_band_source(s: &str) -> Result<BandSource, String> {
    match s {
        "post" => Ok(BandSource::Post),
        "pre" => Ok(BandSource::Pre),
        _ => Err(format!("expected 'pre' or 'post', got '{s}'")),
    }
}

/// `a..b` (end exclusive), `a,b,c`, or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start in '{s}'"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range end in '{s}'"))?;
        if b <= a {
            return Err(format!("empty seed range '{s}'"));
        }
        return Ok((a..b).collect());
    }
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| format!("bad seed '{t}'")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = seeds.iter().find(|x| !seen.insert(**x)) {
        return Err(format!("seed {d} listed twice"));
    }
    Ok(seeds)
}
