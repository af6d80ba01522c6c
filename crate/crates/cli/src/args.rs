use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "frulab", version, about = "Recurrent-network laboratory: data, training, gradient certificates, theory checks")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file (one per line, `#` comments); explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mix-sin or mix-poly dataset
    Datagen(DatagenArgs),
    /// Train a model and write history CSV plus checkpoint
    Train(TrainArgs),
    /// Certify gradient-ratio bounds of linear cells
    Certify(CertifyArgs),
    /// Bucketed gradient-norm probe at epoch snapshots
    Probe(ProbeArgs),
    /// Recompute the expressive-power constants and fits
    Theory(TheoryArgs),
    /// Trainable-parameter counts per architecture
    Variables(VariablesArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Datagen(_) => "datagen",
            Command::Train(_) => "train",
            Command::Certify(_) => "certify",
            Command::Probe(_) => "probe",
            Command::Theory(_) => "theory",
            Command::Variables(_) => "variables",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatagenArgs {
    /// Generator: mix-sin or mix-poly
    #[arg(long, default_value = "mix-poly")]
    pub gen: String,
    /// Number of sequences
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Sequence length
    #[arg(long, default_value_t = 176)]
    pub t: usize,
    /// Polynomial degree (mix-poly) or number of frequencies (mix-sin)
    #[arg(long, default_value_t = 5)]
    pub degree: usize,
    /// Base seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the dataset as CSV to this path
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Output dataset file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Cell: rnn, lstm, sru or fru
    #[arg(long, default_value = "fru")]
    pub arch: String,
    /// Hidden units n_h
    #[arg(long, default_value_t = 200)]
    pub units: usize,
    /// Inner width n_g of SRU/FRU
    #[arg(long, default_value_t = 60)]
    pub inner: usize,
    /// FRU frequency count K
    #[arg(long, default_value_t = 60)]
    pub fru_k: usize,
    /// FRU dimensions per frequency d
    #[arg(long, default_value_t = 10)]
    pub fru_d: usize,
    /// Lowest FRU frequency (cycles per sequence)
    #[arg(long, default_value_t = 0.25)]
    pub fmin: f64,
    /// Highest FRU frequency (cycles per sequence)
    #[arg(long, default_value_t = 25.0)]
    pub fmax: f64,
    /// FRU phases: zero or random
    #[arg(long, default_value = "zero")]
    pub phases: String,
    /// SRU decay rates, comma separated
    #[arg(long, default_value = "0,0.25,0.5,0.9,0.99")]
    pub alphas: String,
    /// Activation (tanh, relu, identity); default tanh for rnn, relu otherwise
    #[arg(long)]
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset file, or a directory with MNIST IDX files
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// MNIST framing: row28 or pixel784
    #[arg(long, default_value = "row28")]
    pub frame: String,
    /// Fixed pixel permutation seed for MNIST (permuted variant)
    #[arg(long)]
    pub perm_seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Initial Adam learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Per-epoch learning-rate multiplier
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    /// Number of passes over the training split
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Base seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss: mse, final-mse or xent; default follows the dataset
    #[arg(long)]
    pub loss: Option<String>,
    /// Use at most this many training sequences per epoch (0 = all)
    #[arg(long, default_value_t = 0)]
    pub max_train: usize,
    /// Search the learning-rate and decay grid, then train the best cell
    #[arg(long)]
    pub grid: bool,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    /// Cell: rnn, sru or fru
    #[arg(long, default_value = "fru")]
    pub arch: String,
    /// Number of random certification trials
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Horizon T, or a comma-separated list drawn from per trial
    #[arg(long, default_value = "32,128,784")]
    pub t: String,
    /// Split point T0; drawn per trial when absent
    #[arg(long)]
    pub t0: Option<usize>,
    /// Cap on the random recurrent spectral norm
    #[arg(long, default_value_t = 5.0)]
    pub sigma_cap: f64,
    /// Largest random hidden size
    #[arg(long, default_value_t = 8)]
    pub max_hidden: usize,
    /// Fixed recurrent matrix w_scale·I instead of random cells
    #[arg(long)]
    pub w_scale: Option<f64>,
    /// Hidden size of the fixed cell used with --w-scale
    #[arg(long, default_value_t = 4)]
    pub units: usize,
    /// SRU decay of the fixed cell used with --w-scale
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// FRU basis: cosine or square
    #[arg(long, default_value = "cosine")]
    pub basis: String,
    /// Base seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write certificates as JSON lines to this path
    #[arg(long, value_name = "FILE")]
    pub jsonl: Option<PathBuf>,
    /// Output certificate CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Regression dataset file
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Steps averaged per bucket
    #[arg(long, default_value_t = 20)]
    pub bucket: usize,
    /// Comma-separated epochs to probe at (0 = initialisation)
    #[arg(long, default_value = "0")]
    pub snapshots: String,
    /// Number of training sequences averaged over
    #[arg(long, default_value_t = 16)]
    pub sequences: usize,
    /// Initial Adam learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Per-epoch learning-rate multiplier
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    /// Mini-batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Base seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output probe CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TheoryArgs {
    /// Simpson intervals for the counterexample masses
    #[arg(long, default_value_t = 20_000)]
    pub quad_points: usize,
    /// Grid points for the Fourier-fit sup error
    #[arg(long, default_value_t = 10_001)]
    pub grid_points: usize,
    /// Fourier fits for half-degrees 0..=max-d
    #[arg(long, default_value_t = 2)]
    pub max_d: usize,
    /// Exponential-sum fits for k = 0..=exp-k terms
    #[arg(long, default_value_t = 3)]
    pub exp_k: usize,
    /// Random polynomials per half-degree
    #[arg(long, default_value_t = 20)]
    pub polys: usize,
    /// Random restarts per exponential-sum fit
    #[arg(long, default_value_t = 8)]
    pub exp_trials: usize,
    /// Base seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VariablesArgs {
    /// Hidden units n_h
    #[arg(long, default_value_t = 200)]
    pub units: usize,
    /// Input width per step
    #[arg(long, default_value_t = 1)]
    pub inputs: usize,
    /// Output width
    #[arg(long, default_value_t = 10)]
    pub outputs: usize,
    /// Inner width n_g of SRU/FRU
    #[arg(long, default_value_t = 60)]
    pub inner: usize,
    /// Number of SRU decay rates
    #[arg(long, default_value_t = 5)]
    pub sru_alphas: usize,
    /// FRU frequency counts to report, comma separated
    #[arg(long, default_value = "40,60")]
    pub fru_k: String,
    /// FRU dimensions per frequency d
    #[arg(long, default_value_t = 10)]
    pub fru_d: usize,
    /// Width of the extra dense output layer in the reference convention
    #[arg(long, default_value_t = 200)]
    pub head: usize,
    /// Also write the table as CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
