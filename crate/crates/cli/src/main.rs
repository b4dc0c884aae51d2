//! `disentangle`: one binary for every workflow. Each command takes an
//! optional config file plus `--set key=value` overrides (overrides win),
//! and writes `resolved_config.toml` and `summary.json` into its output
//! directory. Exit codes: 0 success, 1 runtime error, 2 configuration error.

mod commands;
mod config;
mod jobs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use disentangle_service::CatalogSplit;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<disentangle_core::Error> for CliError {
    fn from(e: disentangle_core::Error) -> Self {
        if e.is_config() {
            match e {
                disentangle_core::Error::Config(m) => CliError::Config(m),
                other => CliError::Config(other.to_string()),
            }
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "disentangle", version, about = "Adversarially disentangled attribute codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML config file; omitted sections take their defaults.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one field, e.g. `--set schedule.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalFitArgs {
    #[arg(long, default_value_t = 99)]
    pub eval_seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub eval_steps: u64,
    #[arg(long, default_value_t = 0.99)]
    pub eval_target_accuracy: f64,
    #[arg(long, default_value_t = 32)]
    pub eval_batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eval_learning_rate: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Hopkins,
    Entropy,
    Transfer,
    Fid,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    DonorSwap,
    MeanCode,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a config and print it with every default filled in.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render the synthetic train and test sets as PNG manifests.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long, default_value = "data")]
        out: PathBuf,
    },
    /// Fit the training classifiers (saved as a step-0 checkpoint that
    /// `train --resume` continues) and the separate evaluation classifiers.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        eval: EvalFitArgs,
        /// Skip the evaluation classifiers.
        #[arg(long)]
        no_eval: bool,
        #[arg(short, long, default_value = "runs/pretrain")]
        out: PathBuf,
    },
    /// Train the full model into `<out>/checkpoint`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Generator steps; overrides `schedule.steps`.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from `<out>/checkpoint` (its stored config is used
        /// unless `--config` is given).
        #[arg(long)]
        resume: bool,
        #[arg(short, long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Compute a diagnostic and print it as a table.
    Eval(EvalArgs),
    /// Run the `[[transfer]]` entries of a job file.
    Transfer(JobArgs),
    /// Run the `[[mix]]` entries of a job file.
    Mix(JobArgs),
    /// Run the `[[interpolate]]` entries of a job file.
    Interpolate(JobArgs),
    /// Write the flattened codes of one encoder (and a 2-D PCA view) as TSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Attribute name, or `0` for the unlabelled code.
        #[arg(long)]
        code: String,
        /// Export the posteriors of this attribute's classifier on the code
        /// instead of the raw code.
        #[arg(long)]
        posterior_of: Option<String>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(short, long, default_value = "runs/embeddings")]
        out: PathBuf,
    },
    /// Serve the HTTP API over a checkpoint.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value = "test")]
        catalog_split: CatalogSplit,
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Embedding TSV (hopkins).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint directory (entropy, transfer, fid).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation classifier directory (transfer, fid).
    #[arg(long)]
    pub evaluator: Option<PathBuf>,
    /// Label that partitions the points (hopkins); defaults to the first.
    #[arg(long)]
    pub cluster_by: Option<String>,
    /// Label scored inside each cluster (hopkins); defaults to the second.
    #[arg(long)]
    pub score_within: Option<String>,
    /// `none`, `centroids` or `pca:K` (hopkins).
    #[arg(long, default_value = "none")]
    pub projection: String,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0.1)]
    pub probe_fraction: f64,
    /// Code whose posteriors are scored (entropy).
    #[arg(long)]
    pub code: Option<String>,
    /// Attribute whose classifier reads the code (entropy).
    #[arg(long)]
    pub target: Option<String>,
    /// Attribute being transferred (transfer, fid).
    #[arg(long)]
    pub attribute: Option<String>,
    #[arg(long, value_enum, default_value_t = Protocol::DonorSwap)]
    pub protocol: Protocol,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct JobArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// TOML job file; image paths inside are relative to it.
    #[arg(long)]
    pub job: PathBuf,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ValidateConfig { cfg } => commands::validate_config(&cfg),
        Command::SynthData { cfg, out } => commands::synth_data(&cfg, &out),
        Command::Pretrain { cfg, eval, no_eval, out } => commands::pretrain(&cfg, (!no_eval).then_some(&eval), &out),
        Command::Train { cfg, steps, resume, out } => commands::train(&cfg, steps, resume, &out),
        Command::Eval(args) => commands::eval(&args),
        Command::Transfer(args) => commands::job(jobs::JobKind::Transfer, &args),
        Command::Mix(args) => commands::job(jobs::JobKind::Mix, &args),
        Command::Interpolate(args) => commands::job(jobs::JobKind::Interpolate, &args),
        Command::ExportEmbeddings {
            checkpoint,
            code,
            posterior_of,
            split,
            out,
        } => commands::export_embeddings(&checkpoint, &code, posterior_of.as_deref(), split, &out),
        Command::Serve {
            checkpoint,
            port,
            host,
            catalog_split,
        } => commands::serve(checkpoint, (host, port).into(), catalog_split),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
