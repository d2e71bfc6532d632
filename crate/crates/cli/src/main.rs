//! `telemetry-gpt`: synthesize or ingest telemetry, build prompt datasets,
//! train and evaluate the model, and run the classical baselines.
//!
//! Every command writes its fully resolved configuration to
//! `run_config.json` and a `manifest.json` with output digests into its
//! output directory.

mod config;
mod data;
mod evaluate;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use telemetry_gpt::gptcore::{LossRegion, Proj};
use telemetry_gpt::telemetry::{FeatureMask, ProfileName};

#[derive(Parser)]
#[command(name = "telemetry-gpt", version, about = "Token-based WiFi telemetry localization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Global {
    /// JSON file merged over the defaults; flags still win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed [default: $TELEMETRY_GPT_SEED, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Evaluation workers [default: 1].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from an environment profile.
    Synth(SynthArgs),
    /// Split a dataset and render train/val/test JSONL.
    Prepare(PrepareArgs),
    /// Train (or fine-tune, or resume) a model on a JSONL file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Evaluate a checkpoint under FTM/RSSI feature masks.
    Ablate(AblateArgs),
    /// Fit and evaluate a classical baseline.
    Baseline(BaselineArgs),
    /// Combine evaluation reports into tables and one CDF plot.
    Report(ReportArgs),
    /// Print the tokenizer vocabulary.
    DumpVocab(DumpVocabArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// corridor, theatre, office, hallway or custom.
    #[arg(long)]
    pub profile: Option<ProfileName>,
    /// Reference points (hallway: number of separations).
    #[arg(long)]
    pub rps: Option<usize>,
    #[arg(long)]
    pub per_rp: Option<usize>,
    #[arg(long)]
    pub n_aps: Option<usize>,
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long)]
    pub pathloss_exponent: Option<f64>,
    #[arg(long)]
    pub rssi_ref: Option<f64>,
    #[arg(long)]
    pub rssi_noise: Option<f64>,
    #[arg(long)]
    pub rtt_offset: Option<f64>,
    #[arg(long)]
    pub rtt_noise: Option<f64>,
    #[arg(long)]
    pub nlos_bias: Option<f64>,
    #[arg(long)]
    pub csi_noise: Option<f64>,
}

#[derive(Args)]
pub struct PrepareArgs {
    /// CSV, JSONL, CSI text file, or a directory of csi_<label>m.txt files.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Per-line labels for a CSI text file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_parser = parse_ratios)]
    pub ratios: Option<[f64; 3]>,
    #[arg(long)]
    pub stratify: Option<bool>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training JSONL.
    #[arg(long = "train")]
    pub train_data: Option<PathBuf>,
    /// Validation data for the monitor (any format `prepare` reads).
    #[arg(long = "val")]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Total optimizer steps.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    /// ANSWER_ONLY or FULL_SEQUENCE.
    #[arg(long)]
    pub loss_region: Option<LossRegion>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Train a LoRA adapter instead of the full weights.
    #[arg(long)]
    pub lora: bool,
    #[arg(long, requires = "lora")]
    pub rank: Option<usize>,
    #[arg(long, requires = "lora")]
    pub alpha: Option<f64>,
    /// Adapted projections, e.g. `wq,wv`.
    #[arg(long, requires = "lora", value_delimiter = ',')]
    pub targets: Option<Vec<Proj>>,
    /// Start from these weights (optimizer state is dropped).
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue this checkpoint, optimizer state included, up to --iters.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Validation samples evaluated at each monitor step.
    #[arg(long)]
    pub val_cap: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report tag [default: derived from the model size].
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Masks to evaluate [default: BOTH,FTM_ONLY,RSSI_ONLY].
    #[arg(long, value_delimiter = ',')]
    pub masks: Option<Vec<FeatureMask>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    /// k-nearest neighbours on z-scored features.
    Knn,
    /// Log-distance path-loss inversion of one AP's RSSI.
    Pathloss,
    /// Affine calibration of one AP's FTM round-trip time.
    Ftm,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub method: Option<BaselineMethod>,
    #[arg(long = "train")]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// AP whose reading the path-loss and FTM fits use.
    #[arg(long)]
    pub ap: Option<u32>,
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// report.json files to combine.
    #[arg(long = "input", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Args)]
pub struct DumpVocabArgs {
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three ratios, got {}", p.len()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => pipeline::synth(g, a),
        Command::Prepare(a) => pipeline::prepare(g, a),
        Command::Train(a) => pipeline::train(g, a),
        Command::Eval(a) => evaluate::eval(g, a),
        Command::Ablate(a) => evaluate::ablate(g, a),
        Command::Baseline(a) => evaluate::baseline(g, a),
        Command::Report(a) => evaluate::report(g, a),
        Command::DumpVocab(a) => evaluate::dump_vocab(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
