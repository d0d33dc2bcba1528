//! The `mast` command line: corpus generation, training, decoding,
//! evaluation and attention export.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mast_core::model::Variant;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "mast", version, about = "Multimodal abstractive summarization with trimodal hierarchical attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/val/test corpus.
    GenSynthetic(GenArgs),
    /// Train a model and write checkpoint, vocabulary, log and manifest.
    Train(TrainArgs),
    /// Decode a split with a trained model, one summary per line.
    Summarize(SummarizeArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Decode examples and write their attention weights as CSV.
    ExportAttention(ExportArgs),
}

/// Settings shared by the model commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// `key=value` config file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Set every model width at once.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Split used for validation during training.
    #[arg(long)]
    pub val_split: Option<String>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: mast_core::Error| e.to_string())
}

impl ConfigFlags {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(d) = self.dim {
            cfg.dims = mast_core::model::Dims::uniform(d);
        }
        self.seed.inspect(|&v| t.seed = v);
        self.epochs.inspect(|&v| t.epochs = v);
        self.lr.inspect(|&v| t.learning_rate = v);
        self.patience.inspect(|&v| t.patience = v);
        self.batch_size.inspect(|&v| t.batch_size = v);
        self.beam.inspect(|&v| t.beam = v);
        self.dropout.inspect(|&v| t.dropout_p = v);
        self.max_len.inspect(|&v| cfg.max_len = v);
        if let Some(s) = &self.val_split {
            cfg.val_split = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training examples.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Validation examples (default: n/8, at least 1).
    #[arg(long)]
    pub val_n: Option<usize>,
    /// Test examples (default: n/8, at least 1).
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distinct content words.
    #[arg(long, default_value_t = 24)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Topic words per example.
    #[arg(long, default_value_t = 3)]
    pub words: usize,
    /// Noise standard deviation on audio and video features.
    #[arg(long, default_value_t = 0.1)]
    pub feature_noise: f64,
    /// Standard deviation of the per-topic video prototypes.
    #[arg(long, default_value_t = 1.0)]
    pub prototype_scale: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Greedy decoding instead of beam search.
    #[arg(long)]
    pub greedy: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, one per line; defaults to `<data>/<split>.summary`.
    #[arg(long)]
    pub r#ref: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Example to export.
    #[arg(long, default_value_t = 0, conflicts_with = "all")]
    pub index: usize,
    /// Export every example of the split.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub greedy: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Evaluate(a) => commands::evaluate(&a).map(|_| ()),
        Command::ExportAttention(a) => commands::export_attention(&a),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code: 0 success, 1 runtime or data error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
        Ok(cli) => match execute(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}
