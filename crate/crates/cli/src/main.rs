//! `truce`: data generation, training, captioning and evaluation from the shell.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! command fails at run time (including divergent training).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags, bad config, or a refused overwrite.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Run finished and wrote its outputs, but must still report failure.
#[derive(Debug)]
pub struct RuntimeFailure(pub String);

impl fmt::Display for RuntimeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RuntimeFailure {}

#[derive(Parser, Debug)]
#[command(name = "truce", version, about = "Captioning time series with learned truth programs")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    SynthGen(SynthGenArgs),
    /// Sample normalised windows from price files.
    Ingest(IngestArgs),
    /// Convert released corpus files into the dataset format.
    Convert(ConvertArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Caption a dataset split with a checkpoint.
    Caption(CaptionArgs),
    /// Run an evaluation suite.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    /// 6: all classes; 4: the seen compositions; 2: the held-out compositions.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory of `<company>_<daily|weekly>.csv` price files.
    #[arg(long)]
    pub csv_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Released corpus files; repeat for several.
    #[arg(long, required = true, num_args = 1..)]
    pub released: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Truce,
    /// The full model with the series encoding also fed to the decoder.
    TruceD,
    Fc,
    Lstm,
    Conv,
    Fft,
    Nearnbr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// No inference network; optimise the marginal likelihood.
    Noinf,
    /// No keyword auxiliary loss.
    Noheur,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "truce")]
    pub model: ModelChoice,
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log; defaults to the checkpoint path with `.metrics.jsonl` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Prior temperature; repeat to sweep.
    #[arg(long)]
    pub lambda: Vec<f32>,
    #[arg(long)]
    pub w_aux: Option<f32>,
    /// Classification weight for baselines; repeat to sweep.
    #[arg(long)]
    pub w_cls: Vec<f32>,
    /// Baseline encoder width; solved for parameter parity when absent.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_parser = parse_lexicon)]
    pub lexicon: Option<truce::lexicon::LexiconKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Sample,
}

#[derive(Args, Debug)]
pub struct CaptionArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: truce::data::Split,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1.0)]
    pub top_p: f32,
    /// Samples per instance in sample mode.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Metrics,
    Correctness,
    Coverage,
    Transfer,
    Composition,
    Analyze,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint; the coverage suite accepts several.
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    /// Dataset; the transfer suite generates its own when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: truce::data::Split,
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG plot for the coverage suite.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub l: Option<usize>,
    /// Nucleus masses to sweep; repeat for several.
    #[arg(long)]
    pub top_p: Vec<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Word attribution for the analyze suite.
    #[arg(long, value_parser = parse_source)]
    pub source: Option<truce::eval::WordSource>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_lexicon(s: &str) -> Result<truce::lexicon::LexiconKind, String> {
    s.parse().map_err(|e: truce::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<truce::data::Split, String> {
    s.parse().map_err(|e: truce::Error| e.to_string())
}

fn parse_source(s: &str) -> Result<truce::eval::WordSource, String> {
    s.parse().map_err(|e: truce::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
