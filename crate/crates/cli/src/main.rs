//! `hmic`: encode, decode, train and evaluate the layered codec.

mod commands;
mod corpus;
mod output;
mod plot;
mod tasks_json;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmic::container::DecodeLevel;
use hmic::tensor::norm::NormKind;

#[derive(Debug, Parser)]
#[command(name = "hmic", version, about = "Layered image codec for machine tasks and human viewing")]
pub struct Cli {
    /// Worker threads for per-image work (0 = one per core).
    #[arg(long, global = true, env = "HMIC_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress an image (and its annotations) into a layered container.
    Encode(EncodeArgs),
    /// Decode a container up to a level.
    Decode(DecodeArgs),
    /// Print the per-stream size breakdown of a container.
    Stats(StatsArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Rate–distortion sweep over a corpus: CSV and SVG.
    Eval(EvalArgs),
    /// Write a synthetic corpus (images, annotations, dictionary).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Polygon annotations (JSON lines); needed when the model uses the profile.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Category dictionary (TSV); defaults to the built-in one.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 27, value_parser = clap::value_parser!(u8).range(0..=51))]
    pub qp: u8,
    /// Leave out stream3; the container then decodes to the general level.
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Level {
    Tasks,
    General,
    High,
}

impl From<Level> for DecodeLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Tasks => DecodeLevel::Tasks,
            Level::General => DecodeLevel::General,
            Level::High => DecodeLevel::High,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub level: Level,
    /// Required above the tasks level.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Names for the task JSON; defaults to the built-in dictionary.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Receives tasks.json, general.ppm and high.ppm, as decoded.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Norm {
    Channel,
    Batch,
    Instance,
}

impl From<Norm> for NormKind {
    fn from(n: Norm) -> Self {
        match n {
            Norm::Channel => NormKind::Channel,
            Norm::Batch => NormKind::Batch,
            Norm::Instance => NormKind::Instance,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    /// Width-divided networks for 64×64 CPU experiments.
    Desk,
    /// The full-width networks.
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-step loss trace.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Norm::Channel)]
    pub norm: Norm,
    /// Train without the profile channel (ablation).
    #[arg(long)]
    pub no_profile: bool,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Seeds both initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = hmic::metrics::rd::DEFAULT_QPS,
          value_parser = clap::value_parser!(u8).range(0..=51))]
    pub qps: Vec<u8>,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("hmic: error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hmic: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
