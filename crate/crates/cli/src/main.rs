mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lpcn::model::Mode;
use lpcn::Error;

#[derive(Parser, Debug)]
#[command(name = "lpcn", version, about = "Lossless-pooling convolutional super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Lpcn,
    LpcnPlus,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Lpcn => Mode::LpcnSr,
            ModeArg::LpcnPlus => Mode::LpcnSrPlus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bicubic,
    Model,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut HR images into aligned (label, input) training pairs.
    Prepare(PrepareArgs),
    /// Train a model on a patch archive.
    Train(TrainArgs),
    /// Upscale one PNG.
    Upscale(UpscaleArgs),
    /// Score an upscaler on a directory of HR PNGs.
    Evaluate(EvaluateArgs),
    /// Print a model file's structure.
    Inspect(InspectArgs),
}

#[derive(clap::Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Repeat for multi-scale pairs; the first value is recorded in the archive.
    #[arg(long, default_values_t = [4u32])]
    pub scale: Vec<u32>,
    #[arg(long, default_value_t = 96)]
    pub patch: usize,
    #[arg(long, default_value_t = 80)]
    pub stride: usize,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Patch archive written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Defaults to lpcn-plus for a fresh run, or the checkpoint's mode on resume.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Total step budget, counting steps taken before a resume.
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint stem to continue from (`<stem>.lpcn` + `<stem>.lpco`).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Zero disables periodic checkpoints.
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: u64,
    /// Checkpoint stem; defaults to the model path with `.ckpt` in place of its extension.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out-model>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(clap::Args, Debug)]
pub struct UpscaleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
}

#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Bicubic)]
    pub method: Method,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
    /// CSV report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// 2: bad input or artifact; 3: I/O or resource limit; 4: numerical divergence.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Resource(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Upscale(a) => commands::upscale(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence {
                last_checkpoint: Some(p),
                ..
            } = &e
            {
                eprintln!("last checkpoint: {}", p.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
