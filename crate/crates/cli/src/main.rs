use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unmod_core::{Error, ErrorClass};

mod commands;
mod dataset;

#[derive(Debug, Parser)]
#[command(name = "unmod", version, about = "Modulo video folding, mask learning and reconstruction")]
struct Cli {
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fold an integer clip into modulo samples and fold counts.
    Fold(FoldArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a mask predictor on a synthetic dataset.
    Train(TrainArgs),
    /// Reconstruct modulo videos with a sliding window.
    Infer(InferArgs),
    /// Score reconstructions against ground truth.
    Eval(EvalArgs),
    /// Map a high-bit-depth clip to 8 bits.
    Tonemap(TonemapArgs),
    /// Dump token intricacy scores and the selected tokens for one window.
    Select(SelectArgs),
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Clip directory holding integer frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    bits_a: u32,
    /// Ground-truth depth; defaults to the clip's recorded depth.
    #[arg(long)]
    bits_b: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bits_a: Option<u32>,
    #[arg(long)]
    bits_b: Option<u32>,
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    over_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with model settings; flags override it.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    bits_a: Option<u32>,
    /// Keep the last N videos out of training and score them afterwards.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    /// Ground-truth fold counts (needs a `counts` clip).
    Oracle,
    /// Motion-propagated masks, seeded from the first window's counts when present.
    FlowOnly,
    /// Trained model checkpoint.
    Ssvit,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Dataset directory or single video directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictorKind::Ssvit)]
    predictor: PredictorKind,
    /// Checkpoint for the `ssvit` predictor.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    /// Preceding frames per window (4 unless the model says otherwise).
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    bits_a: Option<u32>,
    #[arg(long)]
    bits_b: Option<u32>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset or video directory with ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Output directory of `infer`.
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Border pixels left out of every metric.
    #[arg(long, default_value_t = unmod_core::imaging::DEFAULT_EXCLUDE)]
    exclude: usize,
}

#[derive(Debug, Args)]
struct TonemapArgs {
    /// Clip directory with integer or float frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Weight of the previous frame in the running brightness.
    #[arg(long, default_value_t = unmod_core::imaging::DEFAULT_SMOOTHING)]
    smoothing: f64,
    /// Tone map each frame on its own, without temporal smoothing.
    #[arg(long)]
    per_frame: bool,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Clip directory with integer frames (usually a `modulo` clip).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint whose encoder produces the features; otherwise a seeded
    /// untrained encoder is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 0.25)]
    fraction: f64,
    /// First frame of the window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 4)]
    clip_len: usize,
    #[arg(long)]
    bits_a: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numerical => 4,
    }
}

fn run(cli: Cli) -> unmod_core::Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::Validation("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Validation(format!("cannot start {threads} worker threads: {e}")))?;
    match cli.command {
        Command::Fold(a) => commands::fold(a, threads),
        Command::Synth(a) => commands::synth(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Infer(a) => commands::infer(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Tonemap(a) => commands::tonemap(a, threads),
        Command::Select(a) => commands::select(a, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
