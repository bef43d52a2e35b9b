mod commands;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

/// MKDCNet binary polyp segmentation.
///
/// Set MKDC_THREADS to fix the worker thread count (default: all cores).
/// Failures print one JSON line `{"error": <kind>, "message": ...}` on
/// stderr and exit nonzero.
#[derive(Debug, Parser)]
#[command(name = "mkdcnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic polyp corpus (images/, masks/, split.txt).
    Synth(SynthArgs),
    /// Train a model; the run directory is named after the config hash and seed.
    Train(TrainArgs),
    /// Score a checkpoint on one split and write CSV, JSON and SVG reports.
    Eval(EvalArgs),
    /// Segment one image.
    Infer(InferArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time batch-1 inference.
    Bench(BenchArgs),
    /// Train and score the four MKDC/MSFF ablation variants.
    Ablate(AblateArgs),
    /// Print the effective run configuration as JSON.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Image side length in pixels (multiple of 16).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Generator and split seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Train,valid,test fractions for split.txt.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory [default: config data_dir].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parent of the run directories [default: config out_dir, else "runs"].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the run, model-init and augmentation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Continue from last.ckpt in the run directory.
    #[arg(long, default_value_t = false)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// train, valid, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Split manifest [default: split.txt beside the checkpoint, else in the corpus].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Per-image CSV report; JSON and SVG are written beside it.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Input side length [default: image_size of config.json beside the checkpoint, else native].
    #[arg(long)]
    pub size: Option<usize>,
    /// Binarization threshold.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input P6 image.
    #[arg(long)]
    pub image: PathBuf,
    /// Output P5 binary mask at the input resolution.
    #[arg(long)]
    pub out_mask: PathBuf,
    /// Optional P5 probability map at the input resolution.
    #[arg(long)]
    pub out_prob: Option<PathBuf>,
    /// Input side length [default: image_size of config.json beside the checkpoint, else native rounded up to 16].
    #[arg(long)]
    pub size: Option<usize>,
    /// Binarization threshold.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write input, encoder features and output as tensor dumps into this directory.
    #[arg(long)]
    pub dump_activations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Case or group name (ops, blocks, model) [default: all].
    #[arg(long)]
    pub module: Option<String>,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = 16)]
    pub coords: usize,
    /// Coordinate sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint file [default: freshly initialized default model].
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input side length.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Timed forward passes.
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Untimed forward passes before timing.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Synthetic corpus size when no corpus is given.
    #[arg(long, default_value_t = 200)]
    pub synth_n: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the run, model-init and augmentation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("MKDC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::new("config", format!("MKDC_THREADS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new("config", e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Config(a) => commands::config(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let err = CliError::new("usage", first);
            eprintln!("{}", err.to_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
