//! `flowcast` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "flowcast",
    version,
    about = "Predict dense motion from a single image"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Model shape and optimizer settings shared by several subcommands.
///
/// Precedence: `--preset`, then the `--config` file, then explicit flags.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Architecture preset
    #[arg(long, default_value = "paper", value_parser = ["paper", "tiny"])]
    pub preset: String,
    /// key = value config file applied on top of the preset [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output grid as MxN or N [default: from preset/config]
    #[arg(long)]
    pub grid: Option<String>,
    /// Codebook size C [default: from codebook, else preset/config]
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic sprite dataset with exact flow
    Synth(SynthArgs),
    /// Build a k-means flow codebook from cell-mean flow vectors
    Codebook(CodebookArgs),
    /// Build a k-means codebook over whole coarse flow frames
    FrameCodebook(FrameCodebookArgs),
    /// Train the single-frame model
    Train(TrainArgs),
    /// Predict coarse flow for one image
    Predict(PredictArgs),
    /// Evaluate a predictor on a manifest
    Eval(EvalArgs),
    /// Evaluate the nearest-neighbor baseline
    NnEval(NnEvalArgs),
    /// Render a .flo file with the flow color wheel
    Viz(VizArgs),
    /// Train the multi-frame sequence head on frozen features
    TrainMulti(TrainMultiArgs),
    /// Predict a sequence of future coarse flow frames
    PredictMulti(PredictMultiArgs),
    /// Finite-difference gradient check of every layer and a whole network
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Scene family
    #[arg(long, default_value = "tone-cue", value_parser = ["tone-cue", "converging"])]
    pub kind: String,
    /// Number of scenes
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Square frame side in pixels
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Future flow fields averaged into one label
    #[arg(long, default_value_t = 1)]
    pub label_frames: usize,
    /// Steps written to the sequence manifest (0 = none)
    #[arg(long, default_value_t = 0)]
    pub steps: usize,
    /// Consecutive frames per scene written as training records
    #[arg(long, default_value_t = 1)]
    pub frames_per_scene: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CodebookArgs {
    /// Training manifest
    #[arg(long, default_value = "manifest.txt")]
    pub manifest: PathBuf,
    /// Output codebook text file
    #[arg(long, default_value = "codebook.txt")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum k-means iterations
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Vectors kept for clustering (uniform subsample above this)
    #[arg(long, default_value_t = 1_000_000)]
    pub max_samples: usize,
}

#[derive(Args, Debug)]
pub struct FrameCodebookArgs {
    /// Sequence manifest (image, then one flow per step)
    #[arg(long, default_value = "sequences.txt")]
    pub manifest: PathBuf,
    /// Output frame codebook text file
    #[arg(long, default_value = "frames.txt")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of frame centroids K
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum k-means iterations
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest
    #[arg(long, default_value = "manifest.txt")]
    pub manifest: PathBuf,
    /// Flow codebook
    #[arg(long, default_value = "codebook.txt")]
    pub codebook: PathBuf,
    /// Output directory for model.ckpt, model.cfg and loss.csv
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random seed [default: from preset/config (0)]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Final iteration count [default: from preset/config]
    #[arg(long)]
    pub iters: Option<u64>,
    /// Random crops [default: from preset/config]
    #[arg(long, value_parser = ["on", "off"])]
    pub augment: Option<String>,
    /// Mirror half of the augmented crops [default: from preset/config]
    #[arg(long, value_parser = ["on", "off"])]
    pub flip: Option<String>,
    /// Worker threads per minibatch (1 is bit-reproducible)
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Loss log interval in iterations
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
    /// Snapshot interval in iterations (0 = final checkpoint only)
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: u64,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Input image (PPM or PGM)
    #[arg(long, default_value = "input.ppm")]
    pub input: PathBuf,
    /// Model checkpoint
    #[arg(long, default_value = "run/model.ckpt")]
    pub checkpoint: PathBuf,
    /// Flow codebook
    #[arg(long, default_value = "codebook.txt")]
    pub codebook: PathBuf,
    /// Output directory
    #[arg(long, default_value = "pred")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Evaluation manifest
    #[arg(long, default_value = "test.txt")]
    pub manifest: PathBuf,
    /// Flow codebook
    #[arg(long, default_value = "codebook.txt")]
    pub codebook: PathBuf,
    /// Model checkpoint (model and nn predictors)
    #[arg(long, default_value = "run/model.ckpt")]
    pub checkpoint: PathBuf,
    /// Predictor
    #[arg(long, default_value = "model", value_parser = ["model", "nn", "oracle", "uniform"])]
    pub predictor: String,
    /// Comma-separated N values for Top-N rows
    #[arg(long, default_value = "5,10")]
    pub topn: String,
    /// Output directory for report.csv, report.txt, per_image.csv
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Retrieval set for the nn predictor
    #[arg(long, default_value = "manifest.txt")]
    pub train_manifest: PathBuf,
    /// nn features
    #[arg(long, default_value = "raw", value_parser = ["raw", "penultimate"])]
    pub features: String,
    /// Evaluation worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Random seed (unused by deterministic predictors, kept for scripts)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct NnEvalArgs {
    /// Evaluation manifest
    #[arg(long, default_value = "test.txt")]
    pub manifest: PathBuf,
    /// Retrieval set
    #[arg(long, default_value = "manifest.txt")]
    pub train_manifest: PathBuf,
    /// Flow codebook
    #[arg(long, default_value = "codebook.txt")]
    pub codebook: PathBuf,
    /// Features; penultimate needs --checkpoint
    #[arg(long, default_value = "raw", value_parser = ["raw", "penultimate"])]
    pub features: String,
    /// Model checkpoint for penultimate features
    #[arg(long, default_value = "run/model.ckpt")]
    pub checkpoint: PathBuf,
    /// Comma-separated N values for Top-N rows
    #[arg(long, default_value = "5,10")]
    pub topn: String,
    /// Output directory
    #[arg(long, default_value = "eval-nn")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Evaluation worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    /// Input .flo file
    #[arg(long, default_value = "flow.flo")]
    pub input: PathBuf,
    /// Output PPM
    #[arg(long, default_value = "flow.ppm")]
    pub out: PathBuf,
    /// Magnitude mapped to full saturation (0 = field maximum)
    #[arg(long, default_value_t = 0.0)]
    pub max_flow: f64,
}

#[derive(Args, Debug)]
pub struct TrainMultiArgs {
    /// Sequence manifest
    #[arg(long, default_value = "sequences.txt")]
    pub manifest: PathBuf,
    /// Frozen single-frame checkpoint
    #[arg(long, default_value = "run/model.ckpt")]
    pub checkpoint: PathBuf,
    /// Frame codebook
    #[arg(long, default_value = "frames.txt")]
    pub codebook: PathBuf,
    /// Output directory for multiframe.ckpt and multi_loss.csv
    #[arg(long, default_value = "run-multi")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Future steps T
    #[arg(long, default_value_t = 6)]
    pub steps: usize,
    /// Hidden width H
    #[arg(long, default_value_t = 2000)]
    pub hidden: usize,
    /// Iterations
    #[arg(long, default_value_t = 10_000)]
    pub iters: u64,
    /// Base learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Iterations between learning-rate drops
    #[arg(long, default_value_t = 50_000)]
    pub stepsize: u64,
    /// Minibatch size
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss log interval in iterations
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Args, Debug)]
pub struct PredictMultiArgs {
    /// Input image
    #[arg(long, default_value = "input.ppm")]
    pub input: PathBuf,
    /// Frozen single-frame checkpoint
    #[arg(long, default_value = "run/model.ckpt")]
    pub checkpoint: PathBuf,
    /// Multi-frame checkpoint
    #[arg(long, default_value = "run-multi/multiframe.ckpt")]
    pub multi_checkpoint: PathBuf,
    /// Frame codebook
    #[arg(long, default_value = "frames.txt")]
    pub codebook: PathBuf,
    /// Output directory
    #[arg(long, default_value = "pred-multi")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Network preset for the end-to-end check
    #[arg(long, default_value = "tiny", value_parser = ["paper", "tiny"])]
    pub preset: String,
    /// Parameter coordinates sampled end to end
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Codebook(a) => commands::codebook(a),
        Command::FrameCodebook(a) => commands::frame_codebook(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::NnEval(a) => commands::nn_eval(a),
        Command::Viz(a) => commands::viz(a),
        Command::TrainMulti(a) => commands::train_multi(a),
        Command::PredictMulti(a) => commands::predict_multi(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowcast: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
