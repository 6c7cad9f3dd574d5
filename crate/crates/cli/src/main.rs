use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod run;

/// WiFi CSI to pose maps to video frames, on simulated or recorded data.
#[derive(Debug, Parser)]
#[command(name = "csi2video", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scene and write a dataset directory.
    Synth(SynthArgs),
    /// Clean, resample and pair CSI with frames; cache the network inputs.
    Preprocess(PreprocessArgs),
    /// Train the CSI-to-pose-map network on a preprocessed cache.
    TrainMapper(TrainMapperArgs),
    /// Train the pose-map-to-frame network on a dataset.
    TrainGenerator(TrainGeneratorArgs),
    /// Predict pose maps, keypoints and (optionally) frames.
    Infer(InferArgs),
    /// Score a prediction directory against a dataset.
    Eval(EvalArgs),
    /// Draw predicted skeletons as a PNG sequence.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Cache directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainMapperArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Cache written by `preprocess`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<u32>,
    /// Leading fraction of frames used for training; the rest is held out.
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
}

#[derive(Debug, Args)]
struct TrainGeneratorArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Use every N-th frame.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Frame id of the identity frame (default: first frame).
    #[arg(long, value_name = "ID")]
    identity_frame: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Cache written by `preprocess`.
    #[arg(long, value_name = "DIR")]
    cache: PathBuf,
    /// Model directory written by `train-mapper`.
    #[arg(long, value_name = "DIR")]
    mapper: PathBuf,
    /// Model directory written by `train-generator`; enables frame output.
    #[arg(long, value_name = "DIR", requires = "data")]
    generator: Option<PathBuf>,
    /// Dataset providing the identity frame and background.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Prediction directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "ID")]
    identity_frame: Option<u64>,
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
    /// Keep at most this many skeletons per frame (highest score first).
    #[arg(long, value_name = "N")]
    max_persons: Option<usize>,
    /// Per-channel background difference marking a generated pixel as foreground.
    #[arg(long, default_value_t = csi2video::metrics::DEFAULT_MASK_TOLERANCE)]
    mask_tolerance: f64,
    /// Recorded for the manifest; inference is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Convention {
    AtLeast,
    AtMost,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground-truth dataset directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Prediction directory written by `infer`.
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Report file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Convention::AtLeast)]
    iou_convention: Convention,
    #[arg(long, value_delimiter = ',', value_name = "A,B,..")]
    pck_alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_name = "A,B,..")]
    iou_alphas: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Prediction directory written by `infer`.
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Directory for the PNG sequence.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    limb_px: f64,
    #[arg(long, default_value_t = 4.0)]
    head_radius_px: f64,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", run::diagnostic(&e));
            ExitCode::from(run::exit_code(&e))
        }
    }
}
