//! `yolo-tla`: cost analysis, anchor fitting, inference plumbing, evaluation
//! and self-checks for the bundled detector variants.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "yolo-tla", version, about = "Detector cost analysis, anchors, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer parameter and FLOP report for a config.
    Analyze(AnalyzeArgs),
    /// Fit k-means anchors to a COCO dataset and assign them to scales.
    Anchors(AnchorsArgs),
    /// Run a model on one image and emit COCO-style detections.
    Infer(InferArgs),
    /// Score a COCO results file against ground truth.
    Eval(EvalArgs),
    /// Run the randomised conv, cost and AP self-checks.
    OracleCheck(OracleArgs),
    /// List the bundled model variants.
    Configs(ConfigsArgs),
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Config file or bundled variant name.
    #[arg(long, required_unless_present = "closed_form")]
    pub config: Option<String>,
    /// Square input side in pixels.
    #[arg(long, default_value_t = 640)]
    pub input_size: usize,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Second config; print per-layer deltas (second minus first).
    #[arg(long)]
    pub diff: Option<String>,
    /// Also count MACs by executing the model (input at most 128x128).
    #[arg(long)]
    pub empirical: bool,
    /// Evaluate the closed-form single-layer formulas instead of a config.
    #[arg(long)]
    pub closed_form: bool,
    /// Closed-form: feature map side W.
    #[arg(long, default_value_t = 640)]
    pub fmap: u64,
    /// Closed-form: kernel size k.
    #[arg(long, default_value_t = 3)]
    pub kernel: u64,
    /// Closed-form: channel count C.
    #[arg(long, default_value_t = 3)]
    pub channels: u64,
    /// Closed-form: stride s.
    #[arg(long, default_value_t = 1)]
    pub stride: u64,
    /// Closed-form: padding p [default: k / 2].
    #[arg(long)]
    pub pad: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AnchorsArgs {
    /// COCO instances JSON.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Number of anchors (three per scale).
    #[arg(long, default_value_t = 12)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature-map sizes, comma separated [default: input-size / 4, 8, 16, 32, last k/3 of them].
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    /// Longer image side that box sizes are scaled to.
    #[arg(long, default_value_t = 640)]
    pub input_size: u32,
    /// Config file whose anchors are replaced by the fitted set.
    #[arg(long)]
    pub patch: Option<String>,
    /// Where to write the patched config [default: stdout].
    #[arg(long, requires = "patch")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Config file or bundled variant name.
    #[arg(long)]
    pub config: String,
    /// `.tlaw` weight file.
    #[arg(long, conflicts_with = "seed")]
    pub weights: Option<PathBuf>,
    /// Seed for random weights (used when no weight file is given).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PPM (P6) or .tns image.
    #[arg(long)]
    pub image: PathBuf,
    /// Confidence threshold.
    #[arg(long, default_value_t = 0.25)]
    pub conf: f32,
    /// NMS IOU threshold.
    #[arg(long, default_value_t = 0.45)]
    pub iou: f32,
    /// Square network input side.
    #[arg(long, default_value_t = 640)]
    pub input_size: usize,
    /// Plain resize instead of letterbox.
    #[arg(long)]
    pub stretch: bool,
    /// Image id written into the results.
    #[arg(long, default_value_t = 0)]
    pub image_id: u64,
    /// Write class indices as category ids instead of mapping 80 classes to COCO ids.
    #[arg(long)]
    pub raw_class_ids: bool,
    /// Results JSON path [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the model weights to this `.tlaw` file.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth COCO instances JSON.
    #[arg(long)]
    pub gt: PathBuf,
    /// COCO results JSON.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub json: bool,
    /// Write the sampled P-R curves as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// Randomised cases for the conv and AP suites.
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ConfigsArgs {
    #[arg(long)]
    pub json: bool,
}

/// Exit codes: 0 success, 1 usage or validation error, 2 self-check failure.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(outcome) => ExitCode::from(outcome as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
