use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use stratdet_core::evaluation::{DEFAULT_IOBB_THRESHOLD, DEFAULT_MIN_SHORT_AXIS_MM};
use stratdet_core::merging::DEFAULT_IOU_THRESHOLD;
use stratdet_core::{GateMode, MergeMode};

#[derive(Debug, Parser)]
#[command(
    name = "stratdet",
    version,
    about = "Lymph node detection post-processing: box merging, gated scoring and FROC evaluation",
    args_override_self = true
)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stack per-slice 2D boxes into 3D boxes.
    Merge(MergeArgs),
    /// Match 3D detections to lesions and compute the FROC curve.
    Eval(EvalArgs),
    /// Score second-stage proposals with a gating strategy.
    Gate(GateArgs),
    /// Run the synthetic stratification study.
    Synth(SynthArgs),
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("`{}`: {e}", t.trim()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

/// Comma-separated list of gate modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeList(pub Vec<GateMode>);

impl FromStr for ModeList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut modes = Vec::new();
        for t in s.split(',') {
            let m: GateMode = t.parse().map_err(|e: stratdet_core::Error| e.to_string())?;
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
        Ok(ModeList(modes))
    }
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    /// Box2D records, grouped by patient.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// In-plane IoU a box must exceed to join a 3D box.
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    #[arg(long, default_value = "lesion-centric")]
    pub mode: MergeMode,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Box3D detections, grouped by patient.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth lesions.
    #[arg(long)]
    pub gt: PathBuf,
    /// FROC CSV output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOBB_THRESHOLD)]
    pub iobb: f64,
    /// Lesions with a shorter short axis are ignored.
    #[arg(long, default_value_t = DEFAULT_MIN_SHORT_AXIS_MM)]
    pub min_short_axis: f64,
    #[arg(long, default_value = "0.5,1,2,4")]
    pub fp_points: FloatList,
    /// Number of patients (scans) evaluated; defaults to the number of
    /// distinct patients in the two files.
    #[arg(long)]
    pub num_patients: Option<usize>,
    /// Also draw the curve as SVG.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Minimum short axes for a per-size table, e.g. `0,5,7,10`.
    #[arg(long)]
    pub size_bands: Option<FloatList>,
}

#[derive(Debug, Clone, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "soft")]
    pub mode: GateMode,
    /// Station-to-head map file, or a preset head count (1, 6 or 14).
    #[arg(long)]
    pub grouping: Option<String>,
    /// Print the detection and station losses.
    #[arg(long)]
    pub report_loss: bool,
    /// In soft mode, weight head probabilities instead of logits.
    #[arg(long)]
    pub prob_weighted: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub stations: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub patients: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "pooled,uniform,multiclass,hard,soft")]
    pub modes: ModeList,
    /// Probability that a proposal's gate leans toward a wrong station.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 3.5)]
    pub margin: f64,
    #[arg(long, default_value_t = 100)]
    pub per_station: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
}
