use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crownseg::advect::SegmentationSettings;
use crownseg::gate::DEFAULT_RHO;
use crownseg::pipeline::PipelineConfig;
use crownseg::raster::REFERENCE_DIAMETER;
use crownseg::synth::SceneSpec;

#[derive(Debug, Parser)]
#[command(
    name = "crownseg",
    version,
    about = "Tree crown instance segmentation by flow convergence"
)]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic crown scene.
    Synth(SynthArgs),
    /// Compute reference flows and probabilities from a label map.
    Flows(FlowsArgs),
    /// Segment a flow field and probability map in one pass.
    Segment(SegmentArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Segment a large raster tile by tile and stitch the result.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 20)]
    pub crowns: usize,
    #[arg(long, default_value_t = 8.0)]
    pub r_min: f64,
    #[arg(long, default_value_t = 16.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lobe_amplitude: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_occlusion: f64,
    /// Paint non-canopy texture patches onto the background.
    #[arg(long)]
    pub clutter: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            n_crowns: self.crowns,
            radius_range: (self.r_min, self.r_max),
            lobe_amplitude: self.lobe_amplitude,
            max_occlusion: self.max_occlusion,
            clutter: self.clutter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct FlowsArgs {
    /// 16-bit label PNG.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory for flows.npy and prob.npy.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// [2, H, W] float32 NPY, dy first.
    #[arg(long)]
    pub flows: PathBuf,
    /// [H, W] float32 NPY.
    #[arg(long)]
    pub prob: PathBuf,
    /// 8-bit canopy mask PNG; flows and probabilities are zeroed outside it.
    #[arg(long)]
    pub semantic: Option<PathBuf>,
    /// Output 16-bit label PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub inputs: SegmentArgs,
    #[arg(long, default_value_t = 1024)]
    pub tile: usize,
    #[arg(long, default_value_t = 128)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct Tuning {
    /// Expected crown diameter in pixels.
    #[arg(long, default_value_t = REFERENCE_DIAMETER)]
    pub diameter: f64,
    #[arg(long, default_value_t = 1.0)]
    pub flow_threshold: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub cellprob_threshold: f64,
    #[arg(long, default_value_t = 200)]
    pub niter: usize,
    #[arg(long, default_value_t = 15)]
    pub min_area: usize,
    /// Drop instances with less than --rho of their pixels on canopy (needs --semantic).
    #[arg(long)]
    pub canopy_filter: bool,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    /// Reject flow fields whose magnitude exceeds 1 instead of clipping them.
    #[arg(long)]
    pub strict: bool,
}

impl Tuning {
    pub fn config(&self, tile: usize, overlap: usize) -> PipelineConfig {
        PipelineConfig {
            settings: SegmentationSettings {
                niter: self.niter,
                flow_threshold: self.flow_threshold,
                cellprob_threshold: self.cellprob_threshold,
                min_area: self.min_area,
                ..Default::default()
            },
            diameter: self.diameter,
            rho: self.canopy_filter.then_some(self.rho),
            tile,
            overlap,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Probability NPY used to score predictions by mean probability.
    #[arg(long)]
    pub prob: Option<PathBuf>,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
