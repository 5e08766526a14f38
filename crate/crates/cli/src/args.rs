use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "preid", version, about = "Point-cloud object re-identification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene (detections, GT tracks and raw frame points).
    GenSynthetic(GenSyntheticArgs),
    /// Extract observations from a scene into a dataset directory.
    BuildDataset(BuildDatasetArgs),
    /// Build a balanced evaluation pair set for a dataset.
    MakeEvalSet(MakeEvalSetArgs),
    /// Train a matching model.
    Train(TrainArgs),
    /// Score an evaluation pair set and write report.json.
    Eval(EvalArgs),
    /// Accuracy against point-density thresholds, written as curve.csv.
    Curve(CurveArgs),
    /// Fit err = eps_inf + beta * x^c to (x, err) points.
    FitPowerlaw(FitPowerlawArgs),
    /// Time batched inference.
    Bench(BenchArgs),
    /// Print per-class dataset statistics.
    Inspect(InspectArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice made by the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run on a single worker thread.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Small two-class scene.
    Default,
    /// 550 objects over five classes with densities from about 4 to 128 points.
    Reference,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Base configuration before file and flag overrides.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Objects per class, e.g. "car=150,pedestrian=150".
    #[arg(long)]
    pub objects: Option<String>,
    /// Frames each object is observed in.
    #[arg(long)]
    pub frames_per_object: Option<usize>,
    /// Mean points per observation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Per-object density multiplier range [1/spread, spread].
    #[arg(long)]
    pub lambda_spread: Option<f64>,
    /// Multiplier on the per-class spread of object dimensions.
    #[arg(long)]
    pub shape_spread: Option<f64>,
    /// Expected clutter detections per frame.
    #[arg(long)]
    pub fp_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene directory written by gen-synthetic (or in the same layout).
    #[arg(long)]
    pub scene: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Detections must score strictly above this.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Minimum 3D IoU for a detection to match a GT box.
    #[arg(long)]
    pub iou_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MakeEvalSetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (manifest.jsonl and points.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; receives pairs.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Distinct positive pairs per object.
    #[arg(long)]
    pub max_positives: Option<usize>,
    /// Observations with fewer points are left out.
    #[arg(long)]
    pub min_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    PointnetLite,
    EdgeconvLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Even,
    Uniform,
}

/// Model shape overrides.
#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// Per-point encoder.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Channel width shared by the encoder output and the matching head.
    #[arg(long)]
    pub d: Option<usize>,
    /// Points per resampled observation.
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Number of cross-feature blocks.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Neighbourhood size of the edge encoder.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (manifest.jsonl and points.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for model.json, metrics.jsonl and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Training epochs; one epoch draws one pair per object.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate of the one-cycle schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Negative-pair sampler.
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Write checkpoint.prid every this many steps (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

/// Inputs shared by eval and curve.
#[derive(Debug, Clone, Args)]
pub struct ScoredInputs {
    /// Dataset directory (manifest.jsonl and points.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    /// pairs.jsonl written by make-eval-set.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint file (.prid).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model configuration; defaults to model.json next to the checkpoint.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Match probability at or above which a pair is called a match.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: ScoredInputs,
    /// Output directory; receives report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Both,
    One,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub inputs: ScoredInputs,
    /// Output directory; receives curve.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Whether both or at least one observation must reach the threshold.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated point-count thresholds.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Comma-separated classes to keep.
    #[arg(long)]
    pub classes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Linear,
    Log,
}

#[derive(Debug, Args)]
pub struct FitPowerlawArgs {
    #[command(flatten)]
    pub common: Common,
    /// Semicolon-separated "x,err" points, e.g. "14400,13.01;28800,11.95".
    #[arg(long)]
    pub points: String,
    /// Comma-separated asymptote candidates (default 0,1,...,8).
    #[arg(long)]
    pub grid: Option<String>,
    /// Residual space minimized by the fit.
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    /// Output directory for powerlaw.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to time; a freshly initialized model otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Model configuration; defaults to model.json next to the checkpoint.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Pairs per timed batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Timed trials after warmup.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Untimed warmup batches.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Output directory for bench.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (manifest.jsonl and points.bin).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Output directory for stats.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
