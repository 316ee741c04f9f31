use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vein_origin::dataset::SampleKind;
use vein_origin::evaluate::Aggregation;
use vein_origin::model::ArchName;
use vein_origin::preprocess::PATCH_SIZE;
use vein_origin::SensorClass;

pub const DATA_ROOT_ENV: &str = "VEIN_ORIGIN_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "vein-origin", version, about = "Finger-vein sensor-origin identification pipeline")]
pub struct Cli {
    /// Serial, seeded execution (single worker thread).
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled corpus with per-sensor noise signatures.
    Synth(SynthArgs),
    /// Scan a directory of images for one sensor into a manifest.
    Ingest(IngestArgs),
    /// Per-sensor luminance and variance quartiles.
    Stats(StatsArgs),
    /// CLAHE, optional ROI crop and resize; writes images and a new manifest.
    Preprocess(PreprocessArgs),
    /// Seeded 70/10/20 sample-level split.
    Split(SplitArgs),
    /// Parameter complexity table.
    Params(ParamsArgs),
    /// Train a network on the train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Print the summary of saved evaluation reports.
    Report(ReportArgs),
    /// synth -> preprocess -> split -> train -> eval in one run directory.
    Pipeline(PipelineArgs),
}

fn parse_pair(s: &str, what: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected {what} like 96x96, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad number `{a}` in `{s}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad number `{b}` in `{s}`"))?;
    if a == 0 || b == 0 {
        return Err(format!("{what} `{s}` must be positive"));
    }
    Ok((a, b))
}

/// `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, "WxH")
}

/// `ROWSxCOLS`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, "ROWSxCOLS")
}

fn parse_arch(s: &str) -> Result<ArchName, String> {
    s.parse().map_err(|e: vein_origin::Error| e.to_string())
}

fn parse_sensor(s: &str) -> Result<SensorClass, String> {
    s.parse().map_err(|e: vein_origin::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<SampleKind, String> {
    s.parse().map_err(|e: vein_origin::Error| e.to_string())
}

fn parse_agg(s: &str) -> Result<Aggregation, String> {
    s.parse().map_err(|e: vein_origin::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images per sensor class.
    #[arg(long, default_value_t = 120)]
    pub per_class: usize,
    /// Image size as WxH.
    #[arg(long, value_parser = parse_size, default_value = "192x96")]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; the manifest is written to OUT/manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory to scan recursively.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub root: PathBuf,
    #[arg(long, value_parser = parse_sensor)]
    pub sensor: SensorClass,
    /// raw or roi.
    #[arg(long, value_parser = parse_kind, default_value = "raw")]
    pub kind: SampleKind,
    /// Existing manifests to merge with the scanned one.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessOpts {
    /// Apply CLAHE (the default).
    #[arg(long, overrides_with = "no_clahe")]
    pub clahe: bool,
    /// Skip CLAHE.
    #[arg(long)]
    pub no_clahe: bool,
    #[arg(long, default_value_t = 2.0)]
    pub clahe_clip: f64,
    /// CLAHE tile grid as ROWSxCOLS.
    #[arg(long, value_parser = parse_grid, default_value = "8x8")]
    pub tile_grid: (usize, usize),
    /// Crop to the finger region before further steps.
    #[arg(long)]
    pub roi: bool,
    /// Resize after cropping, as WxH.
    #[arg(long, value_parser = parse_size)]
    pub resize: Option<(usize, usize)>,
    /// Square patch side.
    #[arg(long, default_value_t = PATCH_SIZE)]
    pub patch: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub opts: PreprocessOpts,
    /// Directory for processed images and OUT/manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, value_parser = parse_arch, required_unless_present = "all", conflicts_with = "all")]
    pub arch: Option<ArchName>,
    /// Every architecture.
    #[arg(long)]
    pub all: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// Config file of key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    pub arch: ArchName,
    /// Preprocessed manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value_t = PATCH_SIZE)]
    pub patch: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Directory for the checkpoint and history.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    /// Preprocessed manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// patch or sample.
    #[arg(long, value_parser = parse_agg, default_value = "patch")]
    pub agg: Aggregation,
    #[arg(long, value_enum, default_value = "test")]
    pub part: Part,
    #[arg(long, default_value_t = PATCH_SIZE)]
    pub patch: usize,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report (.json or .csv).
    #[arg(long)]
    pub input: PathBuf,
    /// Per-sensor report (.json or .csv).
    #[arg(long)]
    pub per_sensor: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 120)]
    pub per_class: usize,
    #[arg(long, value_parser = parse_size, default_value = "192x96")]
    pub size: (usize, usize),
    #[arg(long, value_parser = parse_arch, default_value = "fv2021")]
    pub arch: ArchName,
    #[arg(long, value_parser = parse_agg, default_value = "patch")]
    pub agg: Aggregation,
    #[command(flatten)]
    pub preprocess: PreprocessOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run directory name; defaults to a timestamp.
    #[arg(long)]
    pub name: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        assert_eq!(parse_size("192x96"), Ok((192, 96)));
        assert_eq!(parse_grid("4X8"), Ok((4, 8)));
        assert!(parse_size("96").is_err());
        assert!(parse_size("0x96").is_err());
        assert!(parse_grid("ax8").is_err());
    }

    #[test]
    fn command_tree_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
