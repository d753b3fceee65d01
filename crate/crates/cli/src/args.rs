use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "stagegan", version, about = "Drive an image generator from a camera and hand gestures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the live loop with the control and stream service.
    Run(RunArgs),
    /// Replay a frame directory losslessly and write the outputs as PNG.
    Render(RenderArgs),
    /// Estimate per-layer feature statistics for standardization.
    Calibrate(CalibrateArgs),
    /// Print the extractor's layer table.
    ListLayers(ListLayersArgs),
    /// Measure loop throughput and latency with an unpaced synthetic source.
    Bench(BenchArgs),
    /// Write a synthetic frame sequence and keypoint log.
    Fixture(FixtureArgs),
}

/// Backend selection shared by every command.
#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// JSON file with `{extractor, generator, options}`.
    #[arg(long, value_name = "PATH")]
    pub backends: Option<PathBuf>,
    #[arg(long, value_name = "URI")]
    pub extractor: Option<String>,
    #[arg(long, value_name = "URI")]
    pub generator: Option<String>,
}

/// Pipeline settings: a JSON config file with flag overrides.
#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    #[command(flatten)]
    pub backends: BackendArgs,
    /// JSON file mirroring the pipeline configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// style-mix, const-corrupt or affine.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub psi: Option<f64>,
    /// Extractor layer, optionally weighted as NAME:ALPHA. Repeatable.
    #[arg(long = "layer", value_name = "NAME[:ALPHA]")]
    pub layers: Vec<String>,
    #[arg(long)]
    pub static_seed: Option<u64>,
    #[arg(long)]
    pub session_seed: Option<u64>,
    #[arg(long)]
    pub no_standardize: bool,
    /// Directory holding calibration_<layer>.json files to load.
    #[arg(long, value_name = "DIR")]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// synthetic[:FPS], dir:PATH or camera:INDEX.
    #[arg(long, default_value = "synthetic:30")]
    pub source: String,
    /// Keypoint log replayed alongside a dir: source.
    #[arg(long, value_name = "PATH")]
    pub keypoints: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub control: String,
    #[arg(long, default_value = "127.0.0.1:7071")]
    pub stream: String,
    /// Stream a source preview every N outputs; 0 disables previews.
    #[arg(long, default_value_t = 0)]
    pub preview_divisor: u32,
    /// Run without the network service.
    #[arg(long)]
    pub no_service: bool,
    /// Stop after this many seconds.
    #[arg(long, value_name = "SECS")]
    pub duration: Option<f64>,
    /// Write the session summary as JSON.
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// Directory of frame_%06d.png files.
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    /// JSONL keypoint log.
    #[arg(long, value_name = "PATH")]
    pub keypoints: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// Directory of frame_%06d.png files.
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub frames: Option<PathBuf>,
    /// Use this many frames of the synthetic scene instead of a directory.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ListLayersArgs {
    #[command(flatten)]
    pub backends: BackendArgs,
    /// Only layers with this many channels.
    #[arg(long)]
    pub z_dim: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[arg(long, default_value_t = 300)]
    pub frames: u64,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub count: u64,
    #[arg(long, default_value_t = 160)]
    pub width: u32,
    #[arg(long, default_value_t = 120)]
    pub height: u32,
}
