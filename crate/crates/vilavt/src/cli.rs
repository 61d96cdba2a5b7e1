use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Query-conditioned vision encoding and crop/re-encode episodes.
///
/// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
/// error, 3 file input/output or format error.
#[derive(Debug, Parser)]
#[command(name = "vilavt", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode images and dump per-image features, optionally with heatmaps.
    Encode(EncodeArgs),
    /// Run one episode on a task file and print its reward.
    Episode(EpisodeArgs),
    /// Train the toy policy with SFT or GRPO.
    Train(TrainArgs),
    /// Generate synthetic quadrant tasks and a zoom-then-answer SFT corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Input image (PPM or PGM); repeat for a multi-image call.
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    /// Text the encoding is conditioned on.
    #[arg(long, default_value = "")]
    pub inquiry: String,
    /// Also write heatmap_<i>.pgm and heatmap_<i>.bin per image.
    #[arg(long)]
    pub heatmaps: bool,
    /// Output directory; defaults to paths.output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Task sidecar JSON as written by `synth`.
    #[arg(long)]
    pub task: PathBuf,
    /// `scripted:<steps.json>` or `checkpoint:<weights.bin>`.
    #[arg(long)]
    pub policy: String,
    /// Sampling seed; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace output (JSON lines); defaults to <output_dir>/trace.jsonl.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sft,
    Grpo,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Checkpoint to continue from; its step counter is kept.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Number of task bundles, at least 1.
    #[arg(long)]
    pub count: usize,
    /// Generator seed; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to paths.output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
