use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ctdiff", version, about = "Conditional diffusion toolkit for FDCT to MDCT translation")]
pub struct Cli {
    /// Base seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with optional `denoiser`, `training`, `recipe` and `metrics` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Compute backend; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a paired phantom dataset with simulated FDCT artifacts.
    Simulate(SimulateArgs),
    /// Window, drop empty slices and resize a co-registered FDCT/MDCT pair.
    Preprocess(PreprocessArgs),
    /// Train a denoiser on a simulated or preprocessed dataset.
    Train(TrainArgs),
    /// Translate FDCT volumes into predicted MDCT-like volumes.
    Translate(TranslateArgs),
    /// Compare predictions against targets in HU.
    Evaluate(EvaluateArgs),
    /// Reader-study service.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of cases.
    #[arg(long)]
    pub n: usize,
    /// Slice side in pixels.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Cases held out for testing (taken from the end).
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub fdct: PathBuf,
    #[arg(long)]
    pub mdct: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub side: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Toy,
    Paper,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory from `simulate` or `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["input", "input_root"]))]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single FDCT volume directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// A directory of FDCT volume directories.
    #[arg(long)]
    pub input_root: Option<PathBuf>,
    /// Slices sampled together.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, conflicts_with_all = ["pred_root", "target_root"], requires = "target")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub target: Option<PathBuf>,
    #[arg(long, requires = "target_root")]
    pub pred_root: Option<PathBuf>,
    #[arg(long, requires = "pred_root")]
    pub target_root: Option<PathBuf>,
    /// Lesion masks named like the targets; enables lesion preservation.
    #[arg(long)]
    pub mask_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Serve the blinded reader study over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "STUDY_DATA_ROOT")]
    pub data_root: PathBuf,
    #[arg(long)]
    pub study_config: PathBuf,
    /// Ratings log; defaults to `ratings.jsonl` under the data root.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
