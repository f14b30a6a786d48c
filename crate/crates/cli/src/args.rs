use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ispsearch", version, about = "Differentiable ISP pipelines and learned pipeline search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a pipeline config to one image.
    Run(RunArgs),
    /// Train a policy on a directory of images.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Exhaustive search over a small module pool.
    Search(SearchArgs),
    /// Finite-difference checks of every module gradient and the proxy scorer.
    Gradcheck(GradcheckArgs),
    /// Evaluate one checkpoint per cost weight and tabulate cost against error.
    Tradeoff(TradeoffArgs),
    /// Generate a degraded synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// External scorer command; the proxy scorer is used when absent.
    #[arg(long)]
    pub scorer: Option<String>,
    /// Seconds before an external scorer call is killed.
    #[arg(long, default_value_t = 30.0)]
    pub scorer_timeout: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub pipeline: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an 8-bit PPM of the output.
    #[arg(long)]
    pub ppm: Option<PathBuf>,
    /// Per-stage JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Repetitions for the measured per-stage runtime (0 skips measuring).
    #[arg(long, default_value_t = 5)]
    pub timing_reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchPreset {
    /// 64×64 input, conv stages 32/64/128/256, 128 features.
    Full,
    /// 16×16 input, conv stages 8/16/16/32, 64 features.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamGradArg {
    Stage,
    Episode,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Comma-separated image directories.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics CSV path; defaults to the checkpoint path plus `.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Comma-separated module kinds (short or snake_case names).
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    pub t_max: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub entropy_scale: f64,
    #[arg(long, value_enum, default_value_t = ArchPreset::Full)]
    pub arch: ArchPreset,
    /// Overrides the preset's input side.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long, value_enum, default_value_t = ParamGradArg::Stage)]
    pub param_grad: ParamGradArg,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 0)]
    pub validate_every: usize,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated image directories.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_c: f64,
    #[arg(long, default_value_t = 5)]
    pub t_max: usize,
    /// Full JSON report including per-episode pipelines.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub pool: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub max_stages: usize,
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    #[arg(long)]
    pub allow_reuse: bool,
    /// Write the best pipeline config here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check one module kind (the proxy scorer is always checked).
    #[arg(long)]
    pub module: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Test hook: scales every analytic gradient by 1 + x.
    #[arg(long, hide = true)]
    pub corrupt_vjp: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    /// Comma-separated image directories.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub t_max: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of clean base images (PFM or PPM).
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// First fill `--base` with this many procedurally generated scenes.
    #[arg(long)]
    pub generate_base: Option<usize>,
    /// Side of generated base scenes.
    #[arg(long, default_value_t = 64)]
    pub side: usize,
}
