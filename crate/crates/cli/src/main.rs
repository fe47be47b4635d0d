mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pocketdiff::diffusion::TypeSampling;
use pocketdiff::guidance::{ClassifyOn, ClipMode, GradPath, GuidanceMode, LossKind};

/// Guided diffusion for pocket-conditioned ligand generation on a synthetic
/// benchmark.
#[derive(Debug, Parser)]
#[command(name = "pocketdiff", version)]
pub struct Cli {
    /// Run config (JSON) or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, env = "POCKETDIFF_THREADS")]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test dataset.
    Gen(GenArgs),
    /// Train the property regressor used for classifier guidance.
    TrainClassifier(TrainClassifierArgs),
    /// Train the diffusion denoiser.
    TrainDiffusion(TrainDiffusionArgs),
    /// Sample ligands for a set of pockets.
    Sample(SampleArgs),
    /// Score sampled ligands and compare them with a reference set.
    Eval(EvalArgs),
    /// Run the analytic identity checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training complexes (config `dataset.n_train`).
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test complexes (config `dataset.n_test`).
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCommon {
    /// Dataset split directory (the `train` folder written by `gen`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Train a three-output (affinity, QED, SA) regressor for multi-constraint guidance.
    #[arg(long)]
    pub multi: bool,
    #[arg(long, value_enum)]
    pub noise_mode: Option<NoiseModeArg>,
}

#[derive(Debug, Args)]
pub struct TrainDiffusionArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Train with condition dropout for classifier-free guidance.
    #[arg(long)]
    pub cfg_mode: bool,
    #[arg(long)]
    pub p_uncond: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Pocket `.xyz` files or dataset split directories (config `paths.pockets`).
    pub pockets: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Guidance scale.
    #[arg(long)]
    pub s: Option<f64>,
    /// Target affinity, kcal/mol (single and multi-constraint).
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<f64>,
    /// Displacement clip; `none` disables clipping.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub stop_at_step: Option<usize>,
    #[arg(long)]
    pub n_per_pocket: Option<usize>,
    /// Fixed ligand size instead of the atom-count prior.
    #[arg(long)]
    pub n_atoms: Option<usize>,
    #[arg(long, value_enum)]
    pub type_sampling: Option<TypeSamplingArg>,
    #[arg(long, value_enum)]
    pub clip_mode: Option<ClipModeArg>,
    #[arg(long, value_enum)]
    pub loss_kind: Option<LossKindArg>,
    #[arg(long, value_enum)]
    pub grad_path: Option<GradPathArg>,
    #[arg(long, value_enum)]
    pub classify_on: Option<ClassifyOnArg>,
    /// Feed the classifier softmax types instead of argmax one-hot rows.
    #[arg(long)]
    pub simplex_types: bool,
    /// Multi-constraint targets.
    #[arg(long)]
    pub target_qed: Option<f64>,
    #[arg(long)]
    pub target_sa: Option<f64>,
    /// Multi-constraint weights.
    #[arg(long)]
    pub w_vina: Option<f64>,
    #[arg(long)]
    pub w_qed: Option<f64>,
    #[arg(long)]
    pub w_sa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of `sample` (or a dataset split).
    #[arg(long)]
    pub sampled: PathBuf,
    /// Reference set: a dataset split or another sample directory.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Off-target pockets per ligand for the specificity score.
    #[arg(long, default_value_t = 5)]
    pub off_targets: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    None,
    Classifier,
    Cfg,
    Multi,
    Conditional,
}

impl From<ModeArg> for GuidanceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => GuidanceMode::None,
            ModeArg::Classifier => GuidanceMode::Classifier,
            ModeArg::Cfg => GuidanceMode::ClassifierFree,
            ModeArg::Multi => GuidanceMode::MultiConstraint,
            ModeArg::Conditional => GuidanceMode::Conditional,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TypeSamplingArg {
    Argmax,
    Stochastic,
}

impl From<TypeSamplingArg> for TypeSampling {
    fn from(t: TypeSamplingArg) -> Self {
        match t {
            TypeSamplingArg::Argmax => TypeSampling::Argmax,
            TypeSamplingArg::Stochastic => TypeSampling::Stochastic,
        }
    }
}

macro_rules! value_enum {
    ($arg:ident => $core:ident { $($v:ident),+ }) => {
        #[derive(Clone, Copy, Debug, ValueEnum)]
        pub enum $arg {
            $($v),+
        }

        impl From<$arg> for $core {
            fn from(a: $arg) -> Self {
                match a {
                    $($arg::$v => $core::$v),+
                }
            }
        }
    };
}

value_enum!(ClipModeArg => ClipMode { Elementwise, Norm });
value_enum!(LossKindArg => LossKind { Gaussian, Exponential });
value_enum!(GradPathArg => GradPath { ApproxIdentity, FullChain });
value_enum!(ClassifyOnArg => ClassifyOn { X0Hat, Xt });

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NoiseModeArg {
    CleanX0,
    NoisyXt,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
