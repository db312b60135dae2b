mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use blurvid::config::{Profile, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "blurvid",
    version,
    about = "Blur synthesis, training, evaluation and inference"
)]
struct Cli {
    /// TOML run configuration layered over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base profile: `paper` or `desk`.
    #[arg(long, global = true, default_value = "paper")]
    profile: String,

    /// Override a config value, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize rotational-blur samples from equirectangular panoramas.
    GenPano(GenPanoArgs),
    /// Synthesize dynamic-blur samples from high-frame-rate clips.
    GenVideo(GenVideoArgs),
    /// Train a model on a synthesized dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Evaluate a checkpoint on a dataset other than the one it was trained on.
    CrossEval(CrossEvalArgs),
    /// Restore a frame sequence from blurred images.
    Infer(InferArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenPanoArgs {
    /// Directory of 2:1 panorama images.
    #[arg(long, required_unless_present = "procedural")]
    pub panoramas: Option<PathBuf>,
    /// Use this many built-in procedural panoramas instead of a directory.
    #[arg(long, conflicts_with = "panoramas")]
    pub procedural: Option<usize>,
    /// Height of procedural panoramas.
    #[arg(long, default_value_t = 256)]
    pub procedural_height: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenVideoArgs {
    /// Directory of scenes, one subdirectory of ordered frames each (or the
    /// frames themselves for a single scene).
    #[arg(long, required_unless_present = "procedural")]
    pub frames: Option<PathBuf>,
    /// Use this many built-in procedural clips instead of a directory.
    #[arg(long, conflicts_with = "frames")]
    pub procedural: Option<usize>,
    /// Frames per procedural clip.
    #[arg(long, default_value_t = 13)]
    pub procedural_length: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Held-out dataset evaluated every `train.eval_every` epochs.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CrossEvalArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Identity of the training dataset, e.g. `panorama`.
    #[arg(long)]
    pub train_label: String,
    /// Identity of the evaluation dataset, e.g. `gopro`.
    #[arg(long)]
    pub eval_label: String,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Blurred PNGs, or dataset sample directories (their ground truth picks
    /// the reported direction).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances per operator.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negate this operator's analytic gradient (harness self-test).
    #[arg(long, value_name = "OPERATOR")]
    pub flip_sign: Option<String>,
    /// Skip the end-to-end network check.
    #[arg(long)]
    pub no_network: bool,
    /// Write the report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Exit status: 0 success, 1 validation error, 2 numerical failure.
pub enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<blurvid::Error> for Failure {
    fn from(e: blurvid::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let profile: Profile = cli.profile.parse()?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, profile, &cli.overrides)?,
        None => RunConfig::resolve(profile, None, &cli.overrides)?,
    };
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    // The config must parse before any work starts, even for commands that
    // only use part of it.
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::GenPano(a) => commands::gen_pano(&cfg, &a),
        Command::GenVideo(a) => commands::gen_video(&cfg, &a),
        Command::Train(a) => commands::train(&cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a, None),
        Command::CrossEval(a) => commands::eval(&cfg, &a.eval, Some((&a.train_label, &a.eval_label))),
        Command::Infer(a) => commands::infer(&cfg, &a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
