mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Mode, RunConfig, Task, WhiteMask};
use error::CliError;
use output::RunDir;

/// Adversarial inpainting attacks on audio classifiers.
#[derive(Parser)]
#[command(name = "inpaint-attack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled dataset of WAV clips.
    Synth(Flags),
    /// Train the reference classifier.
    Train(Flags),
    /// Rank the segments that drive the classifier's decision.
    Importance(Flags),
    /// Attack clips by adversarial inpainting.
    Attack(Flags),
    /// Score an attack run.
    Eval(Flags),
    /// White-box attacks over the loss-weight grid.
    Sweep(Flags),
}

/// Flags override values from `--config`.
#[derive(clap::Args)]
struct Flags {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Seed for synthesis, training and attacks.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory with a manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Single WAV clip.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Label of the single clip.
    #[arg(long)]
    label: Option<usize>,
    /// Importance run directory to reuse.
    #[arg(long)]
    importance: Option<PathBuf>,
    /// Attack run directory to score.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Process at most this many clips.
    #[arg(long)]
    limit: Option<usize>,
    /// Query budget for importance analysis and the black-box attack.
    #[arg(long)]
    budget: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Clips per class for `synth`.
    #[arg(long)]
    clips_per_class: Option<usize>,
    /// Attack only clips the model classifies correctly.
    #[arg(long)]
    only_correct: bool,
    /// Expose the model through predictions only.
    #[arg(long)]
    black_box_only: bool,
    #[arg(long, value_enum)]
    white_mask: Option<WhiteMask>,
    /// Skip CSV tables.
    #[arg(long)]
    no_csv: bool,
}

impl Command {
    fn split(self) -> (Task, Flags) {
        match self {
            Command::Synth(f) => (Task::Synth, f),
            Command::Train(f) => (Task::Train, f),
            Command::Importance(f) => (Task::Importance, f),
            Command::Attack(f) => (Task::Attack, f),
            Command::Eval(f) => (Task::Eval, f),
            Command::Sweep(f) => (Task::Sweep, f),
        }
    }
}

fn build_config(task: Task, flags: Flags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.check_task(task)?;
    cfg.task = Some(task);
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = flags.$flag { $field = v; })*
        };
    }
    set!(output => cfg.output, mode => cfg.mode, white_mask => cfg.white_mask);
    set!(epochs => cfg.train.epochs, clips_per_class => cfg.synth.clips_per_class);
    macro_rules! set_opt {
        ($($flag:ident),* $(,)?) => {
            $(if flags.$flag.is_some() { cfg.$flag = flags.$flag; })*
        };
    }
    set_opt!(seed, model, dataset, audio, label, importance, results, limit);
    if let Some(budget) = flags.budget {
        cfg.attack.query_budget = budget;
        cfg.blackbox.query_budget = budget;
    }
    cfg.only_correct |= flags.only_correct;
    cfg.black_box_only |= flags.black_box_only;
    cfg.csv &= !flags.no_csv;
    cfg.resolve_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn execute(task: Task, cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = RunDir::create(&cfg.output)?;
    run::run(task, cfg, &mut out)?;
    out.finish(task, cfg)
}

fn fail(root: Option<&std::path::Path>, err: &CliError) -> ExitCode {
    let record = err.record();
    if let Some(root) = root {
        output::write_error(root, &record);
    }
    eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| err.to_string()));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (task, flags) = Cli::parse().command.split();
    let flag_output = flags.output.clone();
    let cfg = match build_config(task, flags) {
        Ok(cfg) => cfg,
        Err(e) => return fail(flag_output.as_deref(), &e),
    };
    match execute(task, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(Some(&cfg.output), &e),
    }
}
