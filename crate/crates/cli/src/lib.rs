//! `motf` command-line driver.
//!
//! Every command writes into `--out` (or `$MOTF_OUT`) and echoes the
//! effective configuration there as `config.json`. Failures print one JSON
//! object on stderr and exit with 1 (bad input) or 2 (runtime fault).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use commands::{ablate, evaluate, forecast_eval, simulate, track, train_forecaster, STAGE_GRID};
pub use config::{load_run_config, Preset};

#[derive(Debug, Parser)]
#[command(name = "motf", version, about = "Joint multi-object tracking and trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: gt.txt, det.txt, emb.csv, scene.json.
    Simulate(SimulateArgs),
    /// Run the online tracker over detections: results.txt, stats.json.
    Track(TrackArgs),
    /// Train the forecaster on ground-truth tracks: forecaster.json, loss.csv.
    TrainForecaster(TrainArgs),
    /// Score a motion predictor on ground-truth tracks (ADE/FDE/AIOU/FIOU).
    ForecastEval(ForecastEvalArgs),
    /// Score tracker output against ground truth (CLEAR-MOT, IDF1).
    Evaluate(EvaluateArgs),
    /// Association-stage and predictor ablation grids on the standard suites.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; omitted keys keep the preset defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, env = "MOTF_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Named preset: linear-clean, nonlinear-clean, occlusion-20, crowded-noisy, regime-context.
    /// Without it the `scene` section of the config is used.
    #[arg(long)]
    pub suite: Option<String>,
    /// Replaces the scene seed (for a suite this also redraws its agents).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Cv,
    Kalman,
    Learned,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Detections in MOTChallenge format.
    #[arg(long)]
    pub det: PathBuf,
    /// Embedding sidecar CSV; without it appearance is uninformative.
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Forecaster checkpoint (required for `--predictor learned`).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Motion predictor [default: tracker.predictor from the config, cv]
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    /// scene.json supplying the per-frame context and the sequence length.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Disable Stage 1 (appearance + forecast fusion).
    #[arg(long)]
    pub no_fusion: bool,
    /// Disable Stage 2 (IOU matching).
    #[arg(long)]
    pub no_iou: bool,
    /// Disable Stage 3 (occlusion forecasting).
    #[arg(long)]
    pub no_occlusion: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ground-truth files (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// scene.json per --gt, in the same order, for models trained with scene context.
    #[arg(long, num_args = 1..)]
    pub scene: Vec<PathBuf>,
    /// Base defaults for the forecaster and training sections.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
}

#[derive(Debug, Clone, Args)]
pub struct ForecastEvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gt: PathBuf,
    /// Forecaster checkpoint; implies `--predictor learned`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Predictor to score [default: learned with --params, otherwise cv]
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    /// scene.json supplying the per-frame context.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Forecast horizon [default: forecaster.q from the config, 60]
    #[arg(long)]
    pub q: Option<usize>,
    /// Also score anchors whose future is shorter than q (valid-prefix averages).
    #[arg(long)]
    pub all_anchors: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gt: PathBuf,
    /// Tracker results in MOTChallenge format.
    #[arg(long)]
    pub res: PathBuf,
    /// Minimum IOU for a ground-truth / hypothesis match.
    #[arg(long, default_value_t = motf_core::metrics::DEFAULT_IOU_MATCH_THRESH)]
    pub iou_thresh: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Forecaster checkpoint; without it a desk-scale model is trained first.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Tracker predictor for the association grid [default: learned]
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    /// Number of nonlinear-clean scenes (seeds 1000, 1001, ...) used when training.
    #[arg(long, default_value_t = 16)]
    pub train_scenes: u64,
    /// Base defaults for the forecaster and training sections.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

/// Exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Validation = 1,
    Runtime = 2,
}

/// Bad flag combinations detected before any work starts.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn classify(err: &anyhow::Error) -> Failure {
    if err.downcast_ref::<UsageError>().is_some() {
        return Failure::Validation;
    }
    match err.downcast_ref::<motf_core::Error>() {
        Some(e) if e.is_validation() => Failure::Validation,
        _ => Failure::Runtime,
    }
}

pub fn error_json(err: &anyhow::Error) -> String {
    let kind = match classify(err) {
        Failure::Validation => "validation",
        Failure::Runtime => "runtime",
    };
    let details: Vec<String> = match err.downcast_ref::<motf_core::Error>() {
        Some(motf_core::Error::Validation(v)) => v.clone(),
        _ => err.chain().skip(1).map(|c| c.to_string()).collect(),
    };
    json!({ "error": { "kind": kind, "message": err.to_string(), "details": details } }).to_string()
}

fn defaults_help() -> String {
    let full = config::preset_config(Preset::Full);
    let desk = config::preset_config(Preset::Desk);
    format!(
        "Configuration defaults (full preset; every key optional in --config):\n{}\n\n\
         The desk preset replaces these sections:\n{}",
        full.to_json_pretty(),
        serde_json::to_string_pretty(&json!({ "forecaster": desk.forecaster, "training": desk.training }))
            .expect("serialisable")
    )
}

pub fn command() -> clap::Command {
    let help = defaults_help();
    let mut cmd = Cli::command().after_long_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let help = help.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_long_help(help));
    }
    cmd
}

/// Parses and runs one invocation; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = anyhow::Error::new(UsageError(e.to_string().trim().to_string()));
            eprintln!("{}", error_json(&err));
            return Failure::Validation as i32;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_json(&anyhow::Error::new(UsageError(e.to_string()))));
            return Failure::Validation as i32;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            classify(&err) as i32
        }
    }
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Track(a) => track(&a),
        Command::TrainForecaster(a) => train_forecaster(&a),
        Command::ForecastEval(a) => forecast_eval(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Ablate(a) => ablate(&a),
    }
}
