//! `superpose`: build covers and inner functions, solve superpositions for
//! registry functions, evaluate saved models.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid configuration: {0}")]
    Cover(#[from] superpose::cover::CoverError),
    #[error("invalid configuration: {0}")]
    Inner(#[from] superpose::inner::InnerError),
    #[error("invalid configuration: {0}")]
    Function(#[from] superpose::functions::FunctionError),
    #[error(transparent)]
    Model(#[from] superpose::model::ModelError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
    /// A verification or solver check failed; outputs were still written.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "superpose", version, about = "Superposition representations of continuous functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and verify the level covers and inner functions; write
    /// cover.json, inner_<i>.json and verify.json.
    Build(RunArgs),
    /// Solve for the coordinate functions; write model.json and residuals.csv.
    Solve(RunArgs),
    /// Evaluate a saved model against its function; write eval.csv.
    Eval(EvalArgs),
}

/// Flags shared by `build` and `solve`; each overrides the `--config` file.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    kmax: Option<u32>,
    #[arg(long)]
    smax: Option<i64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "fn")]
    function: Option<String>,
    /// Function parameter `name=value`; repeatable.
    #[arg(long = "fn-param", value_parser = parse_param)]
    fn_param: Vec<(String, f64)>,
    /// Half-width of the certified window `[−w, w]ⁿ`.
    #[arg(long)]
    window: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on ε_1 (must be < 1/4).
    #[arg(long)]
    eps1: Option<f64>,
    /// Level-1 period of the inner-function ladder.
    #[arg(long)]
    p1: Option<f64>,
    /// Sample points per cover level (`build`).
    #[arg(long)]
    samples: Option<usize>,
    /// Ladder levels built and verified (`build`).
    #[arg(long)]
    inner_levels: Option<u32>,
    /// Certification grid pitch (`solve`).
    #[arg(long)]
    pitch: Option<f64>,
    /// Only verify: `build` writes just verify.json; `solve` re-checks the
    /// certificate of an existing model.json.
    #[arg(long)]
    verify_only: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model file written by `solve`.
    #[arg(long)]
    model: PathBuf,
    /// Points file: one point per line, coordinates separated by `,`, `;`
    /// or whitespace; `#` starts a comment.
    #[arg(long, conflicts_with = "uniform")]
    points: Option<PathBuf>,
    /// Instead of a points file, draw this many uniform points from the
    /// certified window.
    #[arg(long)]
    uniform: Option<usize>,
    /// Seed for `--uniform` (defaults to the model's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("parameter {k:?}: {v:?} is not a number"))?;
    Ok((k.trim().to_string(), v))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(n => n, kmax => kmax, delta => delta, tol => tol, function => function,
             window => window, seed => seed, eps1 => eps1, samples => samples,
             inner_levels => inner_levels);
        if self.smax.is_some() {
            cfg.smax = self.smax;
        }
        if self.p1.is_some() {
            cfg.p1 = self.p1;
        }
        if self.pitch.is_some() {
            cfg.pitch = self.pitch;
        }
        for (k, v) in &self.fn_param {
            cfg.fn_params.insert(k.clone(), *v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Build(args) => {
            let cfg = args.resolve()?;
            commands::build(&cfg, &args.out, args.verify_only)
        }
        Command::Solve(args) => {
            let cfg = args.resolve()?;
            commands::solve(&cfg, &args.out, args.verify_only)
        }
        Command::Eval(args) => {
            commands::eval(&args.model, args.points.as_deref(), args.uniform, args.seed, &args.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
