//! `gpbold simulate|fit|evaluate --config <json>`.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gpbold::baselines::ModelKind;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or config; exit code 1.
    Usage(String),
    /// Unreadable or inconsistent inputs; exit code 1.
    Input(String),
    /// A sampler or linear-algebra failure; exit code 2.
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<gpbold::Error> for CliError {
    fn from(e: gpbold::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Gp,
    Fixed,
    FixedDeriv,
    Fir,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gp => ModelKind::Gp,
            ModelArg::Fixed => ModelKind::Fixed,
            ModelArg::FixedDeriv => ModelKind::FixedDeriv,
            ModelArg::Fir => ModelKind::Fir,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpbold", version, about = "Joint detection-estimation for task fMRI with a GP prior on the predicted BOLD signal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run config; relative paths inside it are relative to the file.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to the config, then GPBOLD_JOBS.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides the config's.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic study datasets.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one model to every parcel.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Activity maps and, with --roc, ROC curves against the simulated truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        roc: bool,
    },
}

fn jobs(cli: Option<usize>, cfg: Option<usize>) -> Result<Option<usize>, CliError> {
    let env = match std::env::var("GPBOLD_JOBS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("GPBOLD_JOBS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let n = cli.or(cfg).or(env);
    if n == Some(0) {
        return Err(CliError::Usage("the number of jobs must be at least 1".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Simulate { common } | Command::Fit { common, .. } | Command::Evaluate { common, .. } => common,
    };
    let (cfg, base) = RunConfig::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|o| base.join(o)))
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out`".into()))?;
    let seed = common.seed.or(cfg.seed);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs(common.jobs, cfg.jobs)? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Input(e.to_string()))?;
    let need_seed = || seed.ok_or_else(|| CliError::Usage("no seed: pass --seed or set `seed`".into()));
    pool.install(|| match cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg, need_seed()?, &out),
        Command::Fit { model, .. } => {
            let model = model.map(ModelKind::from).or(cfg.model).unwrap_or(ModelKind::Gp);
            commands::fit(&cfg, &base, need_seed()?, model, &out)
        }
        Command::Evaluate { roc, .. } => commands::evaluate(&cfg, &base, roc, &out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
