use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use spinewalker::{BackendError, Mode};

mod commands;
mod config;

use config::{BackendConfig, RunConfig};

/// Vertebra instance segmentation, level labelling and evaluation.
#[derive(Debug, Parser)]
#[command(name = "spinewalker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic CT phantoms with ground truth.
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit training patches from one volume and its truth.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vol: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Traverse and label one or many volumes.
    Segment {
        #[command(flatten)]
        common: Common,
        /// Volume prefixes or directories of volumes.
        #[arg(long, required = true, num_args = 1..)]
        vol: Vec<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Program for the external backend.
        #[arg(long)]
        backend_cmd: Option<String>,
        /// Argument for the external backend program (repeatable).
        #[arg(long, allow_hyphen_values = true)]
        backend_arg: Vec<String>,
        /// Truth prefix, or a directory holding `<case>` truth prefixes.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare a `segment` output directory with ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report path; `.csv` and `.cases.json` siblings are written too.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate per-case files from one or more `eval` runs.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendKind {
    Oracle,
    External,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn override_backend(cfg: &mut RunConfig, kind: Option<BackendKind>, cmd: Option<String>, args: Vec<String>) -> Result<()> {
    match kind {
        Some(BackendKind::Oracle) if !matches!(cfg.backend, BackendConfig::Oracle { .. }) => {
            cfg.backend = BackendConfig::default();
        }
        Some(BackendKind::External) if !matches!(cfg.backend, BackendConfig::External { .. }) => {
            cfg.backend = BackendConfig::External { command: vec![], timeout_s: 60.0 };
        }
        _ => {}
    }
    if let Some(cmd) = cmd {
        let BackendConfig::External { command, .. } = &mut cfg.backend else {
            bail!("--backend-cmd needs the external backend");
        };
        *command = std::iter::once(cmd).chain(args).collect();
    } else if !args.is_empty() {
        bail!("--backend-arg needs --backend-cmd");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { common, count, out } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            commands::phantom(&cfg, count, &out)
        }
        Command::Sample { common, vol, truth, count, out } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            commands::sample(&cfg, &vol, &truth, count, &out)
        }
        Command::Segment { common, vol, backend, backend_cmd, backend_arg, truth, mode, out, jobs } => {
            let mut cfg = resolve(&common)?;
            override_backend(&mut cfg, backend, backend_cmd, backend_arg)?;
            if let Some(mode) = mode {
                cfg.traversal.mode = mode;
            }
            cfg.validate()?;
            commands::segment(&cfg, &vol, truth.as_deref(), &out, jobs)
        }
        Command::Eval { common, pred, truth, report, jobs } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            commands::eval(&cfg, &pred, &truth, &report, jobs)
        }
        Command::Report { common, cases, out } => {
            let cfg = resolve(&common)?;
            cfg.validate()?;
            commands::report(&cfg, &cases, Path::new(&out))
        }
    }
}

/// 2 when a segmentation backend failed anywhere in the chain, else 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err.chain().any(|e| {
        e.downcast_ref::<BackendError>().is_some()
            || matches!(e.downcast_ref::<spinewalker::Error>(), Some(spinewalker::Error::Backend(_)))
    });
    if backend {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPINEWALKER_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
