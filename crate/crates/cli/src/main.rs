mod commands;
mod config;
mod manifest;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::commands::{execute, Request};
use crate::config::{parse_grid, ExperimentConfig};
use crate::manifest::{load_manifest, Invocation, RunManifest};

/// Bad flags, config values, or organism settings.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A `--check` threshold or a replay comparison did not hold.
#[derive(Debug)]
pub struct CheckFailed(pub Vec<String>);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "check failed: {}", self.0.join("; "))
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser)]
#[command(name = "entcell", version, about = "Entity-cell localization and intervention lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the planted organism and save it as a checkpoint.
    Build(RunArgs),
    /// Rank every MLP channel per entity and compare with the planted cells.
    Localize {
        #[command(flatten)]
        args: RunArgs,
        /// Localize an external activation dump instead of the organism.
        #[arg(long, requires = "baseline_dump")]
        dump: Option<PathBuf>,
        /// Baseline activation dump for the z-scores of `--dump`.
        #[arg(long, requires = "dump")]
        baseline_dump: Option<PathBuf>,
    },
    /// Scale each entity's top cell and record amnesia curves.
    Ablate(RunArgs),
    /// Inject entity cells into placeholder QA prompts.
    Inject(RunArgs),
    /// Optimize a hidden-state offset that rewrites one fact.
    Steer(RunArgs),
    /// Compare top cells of surface variants with the canonical name.
    Robustness(RunArgs),
    /// Summarize several run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "runs/report")]
        out_dir: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Re-run a recorded run and compare its CSV outputs byte for byte.
    Replay {
        run: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML experiment config; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; `runs/<command>` when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Exit with status 5 when an acceptance threshold fails.
    #[arg(long)]
    check: bool,
    /// Comma-separated α values (ablate and inject).
    #[arg(long, allow_hyphen_values = true)]
    alpha_grid: Option<String>,
    /// k of pass@k (inject).
    #[arg(long)]
    k: Option<usize>,
    /// Load the organism from a checkpoint directory instead of building it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn into_request(self, invocation: Invocation) -> anyhow::Result<Request> {
        let mut config = ExperimentConfig::load(self.config.as_deref())?;
        let mut overrides = Vec::new();
        let command = invocation.name();
        if let Some(seed) = self.seed {
            config.seed = seed;
            overrides.push(format!("--seed {seed}"));
        }
        if let Some(text) = &self.alpha_grid {
            let grid = parse_grid(text)?;
            match invocation {
                Invocation::Ablate => config.ablation.alphas = Some(grid),
                Invocation::Inject => config.injection.alphas = grid,
                _ => return Err(ConfigError(format!("--alpha-grid does not apply to {command}")).into()),
            }
            overrides.push(format!("--alpha-grid {text}"));
        }
        if let Some(k) = self.k {
            if invocation != Invocation::Inject {
                return Err(ConfigError(format!("--k does not apply to {command}")).into());
            }
            config.injection.k = k;
            overrides.push(format!("--k {k}"));
        }
        if let Some(path) = &self.checkpoint {
            overrides.push(format!("--checkpoint {}", path.display()));
        }
        config.validate()?;
        Ok(Request {
            out_dir: self.out_dir.unwrap_or_else(|| Path::new("runs").join(command)),
            invocation,
            config,
            overrides,
            check: self.check,
            checkpoint: self.checkpoint,
        })
    }
}

fn print_summary(manifest: &RunManifest) {
    for (name, value) in &manifest.metrics {
        println!("{name} = {value}");
    }
    for c in &manifest.checks {
        let mark = if c.passed { "ok" } else { "FAIL" };
        println!("check {} = {} ({}) {mark}", c.name, c.value, c.threshold);
    }
}

fn run_request(request: &Request) -> anyhow::Result<RunManifest> {
    let manifest = execute(request)?;
    print_summary(&manifest);
    if request.check {
        let failed: Vec<String> = manifest
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} = {} (want {})", c.name, c.value, c.threshold))
            .collect();
        if !failed.is_empty() {
            return Err(CheckFailed(failed).into());
        }
    }
    Ok(manifest)
}

/// Re-executes `recorded` into `out_dir` and compares every CSV output.
fn replay(recorded: &Path, out_dir: PathBuf) -> anyhow::Result<()> {
    let original = load_manifest(recorded)?;
    let request = Request {
        invocation: original.invocation.clone(),
        config: original.config.clone(),
        overrides: original.overrides.clone(),
        out_dir,
        check: false,
        checkpoint: original.checkpoint.clone(),
    };
    let fresh = execute(&request).context("replaying")?;
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for file in original.outputs.iter().filter(|f| f.path.extension().is_some_and(|e| e == "csv")) {
        compared += 1;
        match fresh.outputs.iter().find(|f| f.path == file.path) {
            Some(f) if f.sha256 == file.sha256 => {}
            Some(_) => mismatches.push(format!("{} differs", file.path.display())),
            None => mismatches.push(format!("{} missing", file.path.display())),
        }
    }
    println!("replayed {compared} csv files, {} mismatched", mismatches.len());
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(mismatches).into())
    }
}

/// 2 config, 3 data, 4 numeric, 5 failed check, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if cause.is::<CheckFailed>() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<entcell::Error>() {
            return if e.is_numeric_error() {
                4
            } else if e.is_data_error() {
                3
            } else {
                2
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 3;
        }
    }
    1
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let request = match cli.command {
        Command::Build(args) => args.into_request(Invocation::Build)?,
        Command::Localize {
            args,
            dump,
            baseline_dump,
        } => args.into_request(Invocation::Localize { dump, baseline_dump })?,
        Command::Ablate(args) => args.into_request(Invocation::Ablate)?,
        Command::Inject(args) => args.into_request(Invocation::Inject)?,
        Command::Steer(args) => args.into_request(Invocation::Steer)?,
        Command::Robustness(args) => args.into_request(Invocation::Robustness)?,
        Command::Report { runs, out_dir, check } => Request {
            invocation: Invocation::Report { runs },
            config: ExperimentConfig::default(),
            overrides: Vec::new(),
            out_dir,
            check,
            checkpoint: None,
        },
        Command::Replay { run, out_dir } => return replay(&run, out_dir),
    };
    run_request(&request).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
