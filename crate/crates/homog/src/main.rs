//! Command-line driver for the homogenization experiments.
//!
//! Four subcommands cover the workflow: `fem` solves the cell problems with
//! the P1 benchmark, `train` fits neural trial fields (strong-form or
//! variational), `report` tabulates finished runs, and `check` executes the
//! built-in self checks. Runs are fully determined by a flat key/value
//! config file plus `--set` overrides; outputs land in the configured
//! directory as `run.json`, `curve.csv`, solution CSVs, and raw parameter
//! dumps.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including unknown
//! keys and invalid values), 3 for numerical failures (non-finite losses,
//! solver breakdown).

use clap::{Args, Parser, Subcommand};
use homog::config::{MethodKind, RunConfig};
use homog::report::cmd_report;
use homog::run::{cmd_fem, cmd_train, summarize, RunError};
use homog::suite::run_all;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "homog",
    version,
    about = "Effective conductivity of a periodic two-phase cell: neural trial fields, FEM benchmark, guaranteed bounds"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve both cell problems with the periodic P1 finite-element
    /// benchmark and report the guaranteed two-sided bounds.
    Fem(RunArgs),
    /// Train neural trial fields with the configured method
    /// (pinn | vspinn | vnpinn) and write estimates, bounds, and curves.
    Train(RunArgs),
    /// Tabulate one or more finished runs as CSV on stdout.
    Report {
        /// Run directories (containing run.json) or run.json paths.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the built-in self checks and report one line per check.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file; omitted keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=2000 (repeatable,
    /// applied in order after the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for run artifacts (applied last, overrides
    /// out_dir from the file and from --set).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Force bit-reproducible reductions regardless of the config value.
    #[arg(long)]
    deterministic: bool,
}

fn build_config(args: &RunArgs) -> Result<RunConfig, RunError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &args.set {
        cfg.apply_set(assignment)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.cmd {
        Cmd::Fem(args) => {
            let mut cfg = build_config(&args)?;
            cfg.method = MethodKind::Fem;
            cfg.validate()?;
            let record = cmd_fem(&cfg)?;
            print!("{}", summarize(&record));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train(args) => {
            let cfg = build_config(&args)?;
            cfg.validate()?;
            let record = cmd_train(&cfg)?;
            print!("{}", summarize(&record));
            // Outputs are on disk either way; a rolled-back (aborted) run
            // still reports as a numerical failure.
            if record.aborted().is_some() {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Cmd::Report { paths } => {
            print!("{}", cmd_report(&paths));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check => {
            let results = run_all();
            let mut all_passed = true;
            for r in &results {
                all_passed &= r.passed;
                let tag = if r.passed { " ok " } else { "FAIL" };
                println!("[{tag}] {:<28} {}", r.name, r.detail);
            }
            if all_passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
