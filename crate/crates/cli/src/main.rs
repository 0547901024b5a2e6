//! Batch command-line front end.
//!
//! Every subcommand takes the same JSON run configuration (see the `run`
//! module of the core crate) plus a few overrides, prints a JSON summary to
//! stdout, and exits with:
//!
//! * `0` — everything requested ran and passed;
//! * `1` — a diagnostic ran to completion and failed;
//! * `2` — the configuration or a stored artifact is invalid;
//! * `3` — a solver ran out of iterations.
//!
//! The only environment variable consulted is `EIGENSHAPE_THREADS`, which
//! must be a positive integer when set; computation is deterministic and
//! single-threaded regardless, so the variable only caps worker pools of
//! embedding harnesses.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eigenshape::run::{
    continuity_stage, eigen_stage, exit_code, optimize_stage, report_stage, run_pipeline,
    verify_stage, RunConfig, ValidatedRun,
};
use eigenshape::{Error, Verdict};

#[derive(Parser)]
#[command(
    name = "eigenshape",
    about = "Shape optimization laboratory for a mixed nonlinear eigenvalue problem",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: optimize, diagnose, aggregate the report.
    Run {
        /// JSON run configuration.
        config: PathBuf,
    },
    /// Solve the first eigenpair on a stored mask or a configured shape.
    Eigen {
        /// JSON run configuration.
        config: PathBuf,
        /// Mask base path (reads `<mask>.pgm` + `<mask>.json`); defaults to
        /// the first configured shape, else the whole box.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Run the constrained (and penalized) minimization and store the fields.
    Optimize {
        /// JSON run configuration.
        config: PathBuf,
    },
    /// Check a stored solution field against the configured diagnostics.
    Verify {
        /// JSON run configuration.
        config: PathBuf,
        /// Solution base path (reads `<solution>.f64` + `<solution>.json`);
        /// defaults to `<output>/solution`.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Solve the base shape and its perturbations, reporting eigenvalue gaps.
    Continuity {
        /// JSON run configuration.
        config: PathBuf,
    },
    /// Aggregate every verdict under a directory into `report.json`.
    Report {
        /// Directory holding `*.verdict.json` files.
        dir: PathBuf,
    },
}

fn check_thread_env() -> Result<(), Error> {
    match std::env::var("EIGENSHAPE_THREADS") {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(Error::ConfigInvalid {
                key: "EIGENSHAPE_THREADS".to_string(),
                reason: format!("must be a positive integer, got \"{text}\""),
            }),
        },
        Err(_) => Ok(()),
    }
}

fn load_validated(path: &PathBuf) -> Result<ValidatedRun, Error> {
    RunConfig::load(path)?.validate()
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(text) => println!("{text}"),
        Err(e) => eprintln!("could not serialize the summary: {e}"),
    }
}

fn all_pass(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.pass)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    check_thread_env()?;
    match cli.command {
        Command::Run { config } => {
            let v = load_validated(&config)?;
            let report = run_pipeline(&v)?;
            print_json(&report);
            Ok(report.failed == 0)
        }
        Command::Eigen { config, mask } => {
            let v = load_validated(&config)?;
            let summary = eigen_stage(&v, mask.as_deref())?;
            print_json(&summary);
            Ok(true)
        }
        Command::Optimize { config } => {
            let v = load_validated(&config)?;
            let outcome = optimize_stage(&v)?;
            print_json(&outcome.summary);
            Ok(true)
        }
        Command::Verify { config, solution } => {
            let v = load_validated(&config)?;
            let verdicts = verify_stage(&v, solution.as_deref())?;
            print_json(&verdicts);
            Ok(all_pass(&verdicts))
        }
        Command::Continuity { config } => {
            let v = load_validated(&config)?;
            let (_, verdict) = continuity_stage(&v)?;
            let pass = verdict.pass;
            print_json(&verdict);
            Ok(pass)
        }
        Command::Report { dir } => {
            let report = report_stage(&dir)?;
            print_json(&report);
            Ok(report.failed == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
