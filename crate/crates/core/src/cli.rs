//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::mpc::verify_terminal;
use crate::network::{enumerate_feasible_schedules, BucketParams};
use crate::sim::{check_log, run_closed_loop, CheckReport, ClosedLoopLog};
use crate::tube::verify_rci;

#[derive(Debug, Parser)]
#[command(name = "rollout", version, about = "Robust rollout MPC under token-bucket transmission limits")]
pub struct Cli {
    /// Suppress progress and report output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Disturbance seed overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize and verify the error tube; write it as JSON.
    Tube {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize and verify terminal ingredients; write them as JSON.
    Terminal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed loop; write the CSV log and a JSON summary next to it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a CSV log against all closed-loop monitors.
    Check {
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// List schedules admissible for the hold constraint and the token bucket.
    Schedules {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "H")]
        hold: usize,
        #[arg(long, default_value_t = 0)]
        s: usize,
        #[arg(long)]
        beta: u32,
        /// Take bucket parameters from this config instead of `--g/--c/--b`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        g: u32,
        #[arg(long, default_value_t = 3)]
        c: u32,
        #[arg(long, default_value_t = 10)]
        b: u32,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Exit code for an error: bad input is a usage error, failed synthesis or checks are not.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Log(_)
        | Error::InvalidBucket(_)
        | Error::InvalidModel(_)
        | Error::InvalidPolytope(_)
        | Error::Unbounded
        | Error::DimensionMismatch { .. }
        | Error::EnumerationGuard { .. }
        | Error::TraceExhausted(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    passed: bool,
    seed: Option<u64>,
    report: &'a CheckReport,
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn print_report(report: &CheckReport, hold: usize) {
    let mark = |ok: bool| if ok { "ok  " } else { "FAIL" };
    println!("{} feasible at all {} steps", mark(report.all_feasible), report.steps);
    match report.window_min {
        Some(w) => println!("{} min transmissions per {hold}-step window: {w}", mark(w >= 1)),
        None => println!("ok   log shorter than one {hold}-step window"),
    }
    println!(
        "{} constraint violations: {}",
        mark(report.constraint_violations == 0),
        report.constraint_violations
    );
    println!(
        "{} steps with error outside the tube: {}",
        mark(report.tube_violations.is_empty()),
        report.tube_violations.len()
    );
    println!(
        "{} tokens spent {} of budget {}",
        mark(report.tokens_spent <= report.token_budget),
        report.tokens_spent,
        report.token_budget
    );
    println!(
        "{} bookkeeping errors: {}",
        mark(report.bookkeeping_errors.is_empty()),
        report.bookkeeping_errors.len()
    );
    println!(
        "     tail norms: |xbar_p| = {:.3e}, |ubar_s| = {:.3e}",
        report.tail_xbar_norm, report.tail_us_norm
    );
}

fn run_command(cli: &Cli) -> Result<i32> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Tube { config, out } => {
            let cfg = load_config(config)?;
            let tube = cfg.tube()?;
            let m = &cfg.model;
            let ok = verify_rci(&tube.omega_p, &tube.k, cfg.hold, &m.a, &m.b, &m.w_p_set, 1e-8)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&tube)?)?;
            if !quiet {
                eprintln!("tube: {} facets, verification {}", tube.omega_p.num_facets(), if ok { "passed" } else { "FAILED" });
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Terminal { config, out } => {
            let cfg = load_config(config)?;
            let tube = cfg.tube()?;
            let tightened = cfg.tightened(&tube)?;
            let ti = cfg.terminal(&tightened)?;
            let ok = verify_terminal(&ti, &cfg.model, &tightened);
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&ti)?)?;
            if !quiet {
                eprintln!("terminal: M = {}, verification {}", ti.m, if ok { "passed" } else { "FAILED" });
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Run { config, out } => {
            let cfg = load_config(config)?;
            let ctrl = cfg.controller()?;
            let mut disturbance = cfg.disturbance_model(cli.seed)?;
            let log = run_closed_loop(&ctrl, &cfg.run, &mut disturbance)?;
            let report = check_log(&log, &ctrl.model, &ctrl.tube, cfg.hold);
            let summary = RunSummary { passed: report.passed(), seed: cli.seed, report: &report };
            if let Some(path) = out {
                log.write_csv_file(path)?;
                std::fs::write(path.with_extension("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            }
            if !quiet {
                print_report(&report, cfg.hold);
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Check { log, config } => {
            let cfg: ExperimentConfig = load_config(config)?;
            let tube = cfg.tube()?;
            let log = ClosedLoopLog::read_csv_file(log)?;
            if log.is_empty() {
                return Err(Error::Log("log has no rows".into()));
            }
            let report = check_log(&log, &cfg.model, &tube, cfg.hold);
            if !quiet {
                print_report(&report, cfg.hold);
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Schedules { n, hold, s, beta, config, g, c, b } => {
            let params = match config {
                Some(path) => load_config(path)?.model.bucket,
                None => BucketParams::new(*g, *c, *b)?,
            };
            if *beta > params.b {
                return Err(Error::config("beta", "initial level exceeds the bucket size"));
            }
            for sched in enumerate_feasible_schedules(*n, *hold, *s, *beta, &params)? {
                println!("{sched}");
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments and runs the selected command, returning the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run_command(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
