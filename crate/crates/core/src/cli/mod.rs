//! Command-line driver: `sav-nls run|sweep-time|sweep-space`.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

pub use config::{parse_config, ExperimentConfig, ProblemKind};
pub use experiments::{execute, run_single, run_space_sweep, run_time_sweep, CommandOutcome, RunResult};

use crate::error::{Result, SolverError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn subcommand(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name)
        .about(about)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value configuration file"),
        )
        .arg(
            Arg::new("check")
                .long("check")
                .action(ArgAction::SetTrue)
                .help("treat conservation and internal-stage mass violations as failures"),
        )
        .arg(
            Arg::new("out-dir")
                .long("out-dir")
                .value_name("DIR")
                .help("directory for CSV output (overrides out_dir)"),
        );
    for &key in config::KEYS {
        if key == "out_dir" {
            continue;
        }
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(format!("override '{key}'")),
        );
    }
    cmd
}

pub fn command() -> Command {
    Command::new("sav-nls")
        .about("Conservative finite element / Gauss collocation solver for the 1D NLS equation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand("run", "integrate one configuration and write timeseries.csv, summary.csv"))
        .subcommand(subcommand("sweep-time", "temporal convergence over tau_list"))
        .subcommand(subcommand("sweep-space", "spatial convergence over M_list"))
}

fn load(m: &ArgMatches) -> Result<(ExperimentConfig, bool)> {
    let mut overrides = Vec::new();
    for &key in config::KEYS {
        if key == "out_dir" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(key) {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    if let Some(dir) = m.get_one::<String>("out-dir") {
        overrides.push(("out_dir".to_string(), dir.clone()));
    }
    let file = m.get_one::<String>("config").map(PathBuf::from);
    let cfg = parse_config(file.as_deref(), &overrides)?;
    Ok((cfg, m.get_flag("check")))
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<CommandOutcome> {
    let (cfg, check) = load(m)?;
    match name {
        "run" => run_single(&cfg, check),
        "sweep-time" => run_time_sweep(&cfg).map(|r| r.0),
        "sweep-space" => run_space_sweep(&cfg).map(|r| r.0),
        other => Err(SolverError::config("command", format!("unknown subcommand '{other}'"))),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(outcome) => {
            println!("{name}: {}", outcome.message);
            if outcome.success {
                EXIT_OK
            } else {
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SolverError::Config { .. } | SolverError::Input(_) | SolverError::Io(_) => EXIT_USAGE,
                _ => EXIT_NUMERICAL,
            }
        }
    }
}
