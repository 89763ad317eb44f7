//! The `steerlabel` command line. [`dispatch`] parses arguments, resolves the
//! config, runs one subcommand and returns the process exit code.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use steerlabel::pipeline::config::{Config, CONFIG_SCHEMA_VERSION};

use args::{Cli, Command, Common};
use error::{CliError, EXIT_OK, EXIT_USAGE};
use manifest::RunManifest;

pub fn version_string() -> String {
    format!("{} (config schema {CONFIG_SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"))
}

/// Loads `--config` (or the defaults), then applies `--seed`, the `--set`
/// overrides in order, and `--threads`.
pub fn resolve_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    for assignment in &common.overrides {
        cfg.set_path(assignment).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(threads) = common.threads {
        cfg.pipeline.threads = threads;
    }
    Ok(cfg)
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().version(version_string()).try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let common = command.common();
    let mut cfg = resolve_config(common)?;
    let mut manifest = RunManifest::new(command.name(), &cfg, common.seed);
    if let Some(path) = &common.config {
        manifest.inputs.push(path.clone());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.pipeline.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", cfg.pipeline.threads)))?;
    pool.install(|| match command {
        Command::Simulate(a) => commands::simulate(&cfg, &a.common.out, &mut manifest),
        Command::Odometry(a) => commands::odometry(&cfg, a, &mut manifest),
        Command::Label(a) => commands::label(&mut cfg, a, &mut manifest),
        Command::Eval(a) => commands::eval(a, &mut manifest),
        Command::SsrlDemo(a) => commands::ssrl_demo(&mut cfg, a, &mut manifest),
        Command::Full(a) => commands::full(&cfg, a, &mut manifest),
    })?;
    if let Some(dir) = &common.out {
        manifest.duration_s = started.elapsed().as_secs_f64();
        manifest.write_atomic(dir)?;
    }
    Ok(())
}
