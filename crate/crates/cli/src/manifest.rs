use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use steerlabel::pipeline::config::{Config, CONFIG_SCHEMA_VERSION};
use steerlabel::simulator::SteeringProfile;

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    /// The `--seed` value, when one was given.
    pub run: Option<u64>,
    pub world: u64,
    pub noise: u64,
    pub steering_profile: Option<u64>,
    pub ssrl_task: u64,
}

impl Seeds {
    pub fn of(config: &Config, run: Option<u64>) -> Self {
        let steering_profile = match &config.simulator.steering_profile {
            SteeringProfile::Mixed { seed, .. } => Some(*seed),
            _ => None,
        };
        Self {
            run,
            world: config.simulator.world_seed,
            noise: config.simulator.noise_seed,
            steering_profile,
            ssrl_task: config.ssrl.task.seed,
        }
    }
}

/// Provenance of one run, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub config_schema_version: u32,
    pub config: Config,
    pub seeds: Seeds,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_s: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &Config, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_schema_version: CONFIG_SCHEMA_VERSION,
            config: config.clone(),
            seeds: Seeds::of(config, seed),
            threads: config.pipeline.threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            duration_s: 0.0,
        }
    }

    /// Writes `manifest.json` into `dir` through a temporary file and a rename,
    /// so readers never see a partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let io_err = |p: &Path, e: std::io::Error| CliError::Data(format!("{}: {e}", p.display()));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        file.write_all(text.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .and_then(|_| file.sync_all())
            .map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
