//! Run configuration: a TOML config file, command-line overrides on top,
//! and the fully resolved result written next to the outputs as `run.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mortdef_core::mcmc::McmcConfig;
use mortdef_core::models::ModelId;
use mortdef_core::reference_prep::PriorMeanCalibration;
use mortdef_core::scoring::{MaePointForecast, ScoreConfig};
use mortdef_core::{Error, Result};

/// Raw (partially specified) configuration as read from a TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    pub model: Option<String>,
    pub fund: Option<String>,
    pub reference: Option<String>,
    pub reference_label: Option<String>,
    pub train_years: Option<String>,
    pub test_year: Option<i32>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub calibration: Option<String>,
    pub prior_table: Option<String>,
    pub prior_offset: Option<f64>,
    #[serde(default)]
    pub mcmc: FileMcmc,
    #[serde(default)]
    pub score: FileScore,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileMcmc {
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub target_acceptance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileScore {
    pub dbar: Option<u64>,
    pub rps_include_k0: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("config parse error: {e}"),
        })
    }
}

/// Fully resolved run configuration; serialized as `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub fund: Option<String>,
    pub reference: Option<String>,
    pub reference_label: String,
    pub train_years: Option<(i32, i32)>,
    pub test_year: Option<i32>,
    pub out: String,
    pub seed: u64,
    pub mcmc: McmcSettings,
    pub score: ScoreSettings,
    pub calibration: Option<PriorMeanCalibration>,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McmcSettings {
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub target_acceptance: f64,
}

impl McmcSettings {
    pub fn to_core(self, seed: u64) -> McmcConfig {
        McmcConfig {
            chains: self.chains,
            iterations: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            seed,
            target_acceptance: self.target_acceptance,
        }
    }
}

impl Default for McmcSettings {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            chains: d.chains,
            iters: d.iterations,
            burnin: d.burn_in,
            thin: d.thin,
            target_acceptance: d.target_acceptance,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub dbar: u64,
    pub rps_include_k0: bool,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            dbar: 10,
            rps_include_k0: false,
        }
    }
}

impl ScoreSettings {
    pub fn to_core(self) -> ScoreConfig {
        ScoreConfig {
            d_bar: self.dbar,
            rps_include_k0: self.rps_include_k0,
            mae_point: MaePointForecast::Mean,
        }
    }
}

pub fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Data(format!(
            "year range must look like 2013:2018, got `{s}`"
        )));
    }
    let lo: i32 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad year `{}`", parts[0])))?;
    let hi: i32 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad year `{}`", parts[1])))?;
    if hi < lo {
        return Err(Error::Data(format!("empty year range {lo}:{hi}")));
    }
    Ok((lo, hi))
}

pub fn parse_model_id(s: &str) -> Result<ModelId> {
    s.parse()
}

/// Worker-thread budget: the MORTDEF_THREADS environment variable, else the
/// machine's parallelism. Thread count never changes numeric results.
pub fn thread_budget() -> usize {
    match std::env::var("MORTDEF_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n > 0).unwrap_or(1),
        Err(_) => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    }
}

pub fn require_file(path: &str, what: &str) -> Result<PathBuf> {
    let p = PathBuf::from(path);
    if !p.is_file() {
        return Err(Error::Data(format!("{what} file does not exist: {path}")));
    }
    Ok(p)
}
