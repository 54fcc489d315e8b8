//! TOML configuration for the command-line tool.
//!
//! ```toml
//! [defaults]
//! apy_convention = "compound_365"   # or "simple_365"
//! gap_fill_days = 3
//! initial_value = 1.0
//! tolerance = 1e-12
//! max_iter = 10000
//!
//! [fetch]
//! base_url = "https://yields.example/api"
//! cache_dir = "cache"               # relative to the config file
//! cache_ttl_secs = 86400
//! max_retries = 3
//! backoff_ms = 250
//! start = "2021-12-01"
//! end = "2022-05-22"
//! ids = []                          # empty: every protocol the scores endpoint returns
//!
//! [fetch.endpoints]
//! scores = "/scores"
//! yields = "/yields/{id}?start={start}&end={end}"
//! fx = "/fx?start={start}&end={end}"
//!
//! [fetch.fields]                    # JSON field names, all optional
//! scores_records = "/data"
//! id = "protocol_id"
//! apy = "apy"
//! apy_in_percent = false
//! ```

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::allocate::{ErcSolverOptions, StepRule};
use crate::backtest::ApyConvention;
use crate::error::{Error, Result};
use crate::fetch::{DateRange, FetchSpec};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub apy_convention: ApyConvention,
    pub gap_fill_days: u32,
    pub initial_value: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for Defaults {
    fn default() -> Self {
        let solver = ErcSolverOptions::default();
        Self {
            apy_convention: ApyConvention::default(),
            gap_fill_days: 3,
            initial_value: 1.0,
            tolerance: solver.tolerance,
            max_iter: solver.max_iterations,
        }
    }
}

impl Defaults {
    pub fn solver(&self) -> ErcSolverOptions {
        ErcSolverOptions {
            max_iterations: self.max_iter,
            tolerance: self.tolerance,
            step_rule: StepRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FetchConfig {
    #[serde(flatten)]
    pub spec: FetchSpec,
    pub start: NaiveDate,
    pub end: NaiveDate,
    #[serde(default)]
    pub ids: Vec<String>,
}

impl FetchConfig {
    pub fn range(&self) -> Result<DateRange> {
        DateRange::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub defaults: Defaults,
    pub fetch: Option<FetchConfig>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads a config file; a relative `cache_dir` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(fetch), Some(dir)) = (config.fetch.as_mut(), path.parent()) {
            if fetch.spec.cache_dir.is_relative() {
                fetch.spec.cache_dir = dir.join(&fetch.spec.cache_dir);
            }
        }
        Ok(config)
    }
}
