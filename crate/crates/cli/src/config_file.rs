//! Flat `key = value` experiment files.

use std::path::Path;

use lorentz_core::{LabError, Result, SlabConfig};
use serde::Serialize;

/// Everything read from a config file, before command-line overrides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileSpec {
    #[serde(rename = "L")]
    pub length: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub seed: u64,
    pub samples: Option<usize>,
    pub bins: usize,
    pub angles: usize,
    pub mode: String,
}

impl Default for FileSpec {
    fn default() -> Self {
        FileSpec {
            length: 1.0,
            rho1: 1.0,
            rho2: 2.0,
            mu: 1.0,
            epsilon: 0.01,
            eta: 10.0,
            seed: 1,
            samples: None,
            bins: 16,
            angles: 32,
            mode: "fresh".into(),
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| LabError::InvalidConfig(format!("line {line}: cannot parse {key} = {value:?}")))
}

impl FileSpec {
    /// Blank lines and `#` comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = FileSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let n = i + 1;
            match key {
                "L" => s.length = number(key, value, n)?,
                "rho1" => s.rho1 = number(key, value, n)?,
                "rho2" => s.rho2 = number(key, value, n)?,
                "mu" => s.mu = number(key, value, n)?,
                "epsilon" => s.epsilon = number(key, value, n)?,
                "eta" => s.eta = number(key, value, n)?,
                "seed" => s.seed = number(key, value, n)?,
                "samples" => s.samples = Some(number(key, value, n)?),
                "bins" => s.bins = number(key, value, n)?,
                "angles" => s.angles = number(key, value, n)?,
                "mode" => s.mode = value.to_string(),
                other => return Err(LabError::InvalidConfig(format!("line {n}: unknown key {other:?}"))),
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn slab(&self) -> Result<SlabConfig> {
        SlabConfig::new(self.length, self.rho1, self.rho2, self.mu, self.epsilon, self.eta, self.seed)
    }
}
