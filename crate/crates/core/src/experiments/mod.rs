//! Config-driven experiments: each kind runs one of the library's checks,
//! writes CSV tables and a `summary.json` with pass/fail verdicts.

mod config;
mod discontinuity;
mod kinds;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

pub use config::{
    CoherentSpec, ContinuitySpec, DerivativeSpec, DiscontinuitySpec, DomainSpec, EigenSpec, ExperimentConfig,
    ExperimentKind, GammaSpec, GridSpec, McSpec, ModelSpec, ObservableSpec, PeriodicSpec, TimeSpec, MODEL_NAMES,
};
pub use discontinuity::{discontinuity_demo, indicator_function, DiscontinuityRow};

/// One thresholded verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, threshold: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: threshold.into(),
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!("<= {limit}"), value <= limit)
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, format!(">= {limit}"), value >= limit)
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, format!("in [{lo}, {hi}]"), (lo..=hi).contains(&value))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    pub files: Vec<String>,
    pub error: Option<String>,
}

/// Output of one experiment body before it is turned into a summary.
#[derive(Debug, Default)]
pub(crate) struct Outcome {
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

impl Outcome {
    pub fn value(&mut self, key: &str, v: f64) {
        self.values.insert(key.to_string(), v);
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    /// Writes a CSV table into `dir`; cells are written as given.
    pub fn table(&mut self, dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
        writeln!(f, "{}", header.join(","))?;
        for row in rows {
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn file(&mut self, dir: &Path, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
        write(&mut f)?;
        f.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Independent seed for a sub-run of an experiment.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    crate::spectral::phase_seed(seed, tag as usize)
}

/// Runs the experiment, writing its outputs into `out_dir` (created if
/// needed). Failures inside the experiment are recorded in the summary; only
/// I/O problems with the output directory are returned as errors.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let result = kinds::run(config, out_dir);
    let summary = match result {
        Ok(outcome) => Summary {
            kind: config.kind,
            seed: config.seed,
            pass: !outcome.checks.is_empty() && outcome.checks.iter().all(|c| c.pass),
            checks: outcome.checks,
            values: outcome.values,
            files: outcome.files,
            error: None,
        },
        Err(e) => Summary {
            kind: config.kind,
            seed: config.seed,
            pass: false,
            checks: Vec::new(),
            values: BTreeMap::new(),
            files: Vec::new(),
            error: Some(e.to_string()),
        },
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| crate::Error::Estimation(e.to_string()))?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Output directory: explicit override, then the config's `out_dir`, then
/// `out/<kind>`.
pub fn resolve_out_dir(config: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.kind.name()))
}
