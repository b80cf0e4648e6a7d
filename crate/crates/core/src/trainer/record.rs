use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::alpha::AlphaSetting;
use crate::error::Result;

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// `log R`, averaged over the datapoints of the step.
    pub log_weight_ratio: f64,
    pub wall_time_s: f64,
}

/// One held-out bound estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub alpha: AlphaSetting,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Append-only history of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Seconds since the Unix epoch when the run started.
    pub started_at: u64,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl Default for RunRecord {
    fn default() -> Self {
        Self::new()
    }
}

impl RunRecord {
    pub fn new() -> Self {
        let started_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            started_at,
            steps: Vec::new(),
            evals: Vec::new(),
        }
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }

    /// One CSV row per step.
    pub fn steps_to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.steps.is_empty() {
            w.write_record(["step", "objective", "grad_norm", "log_weight_ratio", "wall_time_s"])?;
        }
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn evals_to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.evals.is_empty() {
            w.write_record(["alpha", "K", "mean", "stderr"])?;
        }
        for e in &self.evals {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON sidecar describing how a set of outputs was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    /// SHA-256 of the dataset contents, when a dataset was used.
    pub dataset_hash: Option<String>,
    pub crate_version: String,
    pub started_at: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(experiment: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            dataset_hash: None,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: RunRecord::new().started_at,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
