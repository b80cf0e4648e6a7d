//! The JSON run configuration.
//!
//! Every struct rejects unknown keys. Sections that an experiment does not
//! use may be omitted; the resolved configuration written next to the outputs
//! contains only the experiment's own sections, with every default filled in.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vrbound::models::VAELikelihood;
use vrbound::{AlphaSetting, GaussianDist, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Divergence,
    BiasSim,
    BlrDemo,
    BnnTrain,
    VaeTrain,
    Eval,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Divergence => "divergence",
            Experiment::BiasSim => "bias-sim",
            Experiment::BlrDemo => "blr-demo",
            Experiment::BnnTrain => "bnn-train",
            Experiment::VaeTrain => "vae-train",
            Experiment::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_sim: Option<BiasSimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blr: Option<BlrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bnn: Option<BnnSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vae: Option<VaeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

fn alphas(values: &[f64]) -> Vec<AlphaSetting> {
    values.iter().map(|&a| AlphaSetting::of(a)).collect()
}

/// The shifted unit-Gaussian pair `N([0,0], I)`, `N([1,1], I)`.
fn unit_pair() -> (GaussianDist, GaussianDist) {
    (
        GaussianDist::diagonal(vec![0.0, 0.0], vec![1.0, 1.0]).expect("valid"),
        GaussianDist::diagonal(vec![1.0, 1.0], vec![1.0, 1.0]).expect("valid"),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSection {
    pub p: GaussianDist,
    pub q: GaussianDist,
    pub alphas: Vec<AlphaSetting>,
    /// Grid step of the quadrature cross-check (dimension ≤ 2, finite α).
    pub quadrature_step: Option<f64>,
}

impl Default for DivergenceSection {
    fn default() -> Self {
        let (p, q) = unit_pair();
        Self {
            p,
            q,
            alphas: alphas(&[
                f64::NEG_INFINITY,
                -2.0,
                -1.0,
                -0.5,
                0.0,
                0.3,
                0.5,
                0.9,
                1.0,
                2.0,
                5.0,
                f64::INFINITY,
            ]),
            quadrature_step: Some(0.05),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSimSection {
    pub p: GaussianDist,
    pub q: GaussianDist,
    pub alphas: Vec<AlphaSetting>,
    pub ks: Vec<usize>,
    pub repeats: usize,
}

impl Default for BiasSimSection {
    fn default() -> Self {
        let (p, q) = unit_pair();
        Self {
            p,
            q,
            alphas: alphas(&[-1.0, 0.0, 0.5, 1.0, 2.0]),
            ks: vec![1, 2, 5, 10, 20, 50],
            repeats: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        Self {
            lo: 0.2,
            hi: 3.0,
            points: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlrSection {
    /// Observation noise scale σ of the fitted model.
    pub sigma: f64,
    /// Seed of the built-in two-feature dataset, used when no dataset path is given.
    pub data_seed: u64,
    pub alphas: Vec<AlphaSetting>,
    pub sigma_grid: SigmaGrid,
    /// Contour grid: points per axis and half-width in posterior standard deviations.
    pub contour_points: usize,
    pub contour_half_width: f64,
}

impl Default for BlrSection {
    fn default() -> Self {
        Self {
            sigma: 0.8,
            data_seed: 2016,
            alphas: alphas(&[1.0, 0.5, 0.0, f64::INFINITY]),
            sigma_grid: SigmaGrid::default(),
            contour_points: 61,
            contour_half_width: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnnSection {
    pub hidden: usize,
    /// Initial `ρ` of every weight's `q` scale `exp(ρ)`.
    pub init_log_scale: f64,
    /// Initial `log σ` of the observation noise (standardized units).
    pub init_log_noise: f64,
    pub predictive_samples: usize,
}

impl Default for BnnSection {
    fn default() -> Self {
        Self {
            hidden: vrbound::models::bnn::DEFAULT_HIDDEN,
            init_log_scale: -3.0,
            init_log_noise: -1.0,
            predictive_samples: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub hidden: usize,
    pub likelihood: VAELikelihood,
}

impl Default for VaeSection {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: 32,
            likelihood: VAELikelihood::Bernoulli,
        }
    }
}

/// Where the data comes from. Without a `path` the experiment's built-in
/// data is used (the bundled 8×8 digits for the VAE, a synthetic regression
/// problem for the BNN, a two-feature synthetic problem for BLR).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub columns: vrbound::models::ColumnRoles,
    /// Held-out fraction for a seeded random split.
    pub test_fraction: f64,
    /// Ordered split: the first `train_rows` rows train, the rest test.
    /// Takes precedence over `test_fraction`.
    pub train_rows: Option<usize>,
    pub synthetic_rows: usize,
    pub synthetic_dim: usize,
    pub synthetic_noise: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: None,
            columns: Default::default(),
            test_fraction: 0.1,
            train_rows: None,
            synthetic_rows: 200,
            synthetic_dim: 4,
            synthetic_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Parameter file written by `vae-train`.
    pub params: Option<PathBuf>,
    pub alphas: Vec<AlphaSetting>,
    pub ks: Vec<usize>,
    pub k_ref: usize,
    pub repeats: usize,
    /// Samples per datapoint for the weight-concentration diagnostic.
    pub diagnostics_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            params: None,
            alphas: alphas(&[0.0, -1.0, -5.0, -50.0]),
            ks: vec![5, 50],
            k_ref: 5000,
            repeats: 1,
            diagnostics_k: 50,
        }
    }
}

pub fn default_train(experiment: Experiment) -> TrainConfig {
    match experiment {
        Experiment::BnnTrain => {
            let mut c = TrainConfig::new(AlphaSetting::of(0.5), 10, 32, 2000, 0);
            c.adam.learning_rate = 1e-2;
            c.eval_k = 100;
            c
        }
        _ => {
            let mut c = TrainConfig::new(AlphaSetting::ZERO, 5, 20, 3000, 0);
            c.adam.learning_rate = 3e-3;
            c
        }
    }
}
