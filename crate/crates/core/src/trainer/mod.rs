//! Stochastic optimization of VR bounds with Adam.
//!
//! Two settings are supported. Posterior inference keeps one global
//! mean-field `q(θ)` and estimates the bound on a mini-batch of M rows with
//! the likelihood scaled by `N/M` (the energy approximation). Amortized
//! inference (the VAE) gives every datapoint its own latent and its own K
//! noise draws, and averages the per-datapoint bounds over the mini-batch.
//!
//! All randomness is derived from `TrainConfig::seed`: mini-batch order, MC
//! noise and Algorithm-1 sample selection each use their own ChaCha8 streams,
//! so a run is reproducible bit for bit regardless of thread count.

mod adam;
mod eval;
pub mod params;
mod record;

pub use adam::{Adam, AdamConfig};
pub use eval::{evaluate, weight_diagnostics, EvalRow, EvalSpec, EvalTable, WeightDiagnostics};
pub use record::{EvalRecord, RunManifest, RunRecord, StepRecord};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaSetting;
use crate::error::{Error, Result};
use crate::estimator::{BoundValue, WeightSet};
use crate::gradient::{mc_vr_objective, single_sample_grad, vr_grad, LogWeight, NoiseDraw};
use crate::models::{Dataset, JointModel, JointObjective, VAEModel};
use crate::variational::{MeanField, Variational};

/// Optimization settings shared by both inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: AlphaSetting,
    /// MC samples per datapoint (amortized) or per step (posterior).
    #[serde(rename = "K")]
    pub k: usize,
    /// Mini-batch size M.
    #[serde(rename = "M")]
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Samples per datapoint for held-out `L̂_{0,K}` evaluation.
    #[serde(default = "default_eval_k")]
    pub eval_k: usize,
    /// Back-propagate one selected sample per datapoint.
    #[serde(default)]
    pub single_backprop: bool,
    /// Also optimize the model hyper-parameters ϑ.
    #[serde(default = "default_true")]
    pub train_hyperparams: bool,
}

fn default_eval_k() -> usize {
    5000
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(alpha: AlphaSetting, k: usize, batch_size: usize, steps: usize, seed: u64) -> Self {
        Self {
            alpha,
            k,
            batch_size,
            steps,
            adam: AdamConfig::default(),
            seed,
            eval_k: default_eval_k(),
            single_backprop: false,
            train_hyperparams: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("M must be at least 1".into());
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.adam.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return bad("Adam epsilon must be positive".into());
        }
        if self.eval_k < self.k {
            return bad(format!("eval K {} is below training K {}", self.eval_k, self.k));
        }
        Ok(())
    }
}

/// What is being trained.
#[derive(Clone, Copy)]
pub enum Inference<'a> {
    /// Global latent with mean-field `q(θ)`; parameters `[μ; ρ | ϑ]`.
    Posterior(&'a dyn JointModel),
    /// Per-datapoint latent with the model's encoder; parameters
    /// `[encoder | decoder]`.
    Amortized(&'a VAEModel),
}

impl Inference<'_> {
    fn num_variational(&self) -> usize {
        match self {
            Inference::Posterior(m) => 2 * m.latent_dim(),
            Inference::Amortized(m) => m.encoder().num_params(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Inference::Posterior(m) => self.num_variational() + m.num_params(),
            Inference::Amortized(m) => self.num_variational() + m.num_params(),
        }
    }
}

/// Fitted parameters and the run history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub record: RunRecord,
}

/// Mini-batches drawn without replacement; the order is reshuffled at the
/// start of every epoch from a per-epoch stream. A batch size of at least N
/// always yields all rows in order.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    m: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m: m.min(n),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.m == self.n {
            return (0..self.n).collect();
        }
        if self.pos + self.m > self.n {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(self.epoch);
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.m].to_vec();
        self.pos += self.m;
        b
    }
}

// Independent seed families derived from the run seed.
fn batch_seed(seed: u64) -> u64 {
    seed ^ 0x6261_7463_6865_7321
}

fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x6e6f_6973_6521_2121
}

fn select_seed(seed: u64) -> u64 {
    seed ^ 0x7365_6c65_6374_2121
}

/// Noise for slot `slot` (datapoint position in the batch) of step `step`.
pub fn step_noise(seed: u64, step: usize, slot: usize, k: usize, dim: usize) -> Vec<NoiseDraw> {
    let base = ((step as u64) << 32) | ((slot as u64) << 16);
    NoiseDraw::batch(noise_seed(seed), base, k, dim)
}

/// Mini-batch VR estimate with log weights
/// `log p₀(θ_k) + (N/M) Σ_{x∈S} log p(x|θ_k) − log q(θ_k)`.
#[allow(clippy::too_many_arguments)]
pub fn energy_approx_objective<M: JointModel + ?Sized, V: Variational + ?Sized>(
    model: &M,
    variational: &V,
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
    n_total: usize,
    alpha: AlphaSetting,
    noise: &[NoiseDraw],
) -> Result<BoundValue> {
    let obj = JointObjective::mini_batch(model, variational, data, batch.to_vec(), n_total)?;
    mc_vr_objective(&obj, params, noise, alpha)
}

/// Objective value, gradient and the step's log weights for one datapoint
/// (amortized) or one mini-batch (posterior).
fn slot_gradient<F: LogWeight + ?Sized>(
    f: &F,
    params: &[f64],
    noise: &[NoiseDraw],
    config: &TrainConfig,
    step: usize,
    slot: usize,
) -> Result<(f64, Vec<f64>, WeightSet)> {
    if config.single_backprop {
        let mut rng = ChaCha8Rng::seed_from_u64(select_seed(config.seed));
        rng.set_stream(((step as u64) << 32) | slot as u64);
        let g = single_sample_grad(f, params, noise, config.alpha, &mut rng)?;
        Ok((g.bound.value, g.grad, g.log_weights))
    } else {
        let g = vr_grad(f, params, noise, config.alpha)?;
        Ok((g.bound.value, g.grad, g.log_weights))
    }
}

/// Maximizes the VR bound with Adam starting from `init`.
pub fn train(target: Inference<'_>, data: &Dataset, config: &TrainConfig, init: Vec<f64>) -> Result<TrainOutcome> {
    config.validate()?;
    if init.len() != target.num_params() {
        return Err(Error::DimensionMismatch {
            expected: target.num_params(),
            got: init.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidDataset("no training rows".into()));
    }
    let n_var = target.num_variational();
    let n = data.len();
    let mut params = init;
    let mut adam = Adam::new(config.adam, params.len());
    let mut sampler = BatchSampler::new(n, config.batch_size, batch_seed(config.seed));
    let mut record = RunRecord::new();
    let clock = Instant::now();

    for step in 0..config.steps {
        let batch = sampler.next_batch();
        let result = match target {
            Inference::Posterior(model) => {
                let q = MeanField {
                    dim: model.latent_dim(),
                };
                let obj = JointObjective::mini_batch(model, &q, data, batch, n)?;
                let noise = step_noise(config.seed, step, 0, config.k, q.dim);
                slot_gradient(&obj, &params, &noise, config, step, 0).map(|(v, g, w)| (v, g, vec![w]))
            }
            Inference::Amortized(model) => {
                let enc = model.encoder();
                let per_point: Result<Vec<(f64, Vec<f64>, WeightSet)>> = batch
                    .par_iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        let obj = JointObjective::datapoint(model, &enc, data, i);
                        let noise = step_noise(config.seed, step, slot, config.k, enc.latent_dim());
                        slot_gradient(&obj, &params, &noise, config, step, slot)
                    })
                    .collect();
                per_point.map(|pp| {
                    let m = pp.len() as f64;
                    let mut value = 0.0;
                    let mut grad = vec![0.0; params.len()];
                    let mut weights = Vec::with_capacity(pp.len());
                    for (v, g, w) in pp {
                        value += v / m;
                        for (acc, gi) in grad.iter_mut().zip(&g) {
                            *acc += gi / m;
                        }
                        weights.push(w);
                    }
                    (value, grad, weights)
                })
            }
        };
        let (objective, mut grad, weights) = match result {
            Ok(r) => r,
            Err(Error::NonFiniteGradient { .. } | Error::AllWeightsZero | Error::InvalidLogWeight { .. }) => {
                return Err(Error::Diverged {
                    step,
                    objective: f64::NAN,
                    last_params: params,
                })
            }
            Err(e) => return Err(e),
        };
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                objective,
                last_params: params,
            });
        }
        if !config.train_hyperparams {
            grad[n_var..].iter_mut().for_each(|g| *g = 0.0);
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let log_ratio = weights
            .iter()
            .map(|w| weight_diagnostics(w).log_ratio)
            .sum::<f64>()
            / weights.len() as f64;
        adam.ascend(&mut params, &grad);
        record.steps.push(StepRecord {
            step,
            objective,
            grad_norm,
            log_weight_ratio: log_ratio,
            wall_time_s: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params, record })
}

/// Mean-field initialization `[μ = 0; ρ = rho0 | ϑ]`.
pub fn mean_field_init(model: &dyn JointModel, rho0: f64, hyper: &[f64]) -> Vec<f64> {
    let d = model.latent_dim();
    let mut p = vec![0.0; d];
    p.extend(std::iter::repeat_n(rho0, d));
    p.extend_from_slice(hyper);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::{log_weights, mc_vr_objective};
    use crate::models::BLRModel;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 3, 4);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let full = BatchSampler::new(5, 8, 1).next_batch();
        assert_eq!(full, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn full_batch_energy_equals_full_data() {
        let model = BLRModel::synthetic(1);
        let data = model.dataset();
        let q = MeanField { dim: 2 };
        let params = [0.3, -0.2, -1.0, -0.7, model.sigma().ln()];
        let noise = NoiseDraw::batch(5, 0, 6, 2);
        let all: Vec<usize> = (0..data.len()).collect();
        for a in [AlphaSetting::NEG_INF, AlphaSetting::ZERO, AlphaSetting::of(0.5), AlphaSetting::ONE] {
            let e = energy_approx_objective(&model, &q, &params, data, &all, data.len(), a, &noise).unwrap();
            let full = mc_vr_objective(&JointObjective::full_data(&model, &q, data), &params, &noise, a).unwrap();
            assert_eq!(e.value, full.value);
        }
        assert!(energy_approx_objective(&model, &q, &params, data, &[], 20, AlphaSetting::ZERO, &noise).is_err());
    }

    #[test]
    fn energy_alpha_one_is_minibatch_elbo() {
        let model = BLRModel::synthetic(1);
        let data = model.dataset();
        let q = MeanField { dim: 2 };
        let params = [0.3, -0.2, -1.0, -0.7, model.sigma().ln()];
        let noise = NoiseDraw::batch(5, 0, 4, 2);
        let batch = [2, 7, 11];
        let e = energy_approx_objective(&model, &q, &params, data, &batch, 20, AlphaSetting::ONE, &noise).unwrap();
        let obj = JointObjective::mini_batch(&model, &q, data, batch.to_vec(), 20).unwrap();
        let w = log_weights(&obj, &params, &noise).unwrap();
        let mean = w.log_weights().iter().sum::<f64>() / 4.0;
        assert!((e.value - mean).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::new(AlphaSetting::ZERO, 5, 10, 100, 0);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.k = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.eval_k = 2;
        assert!(c.validate().is_err());
        let json = r#"{"alpha": "-inf", "K": 5, "M": 10, "steps": 3, "bogus": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let json = r#"{"alpha": "-inf", "K": 5, "M": 10, "steps": 3}"#;
        let c: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.alpha, AlphaSetting::NEG_INF);
        assert_eq!(c.eval_k, 5000);
    }

    #[test]
    fn training_is_deterministic() {
        let model = BLRModel::synthetic(1);
        let cfg = TrainConfig::new(AlphaSetting::of(0.5), 3, 5, 20, 42);
        let init = mean_field_init(&model, -1.0, &[model.sigma().ln()]);
        let a = train(Inference::Posterior(&model), model.dataset(), &cfg, init.clone()).unwrap();
        let b = train(Inference::Posterior(&model), model.dataset(), &cfg, init).unwrap();
        assert_eq!(a.params, b.params);
        let oa: Vec<f64> = a.record.steps.iter().map(|s| s.objective).collect();
        let ob: Vec<f64> = b.record.steps.iter().map(|s| s.objective).collect();
        assert_eq!(oa, ob);
    }
}
