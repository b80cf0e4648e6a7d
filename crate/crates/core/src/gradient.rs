//! Reparameterization gradients of the Monte Carlo VR bound.
//!
//! With `θ_k = g_φ(ε_k)` and `log ŵ_k = log p(θ_k, x) - log q(θ_k)`, the
//! gradient of `L̂_{α,K}` is `Σ_k ŵ_{α,k} ∇ log ŵ_k` where the normalized
//! weights are `ŵ_{α,k} ∝ ŵ_k^{1-α}` (uniform at α = 1, one-hot at the
//! largest / smallest weight at α = -∞ / +∞). [`select_backprop_sample`]
//! implements the single-backward-pass variant: draw one index `j` from those
//! weights (argmax for VR-max) and back-propagate only `log ŵ_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::alpha::{AlphaKind, AlphaSetting};
use crate::error::{Error, Result};
use crate::estimator::{mc_vr_estimate, BoundValue, WeightSet};
use crate::numeric::{argmax, argmin, softmax};
use crate::tape::{Tape, Var};

/// Standard-normal noise with its seed lineage `(seed, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub eps: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl NoiseDraw {
    /// Deterministic draw: ChaCha8 seeded with `seed`, stream `index`.
    pub fn generate(seed: u64, index: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let eps = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self { eps, seed, index }
    }

    /// `k` consecutive draws starting at `first_index`.
    pub fn batch(seed: u64, first_index: u64, k: usize, dim: usize) -> Vec<Self> {
        (0..k as u64)
            .map(|i| Self::generate(seed, first_index + i, dim))
            .collect()
    }
}

/// A differentiable log importance weight `log ŵ(ε; params)`.
///
/// Implementors record the reparameterized sample and the model/variational
/// log densities on the tape. `params` is one flat leaf holding every
/// differentiable parameter.
pub trait LogWeight: Sync {
    fn num_params(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn record(&self, tape: &mut Tape, params: Var, eps: &[f64]) -> Var;
}

pub fn log_weight_value<F: LogWeight + ?Sized>(f: &F, params: &[f64], eps: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(params.to_vec());
    let out = f.record(&mut tape, p, eps);
    tape.scalar(out)
}

pub fn log_weight_grad<F: LogWeight + ?Sized>(f: &F, params: &[f64], eps: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let p = tape.leaf(params.to_vec());
    let out = f.record(&mut tape, p, eps);
    (tape.scalar(out), tape.backward(out).wrt(p))
}

/// Log weights for every noise draw (forward pass only).
pub fn log_weights<F: LogWeight + ?Sized>(f: &F, params: &[f64], noise: &[NoiseDraw]) -> Result<WeightSet> {
    let lw: Vec<f64> = noise
        .par_iter()
        .map(|n| log_weight_value(f, params, &n.eps))
        .collect();
    WeightSet::new(lw)
}

/// `L̂_{α,K}` under fixed noise.
pub fn mc_vr_objective<F: LogWeight + ?Sized>(
    f: &F,
    params: &[f64],
    noise: &[NoiseDraw],
    alpha: AlphaSetting,
) -> Result<BoundValue> {
    Ok(mc_vr_estimate(&log_weights(f, params, noise)?, alpha))
}

/// Normalized importance weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    probs: Vec<f64>,
}

impl NormalizedWeights {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }
}

/// `ŵ_{α,k} ∝ exp((1-α) log w_k)`; uniform at α = 1, one-hot at
/// argmax (α = -∞) or argmin (α = +∞) with ties to the lowest index.
pub fn normalize_weights(w: &WeightSet, alpha: AlphaSetting) -> NormalizedWeights {
    let lw = w.log_weights();
    let k = lw.len();
    let one_hot = |j: usize| {
        let mut p = vec![0.0; k];
        p[j] = 1.0;
        p
    };
    let probs = match alpha.kind() {
        AlphaKind::One => vec![1.0 / k as f64; k],
        AlphaKind::NegInf => one_hot(argmax(lw)),
        AlphaKind::PosInf => one_hot(argmin(lw)),
        AlphaKind::Finite(a) => {
            let zeros = lw.iter().filter(|&&v| v == f64::NEG_INFINITY).count();
            if a > 1.0 && zeros > 0 {
                // w^{1-α} is infinite exactly at the zero-weight samples
                lw.iter()
                    .map(|&v| if v == f64::NEG_INFINITY { 1.0 / zeros as f64 } else { 0.0 })
                    .collect()
            } else {
                let scaled: Vec<f64> = lw.iter().map(|&v| (1.0 - a) * v).collect();
                softmax(&scaled)
            }
        }
    };
    NormalizedWeights { probs }
}

/// Output of [`vr_grad`].
#[derive(Debug, Clone)]
pub struct VrGradient {
    pub bound: BoundValue,
    pub log_weights: WeightSet,
    pub weights: NormalizedWeights,
    /// `Σ_k ŵ_{α,k} ∇ log ŵ_k` over all parameters.
    pub grad: Vec<f64>,
}

/// Full weighted reparameterization gradient of `L̂_{α,K}` under fixed noise.
pub fn vr_grad<F: LogWeight + ?Sized>(
    f: &F,
    params: &[f64],
    noise: &[NoiseDraw],
    alpha: AlphaSetting,
) -> Result<VrGradient> {
    let per_sample: Vec<(f64, Vec<f64>)> = noise
        .par_iter()
        .map(|n| log_weight_grad(f, params, &n.eps))
        .collect();
    let log_weights = WeightSet::new(per_sample.iter().map(|(v, _)| *v).collect())?;
    let weights = normalize_weights(&log_weights, alpha);
    let mut grad = vec![0.0; params.len()];
    // fixed summation order keeps the reduction deterministic
    for (k, ((_, g), &wk)) in per_sample.iter().zip(weights.probs()).enumerate() {
        if wk == 0.0 {
            continue;
        }
        if let Some(component) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { sample: k, component });
        }
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += wk * gi;
        }
    }
    Ok(VrGradient {
        bound: mc_vr_estimate(&log_weights, alpha),
        log_weights,
        weights,
        grad,
    })
}

/// Index of the sample to back-propagate: drawn from the normalized weights
/// for finite α, argmax for α = -∞ (VR-max), argmin for α = +∞.
pub fn select_backprop_sample<R: Rng + ?Sized>(w: &WeightSet, alpha: AlphaSetting, rng: &mut R) -> usize {
    match alpha.kind() {
        AlphaKind::NegInf => argmax(w.log_weights()),
        AlphaKind::PosInf => argmin(w.log_weights()),
        _ => {
            let probs = normalize_weights(w, alpha);
            sample_categorical(probs.probs(), rng)
        }
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Output of [`single_sample_grad`].
#[derive(Debug, Clone)]
pub struct SingleSampleGradient {
    pub bound: BoundValue,
    pub log_weights: WeightSet,
    pub index: usize,
    /// `∇ log ŵ(ε_j)` for the selected sample only.
    pub grad: Vec<f64>,
}

/// One gradient step's direction with a single backward pass.
pub fn single_sample_grad<F: LogWeight + ?Sized, R: Rng + ?Sized>(
    f: &F,
    params: &[f64],
    noise: &[NoiseDraw],
    alpha: AlphaSetting,
    rng: &mut R,
) -> Result<SingleSampleGradient> {
    let log_weights = log_weights(f, params, noise)?;
    let index = select_backprop_sample(&log_weights, alpha, rng);
    let (_, grad) = log_weight_grad(f, params, &noise[index].eps);
    if let Some(component) = grad.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient { sample: index, component });
    }
    Ok(SingleSampleGradient {
        bound: mc_vr_estimate(&log_weights, alpha),
        log_weights,
        index,
        grad,
    })
}

/// Smallest denominator used when forming relative errors.
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Largest relative error between `grad` and central differences of `f`.
///
/// Per coordinate: `|fd - g| / max(|fd|, |g|, 1e-8)`.
pub fn finite_diff_check<F: Fn(&[f64]) -> f64>(f: F, phi: &[f64], grad: &[f64], step: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step} outside [1e-7, 1e-3]")));
    }
    if grad.len() != phi.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            got: grad.len(),
        });
    }
    let mut x = phi.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..phi.len() {
        x[i] = phi[i] + step;
        let up = f(&x);
        x[i] = phi[i] - step;
        let down = f(&x);
        x[i] = phi[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteValue { coordinate: i });
        }
        let fd = (up - down) / (2.0 * step);
        let denom = fd.abs().max(grad[i].abs()).max(FD_ABS_FLOOR);
        worst = worst.max((fd - grad[i]).abs() / denom);
    }
    Ok(worst)
}
