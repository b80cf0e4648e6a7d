//! Reparameterizable variational families.
//!
//! Both families are diagonal Gaussians written as `θ = μ + exp(ρ) ⊙ ε` with
//! `ε ~ N(0, I)`: [`MeanField`] holds `(μ, ρ)` directly, [`Amortized`]
//! produces them from an encoder network applied to the datapoint.

use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;
use crate::nn::Mlp;
use crate::numeric::normal_log_pdf;
use crate::tape::{Tape, Var};

/// A variational family `q_φ` usable with the reparameterization trick.
pub trait Variational: Sync {
    fn latent_dim(&self) -> usize;
    fn num_params(&self) -> usize;
    /// Records `θ = g_φ(ε)` and `log q_φ(θ | context)`.
    fn reparam(&self, tape: &mut Tape, phi: Var, eps: &[f64], context: Option<&[f64]>) -> (Var, Var);
}

/// `θ = μ + exp(ρ) ⊙ ε` for concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamMap {
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl ReparamMap {
    pub fn new(mean: Vec<f64>, log_scale: Vec<f64>) -> Result<Self> {
        if mean.len() != log_scale.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: log_scale.len(),
            });
        }
        Ok(Self { mean, log_scale })
    }

    /// Splits a flat `[μ; ρ]` vector.
    pub fn from_params(phi: &[f64]) -> Self {
        let d = phi.len() / 2;
        Self {
            mean: phi[..d].to_vec(),
            log_scale: phi[d..2 * d].to_vec(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean.clone();
        p.extend_from_slice(&self.log_scale);
        p
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_scale)
            .zip(eps)
            .map(|((m, r), e)| m + r.exp() * e)
            .collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_scale)
            .zip(theta)
            .map(|((m, r), t)| normal_log_pdf(*t, *m, r.exp()))
            .sum()
    }

    pub fn to_gaussian(&self) -> GaussianDist {
        GaussianDist::diagonal(
            self.mean.clone(),
            self.log_scale.iter().map(|r| (2.0 * r).exp()).collect(),
        )
        .expect("exp(2ρ) is positive")
    }

    pub fn from_gaussian(g: &GaussianDist) -> Self {
        Self {
            mean: g.mean().iter().copied().collect(),
            log_scale: g.variances().iter().map(|v| 0.5 * v.ln()).collect(),
        }
    }
}

fn record_gaussian(tape: &mut Tape, mean: Var, log_scale: Var, eps: &[f64]) -> (Var, Var) {
    let e = tape.constant(eps.to_vec());
    let scale = tape.exp(log_scale);
    let shift = tape.mul(scale, e);
    let theta = tape.add(mean, shift);
    let log_q = tape.gaussian_log_pdf(theta, mean, log_scale);
    (theta, log_q)
}

/// Global mean-field Gaussian with `φ = [μ; ρ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanField {
    pub dim: usize,
}

impl Variational for MeanField {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn num_params(&self) -> usize {
        2 * self.dim
    }

    fn reparam(&self, tape: &mut Tape, phi: Var, eps: &[f64], _context: Option<&[f64]>) -> (Var, Var) {
        let mean = tape.slice(phi, 0, self.dim);
        let log_scale = tape.slice(phi, self.dim, self.dim);
        record_gaussian(tape, mean, log_scale, eps)
    }
}

/// Encoder network mapping a datapoint to `[μ; ρ]` of `q(h | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Amortized {
    pub encoder: Mlp,
}

impl Amortized {
    pub fn new(encoder: Mlp) -> Self {
        assert!(encoder.output_dim().is_multiple_of(2), "encoder must output [mean; log_scale]");
        Self { encoder }
    }

    /// `q(h | x)` for concrete encoder weights.
    pub fn posterior(&self, phi: &[f64], x: &[f64]) -> ReparamMap {
        ReparamMap::from_params(&self.encoder.forward(phi, x))
    }
}

impl Variational for Amortized {
    fn latent_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    fn num_params(&self) -> usize {
        self.encoder.num_params()
    }

    fn reparam(&self, tape: &mut Tape, phi: Var, eps: &[f64], context: Option<&[f64]>) -> (Var, Var) {
        let x = context.expect("amortized posterior needs the datapoint");
        let input = tape.constant(x.to_vec());
        let out = self.encoder.record(tape, phi, 0, input);
        let d = self.latent_dim();
        let mean = tape.slice(out, 0, d);
        let log_scale = tape.slice(out, d, d);
        record_gaussian(tape, mean, log_scale, eps)
    }
}
