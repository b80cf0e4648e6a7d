//! Joint models `p(θ, D)` and the adapter that turns a model plus a
//! variational family into a differentiable log importance weight.
//!
//! A model separates its latent variables (θ for posterior inference, h for
//! a VAE) from its hyper-parameters ϑ (observation noise, decoder weights).
//! Both are tape variables so gradients reach either.

pub mod blr;
pub mod bnn;
pub mod data;
pub mod vae;

pub use blr::{BLRModel, BlrPosterior, SigmaPoint};
pub use bnn::BNNModel;
pub use data::{ColumnRoles, Dataset, Split, Standardizer};
pub use vae::{VAELikelihood, VAEModel};

use crate::error::{Error, Result};
use crate::gradient::LogWeight;
use crate::tape::{Tape, Var};
use crate::variational::Variational;

/// `log p₀(latent | ϑ) + Σ_{i ∈ batch} log p(x_i | latent, ϑ)`, split into its
/// prior and likelihood parts.
pub trait JointModel: Sync {
    fn latent_dim(&self) -> usize;
    /// Number of hyper-parameters ϑ.
    fn num_params(&self) -> usize;
    fn log_prior(&self, tape: &mut Tape, latent: Var, params: Var) -> Var;
    /// Summed log-likelihood of the rows in `batch`.
    fn log_likelihood(&self, tape: &mut Tape, latent: Var, params: Var, data: &Dataset, batch: &[usize]) -> Var;
}

/// Value and gradients of the log joint at a concrete point.
#[derive(Debug, Clone, PartialEq)]
pub struct LogJoint {
    pub value: f64,
    pub grad_latent: Vec<f64>,
    pub grad_params: Vec<f64>,
}

/// `log p₀(latent) + Σ_{batch} log p(x_i | latent)` with gradients.
pub fn log_joint<M: JointModel + ?Sized>(
    model: &M,
    latent: &[f64],
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<LogJoint> {
    check_len(model.latent_dim(), latent.len())?;
    check_len(model.num_params(), params.len())?;
    let mut tape = Tape::new();
    let z = tape.leaf(latent.to_vec());
    let p = tape.leaf(params.to_vec());
    let prior = model.log_prior(&mut tape, z, p);
    let lik = model.log_likelihood(&mut tape, z, p, data, batch);
    let total = tape.add(prior, lik);
    let value = tape.scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFiniteLogJoint { value });
    }
    let g = tape.backward(total);
    Ok(LogJoint {
        value,
        grad_latent: g.wrt(z),
        grad_params: g.wrt(p),
    })
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `log ŵ = log p₀(θ) + scale · Σ_{batch} log p(x_i | θ) − log q(θ)` with
/// `θ = g_φ(ε)`, over the flat parameter vector `[φ | ϑ]`.
///
/// For posterior inference `scale = N/M` (the energy approximation; `1`
/// with the full dataset). For a VAE `context` names the datapoint whose
/// encoder output parameterizes `q(h | x)`.
pub struct JointObjective<'a, M: ?Sized, V: ?Sized> {
    pub model: &'a M,
    pub variational: &'a V,
    pub data: &'a Dataset,
    pub batch: Vec<usize>,
    pub scale: f64,
    pub context: Option<usize>,
}

impl<'a, M: JointModel + ?Sized, V: Variational + ?Sized> JointObjective<'a, M, V> {
    /// Global latent with every row of `data`.
    pub fn full_data(model: &'a M, variational: &'a V, data: &'a Dataset) -> Self {
        Self {
            model,
            variational,
            data,
            batch: (0..data.len()).collect(),
            scale: 1.0,
            context: None,
        }
    }

    /// Global latent with a mini-batch standing in for `n_total` rows.
    pub fn mini_batch(model: &'a M, variational: &'a V, data: &'a Dataset, batch: Vec<usize>, n_total: usize) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::InvalidDataset("empty mini-batch".into()));
        }
        let scale = n_total as f64 / batch.len() as f64;
        Ok(Self {
            model,
            variational,
            data,
            batch,
            scale,
            context: None,
        })
    }

    /// Per-datapoint latent `h` for row `index` (amortized inference).
    pub fn datapoint(model: &'a M, variational: &'a V, data: &'a Dataset, index: usize) -> Self {
        Self {
            model,
            variational,
            data,
            batch: vec![index],
            scale: 1.0,
            context: Some(index),
        }
    }

    pub fn num_variational(&self) -> usize {
        self.variational.num_params()
    }
}

impl<M: JointModel + ?Sized, V: Variational + ?Sized> LogWeight for JointObjective<'_, M, V> {
    fn num_params(&self) -> usize {
        self.variational.num_params() + self.model.num_params()
    }

    fn noise_dim(&self) -> usize {
        self.variational.latent_dim()
    }

    fn record(&self, tape: &mut Tape, params: Var, eps: &[f64]) -> Var {
        let n_phi = self.variational.num_params();
        let phi = tape.slice(params, 0, n_phi);
        let hyper = tape.slice(params, n_phi, self.model.num_params());
        let ctx = self.context.map(|i| self.data.row(i));
        let (theta, log_q) = self.variational.reparam(tape, phi, eps, ctx);
        let prior = self.model.log_prior(tape, theta, hyper);
        let lik = self.model.log_likelihood(tape, theta, hyper, self.data, &self.batch);
        let lik = if self.scale == 1.0 { lik } else { tape.scale(lik, self.scale) };
        let joint = tape.add(prior, lik);
        tape.sub(joint, log_q)
    }
}

/// `log N(v; 0, I)` summed over the entries of `v`.
pub(crate) fn standard_normal_log_pdf(tape: &mut Tape, v: Var) -> Var {
    let zero = tape.constant(vec![0.0]);
    tape.gaussian_log_pdf(v, zero, zero)
}
