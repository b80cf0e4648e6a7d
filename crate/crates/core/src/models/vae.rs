//! One-stochastic-layer variational auto-encoder: `h ~ N(0, I)`,
//! `x | h ~ p(x | decoder(h))`, with an amortized Gaussian `q(h | x)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::{standard_normal_log_pdf, JointModel};
use crate::nn::{Activation, Mlp};
use crate::tape::{squash, Tape, Var};
use crate::variational::Amortized;

/// Observation model of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VAELikelihood {
    /// Bernoulli with probabilities `clamp(sigmoid(logits), 1e-7, 1 − 1e-7)`.
    Bernoulli,
    /// Gaussian around the decoder output with a fixed log standard deviation.
    Gaussian { log_sd: f64 },
}

/// Decoder `L → H (tanh) → D`; the hyper-parameters ϑ are its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VAEModel {
    pub decoder: Mlp,
    pub likelihood: VAELikelihood,
}

impl VAEModel {
    pub fn new(data_dim: usize, latent_dim: usize, hidden: usize, likelihood: VAELikelihood) -> Self {
        Self {
            decoder: Mlp::new(vec![latent_dim, hidden, data_dim], Activation::Tanh),
            likelihood,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Matching encoder `D → H (tanh) → 2L` producing `[μ; ρ]` of `q(h | x)`.
    pub fn encoder(&self) -> Amortized {
        let hidden = self.decoder.sizes[1];
        Amortized::new(Mlp::new(
            vec![self.data_dim(), hidden, 2 * self.latent_dim()],
            Activation::Tanh,
        ))
    }

    /// Initial `[φ | ϑ]`: encoder weights followed by decoder weights.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.encoder().encoder.init(rng);
        p.extend(self.decoder.init(rng));
        p
    }

    /// Bernoulli means (or Gaussian means) for a latent code.
    pub fn decode(&self, decoder_params: &[f64], h: &[f64]) -> Vec<f64> {
        let out = self.decoder.forward(decoder_params, h);
        match self.likelihood {
            VAELikelihood::Bernoulli => out.into_iter().map(squash).collect(),
            VAELikelihood::Gaussian { .. } => out,
        }
    }
}

impl JointModel for VAEModel {
    fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    fn num_params(&self) -> usize {
        self.decoder.num_params()
    }

    fn log_prior(&self, tape: &mut Tape, latent: Var, _params: Var) -> Var {
        standard_normal_log_pdf(tape, latent)
    }

    fn log_likelihood(&self, tape: &mut Tape, latent: Var, params: Var, data: &Dataset, batch: &[usize]) -> Var {
        let out = self.decoder.record(tape, params, 0, latent);
        let terms: Vec<Var> = batch
            .iter()
            .map(|&i| match self.likelihood {
                VAELikelihood::Bernoulli => tape.bernoulli_log_pmf(out, data.row(i)),
                VAELikelihood::Gaussian { log_sd } => {
                    let x = tape.constant(data.row(i).to_vec());
                    let ls = tape.constant(vec![log_sd]);
                    tape.gaussian_log_pdf(x, out, ls)
                }
            })
            .collect();
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        total
    }
}
