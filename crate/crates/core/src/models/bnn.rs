//! Single-hidden-layer ReLU regression network with a Gaussian prior on all
//! weights and a Gaussian likelihood whose noise scale is learned.

use super::data::Dataset;
use super::{standard_normal_log_pdf, JointModel};
use crate::gradient::NoiseDraw;
use crate::numeric::{logsumexp, normal_log_pdf};
use crate::tape::{Tape, Var};
use crate::variational::ReparamMap;

pub const DEFAULT_HIDDEN: usize = 50;

/// Latent θ = `[W₁ (H×D, row-major), b₁ (H), w₂ (H), b₂]`; the only
/// hyper-parameter is `log σ` of the observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BNNModel {
    pub input_dim: usize,
    pub hidden: usize,
}

/// Held-out predictive performance of a fitted `q(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveScore {
    /// Mean over test rows of `log (1/S) Σ_s p(y | x, θ_s)`.
    pub log_likelihood: f64,
    pub rmse: f64,
}

impl BNNModel {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        assert!(input_dim > 0 && hidden > 0, "network sizes must be positive");
        Self { input_dim, hidden }
    }

    /// Network output for concrete weights.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        let (d, h) = (self.input_dim, self.hidden);
        let (w1, rest) = theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut out = b2[0];
        for j in 0..h {
            let pre: f64 = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            out += w2[j] * pre.max(0.0);
        }
        out
    }

    fn record_output(&self, tape: &mut Tape, latent: Var, x: &[f64]) -> Var {
        let (d, h) = (self.input_dim, self.hidden);
        let w1 = tape.slice(latent, 0, h * d);
        let b1 = tape.slice(latent, h * d, h);
        let w2 = tape.slice(latent, h * d + h, h);
        let b2 = tape.slice(latent, h * d + 2 * h, 1);
        let xv = tape.constant(x.to_vec());
        let pre = tape.affine(w1, xv, b1, h, d);
        let act = tape.relu(pre);
        tape.affine(w2, act, b2, 1, h)
    }

    /// Predictive log-likelihood and RMSE with `samples` draws from `q`.
    pub fn predictive_score(
        &self,
        q: &ReparamMap,
        log_noise_sd: f64,
        data: &Dataset,
        samples: usize,
        seed: u64,
    ) -> PredictiveScore {
        let thetas: Vec<Vec<f64>> = NoiseDraw::batch(seed, 0, samples, self.latent_dim())
            .iter()
            .map(|n| q.apply(&n.eps))
            .collect();
        let sd = log_noise_sd.exp();
        let (mut ll, mut se) = (0.0, 0.0);
        for i in 0..data.len() {
            let y = data.target(i).expect("regression rows have targets");
            let preds: Vec<f64> = thetas.iter().map(|t| self.predict(t, data.row(i))).collect();
            let terms: Vec<f64> = preds.iter().map(|p| normal_log_pdf(y, *p, sd)).collect();
            ll += logsumexp(&terms) - (samples as f64).ln();
            let mean = preds.iter().sum::<f64>() / samples as f64;
            se += (mean - y).powi(2);
        }
        let n = data.len().max(1) as f64;
        PredictiveScore {
            log_likelihood: ll / n,
            rmse: (se / n).sqrt(),
        }
    }
}

impl JointModel for BNNModel {
    fn latent_dim(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }

    fn num_params(&self) -> usize {
        1
    }

    fn log_prior(&self, tape: &mut Tape, latent: Var, _params: Var) -> Var {
        standard_normal_log_pdf(tape, latent)
    }

    fn log_likelihood(&self, tape: &mut Tape, latent: Var, params: Var, data: &Dataset, batch: &[usize]) -> Var {
        let outs: Vec<Var> = batch.iter().map(|&i| self.record_output(tape, latent, data.row(i))).collect();
        let preds = tape.concat(&outs);
        let ys = tape.constant(batch.iter().map(|&i| data.target(i).expect("regression rows have targets")).collect());
        tape.gaussian_log_pdf(ys, preds, params)
    }
}
