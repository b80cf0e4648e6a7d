//! Finite-sample behaviour of the Monte Carlo VR estimator.
//!
//! Draws θ ~ q, forms `log w = log p(θ) − log q(θ)` against a normalized
//! target p, and averages `L̂_{α,K}` over repeats. Because p is normalized
//! the exact bound is `L_α = −D_α[q ‖ p]`.
//!
//! Repeats share noise across α: the draws for a given `(K, repeat)` come
//! from their own ChaCha8 stream, so every α sees identical weight sets and
//! differences between rows reflect α alone.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaSetting;
use crate::divergence::{quadrature_oracle, renyi_gaussian, GridSpec, MAX_GRID_STEP};
use crate::error::{Error, Result};
use crate::estimator::{mc_vr_estimate, WeightSet};
use crate::gaussian::GaussianDist;
use crate::numeric::mean_and_stderr;

/// One `(α, K)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub alpha: AlphaSetting,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
}

impl BiasTable {
    pub fn get(&self, alpha: f64, k: usize) -> Option<&BiasRow> {
        self.rows.iter().find(|r| r.alpha.value() == alpha && r.k == k)
    }

    /// CSV with columns `alpha, K, mean, stderr, exact`.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `L_α = −D_α[q ‖ p]`, by quadrature where available (d ≤ 2, finite α)
/// and in closed form otherwise.
pub fn exact_bound(p: &GaussianDist, q: &GaussianDist, alpha: AlphaSetting) -> Result<f64> {
    if q.dim() <= 2 && alpha.is_finite() {
        let grid = GridSpec::auto(q, p, alpha.value(), MAX_GRID_STEP);
        if let Ok(d) = quadrature_oracle(q, p, alpha.value(), &grid) {
            if d.is_finite() {
                return Ok(-d);
            }
        }
    }
    Ok(-renyi_gaussian(q, p, alpha)?)
}

/// Stream index of the draws for `(K, repeat)`.
fn stream_id(k: usize, repeat: usize) -> u64 {
    ((k as u64) << 32) | repeat as u64
}

/// The `repeats` weight sets used for sample size `k`.
pub fn simulated_weights(p: &GaussianDist, q: &GaussianDist, k: usize, repeats: usize, seed: u64) -> Result<Vec<WeightSet>> {
    (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(k, r));
            let lw = (0..k)
                .map(|_| {
                    let theta = q.sample(&mut rng);
                    p.log_pdf(&theta) - q.log_pdf(&theta)
                })
                .collect();
            WeightSet::new(lw)
        })
        .collect()
}

pub fn bias_simulation(
    p: &GaussianDist,
    q: &GaussianDist,
    alphas: &[AlphaSetting],
    ks: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<BiasTable> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    if repeats < 2 {
        return Err(Error::InvalidConfig("bias simulation needs at least 2 repeats".into()));
    }
    if ks.contains(&0) {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let exact: Vec<f64> = alphas.iter().map(|&a| exact_bound(p, q, a)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(alphas.len() * ks.len());
    for &k in ks {
        let sets = simulated_weights(p, q, k, repeats, seed)?;
        for (&alpha, &ex) in alphas.iter().zip(&exact) {
            let values: Vec<f64> = sets.iter().map(|w| mc_vr_estimate(w, alpha).value).collect();
            let (mean, stderr) = mean_and_stderr(&values);
            rows.push(BiasRow {
                alpha,
                k,
                mean,
                stderr,
                exact: ex,
            });
        }
    }
    Ok(BiasTable { rows })
}
