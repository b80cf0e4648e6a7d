//! Held-out evaluation of per-datapoint bounds and importance-weight
//! diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaSetting;
use crate::error::{Error, Result};
use crate::estimator::{mc_vr_estimate, WeightSet};
use crate::gradient::{log_weights, normalize_weights, NoiseDraw};
use crate::models::{Dataset, JointModel, JointObjective};
use crate::numeric::{logsumexp, mean_and_stderr};
use crate::variational::Variational;

/// Which bounds to estimate and against which reference `L̂_{0,K_ref}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub alphas: Vec<AlphaSetting>,
    pub ks: Vec<usize>,
    pub k_ref: usize,
    pub repeats: usize,
    pub seed: u64,
}

/// Mean and standard error (over datapoints) of one `(α, K)` cell and of its
/// gap to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub alpha: AlphaSetting,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub gap_mean: f64,
    pub gap_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub k_ref: usize,
    pub reference_mean: f64,
    pub reference_stderr: f64,
    /// Repeat-averaged `L̂_{0,K_ref}` per datapoint.
    pub reference_per_point: Vec<f64>,
    /// Repeat-averaged gap per datapoint, one vector per row.
    gaps_per_point: Vec<Vec<f64>>,
}

impl EvalTable {
    pub fn row(&self, alpha: f64, k: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.alpha.value() == alpha && r.k == k)
    }

    fn index(&self, alpha: f64, k: usize) -> Result<usize> {
        self.rows
            .iter()
            .position(|r| r.alpha.value() == alpha && r.k == k)
            .ok_or_else(|| Error::InvalidConfig(format!("no evaluation cell alpha = {alpha}, K = {k}")))
    }

    /// Mean and standard error over datapoints of `gap(a) − gap(b)`.
    pub fn paired_gap_difference(&self, a: (f64, usize), b: (f64, usize)) -> Result<(f64, f64)> {
        let (ia, ib) = (self.index(a.0, a.1)?, self.index(b.0, b.1)?);
        let diff: Vec<f64> = self.gaps_per_point[ia]
            .iter()
            .zip(&self.gaps_per_point[ib])
            .map(|(x, y)| x - y)
            .collect();
        Ok(mean_and_stderr(&diff))
    }

    pub fn to_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn noise_index(point: usize, repeats: usize, repeat: usize) -> u64 {
    ((point as u64) * repeats as u64 + repeat as u64) << 24
}

/// Per-datapoint bounds `L̂_{α,K}` and gaps `L̂_{α,K} − L̂_{0,K_ref}`.
///
/// For each datapoint and repeat, `max(K, K_ref)` samples are drawn once and
/// every estimate uses a prefix of them, so the gap at `(0, K_ref)` is
/// exactly zero.
pub fn evaluate<M: JointModel + ?Sized, V: Variational + ?Sized>(
    model: &M,
    variational: &V,
    params: &[f64],
    data: &Dataset,
    spec: &EvalSpec,
) -> Result<EvalTable> {
    if spec.repeats == 0 || spec.k_ref == 0 || spec.ks.contains(&0) {
        return Err(Error::InvalidConfig("evaluation needs repeats >= 1 and K >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidDataset("no rows to evaluate".into()));
    }
    let k_max = spec.ks.iter().copied().max().unwrap_or(0).max(spec.k_ref);
    if k_max >= 1 << 24 {
        return Err(Error::InvalidConfig(format!("K = {k_max} is too large")));
    }
    let dim = variational.latent_dim();
    let cells: Vec<(AlphaSetting, usize)> = spec
        .ks
        .iter()
        .flat_map(|&k| spec.alphas.iter().map(move |&a| (a, k)))
        .collect();

    // per datapoint: (reference, values per cell), averaged over repeats
    let per_point: Vec<(f64, Vec<f64>)> = (0..data.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let objective = JointObjective::datapoint(model, variational, data, i);
            let mut reference = 0.0;
            let mut values = vec![0.0; cells.len()];
            for r in 0..spec.repeats {
                let noise = NoiseDraw::batch(spec.seed, noise_index(i, spec.repeats, r), k_max, dim);
                let w = log_weights(&objective, params, &noise)?;
                reference += mc_vr_estimate(&w.prefix(spec.k_ref)?, AlphaSetting::ZERO).value;
                for (slot, &(a, k)) in values.iter_mut().zip(&cells) {
                    *slot += mc_vr_estimate(&w.prefix(k)?, a).value;
                }
            }
            let n = spec.repeats as f64;
            Ok((reference / n, values.into_iter().map(|v| v / n).collect()))
        })
        .collect::<Result<_>>()?;

    let reference_per_point: Vec<f64> = per_point.iter().map(|(r, _)| *r).collect();
    let (reference_mean, reference_stderr) = mean_and_stderr(&reference_per_point);
    let mut rows = Vec::with_capacity(cells.len());
    let mut gaps_per_point = Vec::with_capacity(cells.len());
    for (c, &(alpha, k)) in cells.iter().enumerate() {
        let values: Vec<f64> = per_point.iter().map(|(_, v)| v[c]).collect();
        let gaps: Vec<f64> = per_point.iter().map(|(r, v)| v[c] - r).collect();
        let (mean, stderr) = mean_and_stderr(&values);
        let (gap_mean, gap_stderr) = mean_and_stderr(&gaps);
        rows.push(EvalRow {
            alpha,
            k,
            mean,
            stderr,
            gap_mean,
            gap_stderr,
        });
        gaps_per_point.push(gaps);
    }
    Ok(EvalTable {
        rows,
        k_ref: spec.k_ref,
        reference_mean,
        reference_stderr,
        reference_per_point,
        gaps_per_point,
    })
}

/// Concentration of the normalized (α = 0) importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagnostics {
    /// `log R`, `R = w_max / (1 − w_max)`; `+inf` when a single weight
    /// carries all the mass.
    pub log_ratio: f64,
    /// Normalized weights in descending order.
    pub sorted: Vec<f64>,
}

impl WeightDiagnostics {
    pub fn max_weight(&self) -> f64 {
        self.sorted[0]
    }
}

pub fn weight_diagnostics(w: &WeightSet) -> WeightDiagnostics {
    let lw = w.log_weights();
    let mut sorted = normalize_weights(w, AlphaSetting::ZERO).into_inner();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let j = crate::numeric::argmax(lw);
    let others: Vec<f64> = lw
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &v)| v)
        .collect();
    // log(w_max / Σ_{k≠max} w_k) stays finite when w_max is within
    // rounding of 1
    let log_ratio = lw[j] - logsumexp(&others);
    WeightDiagnostics { log_ratio, sorted }
}
