//! Variational Rényi bounds: the K-sample Monte Carlo estimator and the
//! exact bound for Bayesian linear regression.
//!
//! For log importance weights `log w_k = log p(θ_k, D) - log q(θ_k)` with
//! `θ_k ~ q`, the estimator is
//!
//! ```text
//! L̂_{α,K} = 1/(1-α) · log( (1/K) Σ_k w_k^{1-α} )
//! ```
//!
//! with the limits `mean(log w)` (α = 1), `max(log w)` (α = -∞) and
//! `min(log w)` (α = +∞).

use std::fmt;

use crate::alpha::{AlphaKind, AlphaSetting};
use crate::divergence::renyi_gaussian;
use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;
use crate::models::BLRModel;
use crate::numeric::logsumexp;

/// K log importance weights. Entries are finite or `-inf`, at least one finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    log_w: Vec<f64>,
}

impl WeightSet {
    pub fn new(log_w: Vec<f64>) -> Result<Self> {
        if log_w.is_empty() {
            return Err(Error::EmptyWeights);
        }
        for (index, &value) in log_w.iter().enumerate() {
            if value.is_nan() || value == f64::INFINITY {
                return Err(Error::InvalidLogWeight { index, value });
            }
        }
        if log_w.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::AllWeightsZero);
        }
        Ok(Self { log_w })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    pub fn k(&self) -> usize {
        self.log_w.len()
    }

    /// The first `k` weights (used to evaluate several K on shared draws).
    pub fn prefix(&self, k: usize) -> Result<Self> {
        Self::new(self.log_w[..k.min(self.log_w.len())].to_vec())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.log_w
    }
}

/// Number of Monte Carlo samples behind a bound, or an exact evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleCount {
    Exact,
    Mc(usize),
}

impl fmt::Display for SampleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleCount::Exact => f.write_str("exact"),
            SampleCount::Mc(k) => write!(f, "{k}"),
        }
    }
}

/// A VR bound value `L_α` (exact) or `L̂_{α,K}` (Monte Carlo).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub alpha: AlphaSetting,
    pub samples: SampleCount,
    /// Set when a zero-weight sample dominates the estimate (value is `-inf`).
    pub degenerate: bool,
}

/// Monte Carlo VR bound `L̂_{α,K}` from a weight set, computed in log domain.
///
/// A zero-weight sample (`log w = -inf`) drops out of the sum when α < 1. When
/// α > 1 it contributes `0^{1-α} = +∞`, so the estimate is `-inf` and flagged
/// as degenerate, matching the α = +∞ branch where `min(log w) = -inf`.
pub fn mc_vr_estimate(w: &WeightSet, alpha: AlphaSetting) -> BoundValue {
    let lw = w.log_weights();
    let k = lw.len();
    let has_zero = lw.contains(&f64::NEG_INFINITY);
    let (value, degenerate) = match alpha.kind() {
        AlphaKind::NegInf => (lw.iter().copied().fold(f64::NEG_INFINITY, f64::max), false),
        AlphaKind::PosInf => {
            let m = lw.iter().copied().fold(f64::INFINITY, f64::min);
            (m, has_zero)
        }
        AlphaKind::One => {
            if has_zero {
                (f64::NEG_INFINITY, true)
            } else {
                (lw.iter().sum::<f64>() / k as f64, false)
            }
        }
        AlphaKind::Finite(a) => {
            if a > 1.0 && has_zero {
                (f64::NEG_INFINITY, true)
            } else {
                let scaled: Vec<f64> = lw.iter().map(|&v| (1.0 - a) * v).collect();
                ((logsumexp(&scaled) - (k as f64).ln()) / (1.0 - a), false)
            }
        }
    };
    BoundValue {
        value,
        alpha,
        samples: SampleCount::Mc(k),
        degenerate,
    }
}

/// Exact `L_α(q; D) = log p(D) - D_α[q ‖ p(θ|D)]` for Bayesian linear regression.
pub fn exact_vr_bound_blr(model: &BLRModel, q: &GaussianDist, alpha: f64) -> Result<BoundValue> {
    let alpha = AlphaSetting::new(alpha)?;
    let exact = model.exact_posterior()?;
    let d = renyi_gaussian(q, &exact.posterior, alpha)?;
    Ok(BoundValue {
        value: exact.log_evidence - d,
        alpha,
        samples: SampleCount::Exact,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(v: &[f64]) -> WeightSet {
        WeightSet::new(v.to_vec()).unwrap()
    }

    fn all_alphas() -> Vec<AlphaSetting> {
        [f64::NEG_INFINITY, -2.0, 0.0, 0.5, 1.0, 2.0, f64::INFINITY]
            .iter()
            .map(|&a| AlphaSetting::of(a))
            .collect()
    }

    #[test]
    fn weight_set_validation() {
        assert!(matches!(WeightSet::new(vec![]), Err(Error::EmptyWeights)));
        assert!(matches!(
            WeightSet::new(vec![f64::NEG_INFINITY; 3]),
            Err(Error::AllWeightsZero)
        ));
        assert!(matches!(
            WeightSet::new(vec![0.0, f64::NAN]),
            Err(Error::InvalidLogWeight { index: 1, .. })
        ));
        assert!(WeightSet::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(WeightSet::new(vec![f64::NEG_INFINITY, 1.0]).is_ok());
    }

    #[test]
    fn single_sample_collapses_for_every_alpha() {
        for a in all_alphas() {
            let b = mc_vr_estimate(&ws(&[-3.25]), a);
            assert_eq!(b.value, -3.25, "alpha {a}");
            assert_eq!(b.samples, SampleCount::Mc(1));
        }
    }

    #[test]
    fn equal_zero_weights_give_zero() {
        for a in all_alphas() {
            assert!(mc_vr_estimate(&ws(&[0.0, 0.0, 0.0]), a).value.abs() < 1e-15);
        }
    }

    #[test]
    fn worked_values() {
        let w = ws(&[1f64.ln(), 3f64.ln()]);
        let iwae = mc_vr_estimate(&w, AlphaSetting::ZERO).value;
        assert!((iwae - 2f64.ln()).abs() < 1e-15);
        assert_eq!(mc_vr_estimate(&w, AlphaSetting::NEG_INF).value, 3f64.ln());
        assert_eq!(mc_vr_estimate(&w, AlphaSetting::POS_INF).value, 0.0);
        let elbo = mc_vr_estimate(&w, AlphaSetting::ONE).value;
        assert!((elbo - 0.5 * 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_sample_handling() {
        let w = ws(&[f64::NEG_INFINITY, 0.0]);
        let iwae = mc_vr_estimate(&w, AlphaSetting::ZERO);
        assert!((iwae.value - 0.5f64.ln()).abs() < 1e-15);
        assert!(!iwae.degenerate);
        let worst = mc_vr_estimate(&w, AlphaSetting::POS_INF);
        assert_eq!(worst.value, f64::NEG_INFINITY);
        assert!(worst.degenerate);
        let chi = mc_vr_estimate(&w, AlphaSetting::of(2.0));
        assert_eq!(chi.value, f64::NEG_INFINITY);
        assert!(chi.degenerate);
        assert_eq!(mc_vr_estimate(&w, AlphaSetting::NEG_INF).value, 0.0);
    }

    #[test]
    fn near_one_uses_mean_branch() {
        let w = ws(&[0.1, 2.0, -1.0]);
        let exact_one = mc_vr_estimate(&w, AlphaSetting::ONE).value;
        let near = mc_vr_estimate(&w, AlphaSetting::of(1.0 + 1e-12)).value;
        assert_eq!(exact_one, near);
        // continuity across the branch boundary
        let off = mc_vr_estimate(&w, AlphaSetting::of(1.0 + 1e-6)).value;
        assert!((off - exact_one).abs() < 1e-5);
    }
}
