//! Rényi α-divergences between Gaussians.
//!
//! [`renyi_gaussian`] evaluates `D_α[p‖q] = 1/(α-1) · log ∫ p^α q^{1-α}` in
//! closed form, with explicit branches for α ∈ {0, 1, ±∞}.
//! [`quadrature_oracle`] integrates the same definition on a fixed grid and
//! is the ground truth the closed form is tested against (dimension ≤ 2).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::alpha::{AlphaKind, AlphaSetting};
use crate::error::{Error, Result};
use crate::gaussian::{cholesky, symmetrize, GaussianDist};
use crate::numeric::{logsumexp, HALF_LN_2PI};

/// `D_α[p‖q]` for Gaussians.
///
/// Returns `+∞` (α > 1) or `-∞` (α < 0) when the α-mixture covariance
/// `αΣ_q + (1-α)Σ_p` is not positive definite, since the integral diverges.
pub fn renyi_gaussian(p: &GaussianDist, q: &GaussianDist, alpha: AlphaSetting) -> Result<f64> {
    check_same_dim(p, q)?;
    match alpha.kind() {
        AlphaKind::One => Ok(kl_gaussian(p, q)),
        AlphaKind::PosInf => Ok(log_max_ratio(p, q)),
        AlphaKind::NegInf => Ok(-log_max_ratio(q, p)),
        AlphaKind::Finite(0.0) => Ok(0.0),
        AlphaKind::Finite(a) => Ok(renyi_finite(p, q, a)),
    }
}

/// `KL[p‖q]` for Gaussians.
pub fn kl_gaussian(p: &GaussianDist, q: &GaussianDist) -> f64 {
    let d = p.dim() as f64;
    let lq = q.cholesky_factor();
    let diff = p.mean() - q.mean();
    let z = lq.solve_lower_triangular(&diff).expect("positive diagonal");
    // tr(Σ_q⁻¹ Σ_p) = ‖L_q⁻¹ L_p‖_F²
    let m = lq
        .solve_lower_triangular(p.cholesky_factor())
        .expect("positive diagonal");
    0.5 * (m.norm_squared() + z.norm_squared() - d + q.log_det_cov() - p.log_det_cov())
}

fn renyi_finite(p: &GaussianDist, q: &GaussianDist, a: f64) -> f64 {
    let mix = q.cov_matrix() * a + p.cov_matrix() * (1.0 - a);
    let Some(chol) = cholesky(&mix) else {
        return if a > 1.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    };
    let l = chol.l();
    let log_det_mix = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let diff = p.mean() - q.mean();
    let z = l.solve_lower_triangular(&diff).expect("positive diagonal");
    let quad = 0.5 * a * z.norm_squared();
    let logdet = log_det_mix - (1.0 - a) * p.log_det_cov() - a * q.log_det_cov();
    quad - logdet / (2.0 * (a - 1.0))
}

/// `log sup_θ p(θ)/q(θ)`; `+∞` when the ratio is unbounded.
fn log_max_ratio(p: &GaussianDist, q: &GaussianDist) -> f64 {
    let lp = p.precision();
    let lq = q.precision();
    let h = symmetrize(&lp - &lq);
    let b = &lp * p.mean() - &lq * q.mean();
    let c = -0.5 * p.mean().dot(&(&lp * p.mean())) + 0.5 * q.mean().dot(&(&lq * q.mean()))
        - 0.5 * p.log_det_cov()
        + 0.5 * q.log_det_cov();
    let scale = lp.amax().max(lq.amax());
    let tol = 1e-10 * scale;
    let eig = SymmetricEigen::new(h);
    let mut sup = c;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let proj = eig.eigenvectors.column(i).dot(&b);
        if lambda < -tol {
            return f64::INFINITY;
        }
        if lambda <= tol {
            if proj.abs() > 1e-8 * (1.0 + b.amax()) {
                return f64::INFINITY;
            }
            continue;
        }
        sup += 0.5 * proj * proj / lambda;
    }
    sup
}

fn check_same_dim(p: &GaussianDist, q: &GaussianDist) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Largest grid spacing the oracle accepts.
pub const MAX_GRID_STEP: f64 = 0.05;

/// Boundary log-integrand must sit this far below the peak.
const TRUNCATION_MARGIN: f64 = 20.0;

/// An axis-aligned box sampled with a uniform step on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: f64) -> Self {
        Self { lower, upper, step }
    }

    /// The same interval on every axis.
    pub fn square(dim: usize, lo: f64, hi: f64, step: f64) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim], step)
    }

    /// A box wide enough for the α-weighted integrand of `p` and `q`.
    ///
    /// The integrand `p^α q^{1-α}` is centred up to `(|α| + |1-α|)·|Δμ|` away
    /// from the means and may be wider than either density, so the box is
    /// padded generously; [`quadrature_oracle`] still rejects a box whose
    /// edges carry non-negligible integrand.
    pub fn auto(p: &GaussianDist, q: &GaussianDist, alpha: f64, step: f64) -> Self {
        let sp = p.variances().map(f64::sqrt);
        let sq = q.variances().map(f64::sqrt);
        let reach = alpha.abs() + (1.0 - alpha).abs();
        let mut lower = Vec::with_capacity(p.dim());
        let mut upper = Vec::with_capacity(p.dim());
        for i in 0..p.dim() {
            let (mp, mq) = (p.mean()[i], q.mean()[i]);
            let shift = reach * (mp - mq).abs();
            let pad = 20.0 * sp[i].max(sq[i]);
            lower.push(mp.min(mq) - shift - pad);
            upper.push(mp.max(mq) + shift + pad);
        }
        Self { lower, upper, step }
    }

    fn axes(&self) -> Vec<Axis> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| {
                let n = ((hi - lo) / self.step).ceil() as usize + 1;
                let h = (hi - lo) / (n - 1) as f64;
                Axis { lo, h, n }
            })
            .collect()
    }

    fn validate(&self, p: &GaussianDist, q: &GaussianDist) -> Result<()> {
        let d = p.dim();
        if d > 2 {
            return Err(Error::InvalidGrid(format!("dimension {d} > 2 is not supported")));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.lower.len(),
            });
        }
        if !(self.step > 0.0 && self.step <= MAX_GRID_STEP) {
            return Err(Error::InvalidGrid(format!(
                "step {} outside (0, {MAX_GRID_STEP}]",
                self.step
            )));
        }
        for g in [p, q] {
            let sd = g.variances().map(f64::sqrt);
            for i in 0..d {
                // the box must span at least 8 standard deviations around each mean
                let (m, s) = (g.mean()[i], sd[i]);
                if self.lower[i] > m - 4.0 * s || self.upper[i] < m + 4.0 * s {
                    return Err(Error::InvalidGrid(format!(
                        "axis {i} [{}, {}] does not cover mean {m} ± 4 sd ({s})",
                        self.lower[i], self.upper[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    h: f64,
    n: usize,
}

impl Axis {
    fn point(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    fn log_weight(&self, i: usize) -> f64 {
        let w = if i == 0 || i == self.n - 1 { 0.5 * self.h } else { self.h };
        w.ln()
    }

    fn is_edge(&self, i: usize) -> bool {
        i == 0 || i == self.n - 1
    }
}

/// Log density evaluator for d ≤ 2 that avoids per-point allocation.
struct SmallGaussian {
    mean: [f64; 2],
    prec: [[f64; 2]; 2],
    log_norm: f64,
    dim: usize,
}

impl SmallGaussian {
    fn new(g: &GaussianDist) -> Self {
        let d = g.dim();
        let lambda: DMatrix<f64> = g.precision();
        let mut mean = [0.0; 2];
        let mut prec = [[0.0; 2]; 2];
        for i in 0..d {
            mean[i] = g.mean()[i];
            for j in 0..d {
                prec[i][j] = lambda[(i, j)];
            }
        }
        Self {
            mean,
            prec,
            log_norm: -0.5 * g.log_det_cov() - HALF_LN_2PI * d as f64,
            dim: d,
        }
    }

    fn log_pdf(&self, x: [f64; 2]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                quad += (x[i] - self.mean[i]) * self.prec[i][j] * (x[j] - self.mean[j]);
            }
        }
        self.log_norm - 0.5 * quad
    }
}

/// Trapezoidal-rule evaluation of `D_α[p‖q]` on a fixed grid (d ≤ 2).
///
/// α = 1 integrates `p log(p/q)`; α = 0 returns `-log ∫_{p>0} q`.
pub fn quadrature_oracle(p: &GaussianDist, q: &GaussianDist, alpha: f64, grid: &GridSpec) -> Result<f64> {
    check_same_dim(p, q)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidAlpha(format!("quadrature needs a finite alpha, got {alpha}")));
    }
    grid.validate(p, q)?;
    let gp = SmallGaussian::new(p);
    let gq = SmallGaussian::new(q);
    let axes = grid.axes();
    let is_one = (alpha - 1.0).abs() <= crate::alpha::ALPHA_ONE_TOLERANCE;

    // log of the quantity whose tails must be negligible at the box edge
    let mass = |lp: f64, lq: f64| -> f64 {
        if is_one {
            lp
        } else if alpha == 0.0 {
            lq
        } else {
            alpha * lp + (1.0 - alpha) * lq
        }
    };

    let mut log_terms = Vec::new();
    let mut kl_sum = 0.0;
    let mut peak = f64::NEG_INFINITY;
    let mut edge_peak = f64::NEG_INFINITY;
    let mut visit = |x: [f64; 2], log_w: f64, edge: bool| {
        let lp = gp.log_pdf(x);
        let lq = gq.log_pdf(x);
        let m = mass(lp, lq);
        peak = peak.max(m);
        if edge {
            edge_peak = edge_peak.max(m);
        }
        if is_one {
            kl_sum += (log_w + lp).exp() * (lp - lq);
        } else if alpha == 0.0 {
            if lp > f64::NEG_INFINITY {
                log_terms.push(log_w + lq);
            }
        } else {
            log_terms.push(log_w + m);
        }
    };

    match axes.as_slice() {
        [ax] => {
            for i in 0..ax.n {
                visit([ax.point(i), 0.0], ax.log_weight(i), ax.is_edge(i));
            }
        }
        [ax, ay] => {
            for i in 0..ax.n {
                let x = ax.point(i);
                let wx = ax.log_weight(i);
                for j in 0..ay.n {
                    visit([x, ay.point(j)], wx + ay.log_weight(j), ax.is_edge(i) || ay.is_edge(j));
                }
            }
        }
        _ => unreachable!("validated dimension"),
    }

    if edge_peak > peak - TRUNCATION_MARGIN {
        return Err(Error::InvalidGrid(format!(
            "integrand not negligible at the box edge (edge {edge_peak:.3}, peak {peak:.3})"
        )));
    }
    if is_one {
        Ok(kl_sum)
    } else if alpha == 0.0 {
        Ok(-logsumexp(&log_terms))
    } else {
        Ok(logsumexp(&log_terms) / (alpha - 1.0))
    }
}

/// Convenience: `D_α` over a list of α values.
pub fn renyi_sweep(p: &GaussianDist, q: &GaussianDist, alphas: &[AlphaSetting]) -> Result<Vec<(AlphaSetting, f64)>> {
    alphas
        .iter()
        .map(|&a| renyi_gaussian(p, q, a).map(|v| (a, v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(mean: Vec<f64>) -> GaussianDist {
        let d = mean.len();
        GaussianDist::diagonal(mean, vec![1.0; d]).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = GaussianDist::full(
            vec![0.3, -1.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 0.7]),
        )
        .unwrap();
        for a in [-3.0, 0.0, 0.7, 1.0, 2.0] {
            let v = renyi_gaussian(&p, &p, AlphaSetting::of(a)).unwrap();
            assert!(v.abs() < 1e-12, "alpha {a}: {v}");
        }
        assert!(renyi_gaussian(&p, &p, AlphaSetting::POS_INF).unwrap().abs() < 1e-9);
    }

    #[test]
    fn shifted_unit_gaussians() {
        let p = unit(vec![0.0, 0.0]);
        let q = unit(vec![1.0, 1.0]);
        let half = renyi_gaussian(&p, &q, AlphaSetting::of(0.5)).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let kl = renyi_gaussian(&p, &q, AlphaSetting::ONE).unwrap();
        assert!((kl - 1.0).abs() < 1e-12);
        let two = renyi_gaussian(&p, &q, AlphaSetting::of(2.0)).unwrap();
        assert!((two - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pos_inf_unbounded_for_equal_variance_shift() {
        let p = unit(vec![0.0]);
        let q = unit(vec![1.0]);
        assert_eq!(renyi_gaussian(&p, &q, AlphaSetting::POS_INF).unwrap(), f64::INFINITY);
        assert_eq!(renyi_gaussian(&p, &q, AlphaSetting::NEG_INF).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn pos_inf_bounded_when_q_wider() {
        // sup log N(x;0,1)/N(x;0,4) is at x = 0: log 2
        let p = unit(vec![0.0]);
        let q = GaussianDist::diagonal(vec![0.0], vec![4.0]).unwrap();
        let v = renyi_gaussian(&p, &q, AlphaSetting::POS_INF).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        // skew symmetry limit
        let w = renyi_gaussian(&q, &p, AlphaSetting::NEG_INF).unwrap();
        assert!((w + v).abs() < 1e-12);
    }

    #[test]
    fn divergent_mixture_is_signed_infinity() {
        let p = unit(vec![0.0]);
        let q = GaussianDist::diagonal(vec![0.0], vec![0.25]).unwrap();
        // α = 5: 5·0.25 - 4·1 < 0
        assert_eq!(renyi_gaussian(&p, &q, AlphaSetting::of(5.0)).unwrap(), f64::INFINITY);
        // α = -5: -5·1 + 6·0.25 < 0 with roles swapped
        assert_eq!(renyi_gaussian(&q, &p, AlphaSetting::of(-5.0)).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = unit(vec![0.0]);
        let q = unit(vec![0.0, 0.0]);
        assert!(matches!(
            renyi_gaussian(&p, &q, AlphaSetting::of(0.5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn oracle_identical_is_zero() {
        let p = unit(vec![0.0]);
        let g = GridSpec::square(1, -12.0, 12.0, 0.01);
        let v = quadrature_oracle(&p, &p, 2.0, &g).unwrap();
        assert!(v.abs() < 1e-8);
    }

    #[test]
    fn oracle_unit_variance_shift_closed_check() {
        // for unit variances the integral gives α‖Δμ‖²/2
        let p = unit(vec![0.0]);
        let q = unit(vec![1.0]);
        let g = GridSpec::square(1, -12.0, 13.0, 0.01);
        let v = quadrature_oracle(&p, &q, 0.5, &g).unwrap();
        assert!((v - 0.25).abs() < 1e-10, "{v}");
    }

    #[test]
    fn oracle_two_d_values() {
        let p = unit(vec![0.0, 0.0]);
        let q = unit(vec![1.0, 1.0]);
        let g = GridSpec::square(2, -8.0, 8.0, 0.01);
        let half = quadrature_oracle(&p, &q, 0.5, &g).unwrap();
        assert!((half - 0.5).abs() < 1e-6, "{half}");
        let kl = quadrature_oracle(&p, &q, 1.0, &g).unwrap();
        assert!((kl - 1.0).abs() < 1e-6, "{kl}");
        let two = quadrature_oracle(&p, &q, 2.0, &GridSpec::square(2, -10.0, 8.0, 0.02)).unwrap();
        assert!((two - 2.0).abs() < 1e-6, "{two}");
    }

    #[test]
    fn oracle_rejects_bad_grids() {
        let p = unit(vec![0.0]);
        let q = unit(vec![1.0]);
        let coarse = GridSpec::square(1, -10.0, 10.0, 0.1);
        assert!(matches!(quadrature_oracle(&p, &q, 0.5, &coarse), Err(Error::InvalidGrid(_))));
        let narrow = GridSpec::square(1, -2.0, 2.0, 0.01);
        assert!(matches!(quadrature_oracle(&p, &q, 0.5, &narrow), Err(Error::InvalidGrid(_))));
        let three = GaussianDist::standard(3);
        let g3 = GridSpec::square(3, -8.0, 8.0, 0.05);
        assert!(matches!(quadrature_oracle(&three, &three, 0.5, &g3), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn oracle_detects_truncated_integrand() {
        // α = 5 moves the integrand centre to -4 for this pair
        let p = unit(vec![0.0]);
        let q = unit(vec![1.0]);
        let g = GridSpec::square(1, -5.0, 6.0, 0.01);
        assert!(matches!(quadrature_oracle(&p, &q, 5.0, &g), Err(Error::InvalidGrid(_))));
        let auto = GridSpec::auto(&p, &q, 5.0, 0.01);
        let v = quadrature_oracle(&p, &q, 5.0, &auto).unwrap();
        assert!((v - 2.5).abs() < 1e-8, "{v}");
    }

    #[test]
    fn sweep_is_total_over_special_values() {
        let p = unit(vec![0.0]);
        let q = GaussianDist::diagonal(vec![0.5], vec![2.0]).unwrap();
        let alphas = [
            AlphaSetting::NEG_INF,
            AlphaSetting::of(-1.0),
            AlphaSetting::ZERO,
            AlphaSetting::ONE,
            AlphaSetting::POS_INF,
        ];
        let out = renyi_sweep(&p, &q, &alphas).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|(_, v)| !v.is_nan()));
    }
}
