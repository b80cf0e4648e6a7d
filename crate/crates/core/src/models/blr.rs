//! Bayesian linear regression `y = Xθ + N(0, σ²)`, `θ ~ N(0, I)`.
//!
//! The posterior is Gaussian, so every VR bound is available in closed form:
//! `L_α(q) = log p(D|σ) − D_α[q ‖ p(θ|D)]`. That makes this model the
//! reference for deterministic checks: mean-field fits are obtained by
//! gradient descent with backtracking on the exact divergence rather than by
//! stochastic optimization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::{standard_normal_log_pdf, JointModel};
use crate::alpha::{AlphaKind, AlphaSetting};
use crate::error::{Error, Result};
use crate::estimator::exact_vr_bound_blr;
use crate::gaussian::{cholesky, symmetrize, GaussianDist};
use crate::numeric::{normal_log_pdf, HALF_LN_2PI};
use crate::tape::{Tape, Var};

/// Design matrix and targets (held as a [`Dataset`]) plus the noise scale σ.
#[derive(Debug, Clone, PartialEq)]
pub struct BLRModel {
    data: Dataset,
    sigma: f64,
}

/// Exact posterior `N(Λ⁻¹Xᵀy/σ², Λ⁻¹)`, `Λ = XᵀX/σ² + I`, and `log p(D|σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrPosterior {
    pub posterior: GaussianDist,
    pub log_evidence: f64,
}

/// One point of the hyper-parameter curve: `log p(D|σ)` and the fitted
/// mean-field bound for each requested α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    pub log_evidence: f64,
    pub bounds: Vec<f64>,
}

/// Iteration cap for [`BLRModel::mean_field_fit`].
pub const FIT_MAX_ITERS: usize = 10_000;
/// Gradient-norm target for [`BLRModel::mean_field_fit`].
pub const FIT_TOL: f64 = 1e-10;
/// Below this gradient norm a failed line search is taken as round-off.
const FIT_ROUNDOFF_TOL: f64 = 1e-6;

impl BLRModel {
    pub fn new(data: Dataset, sigma: f64) -> Result<Self> {
        if data.targets().is_none() {
            return Err(Error::InvalidDataset("regression needs a target column".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise scale {sigma} must be positive")));
        }
        Ok(Self { data, sigma })
    }

    pub fn from_rows(features: Vec<f64>, d: usize, targets: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::new(Dataset::new(features, d, Some(targets))?, sigma)
    }

    /// Twenty points with two strongly correlated features, so the posterior
    /// over θ is a tilted ellipse.
    pub fn synthetic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, theta, sigma) = (20, [1.0, -0.5], 0.8);
        let mut features = Vec::with_capacity(2 * n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let b = 0.8 * a + 0.6 * z;
            let e: f64 = rng.sample(StandardNormal);
            features.extend([a, b]);
            targets.push(theta[0] * a + theta[1] * b + sigma * e);
        }
        Self::from_rows(features, 2, targets, sigma).expect("synthetic instance is valid")
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.data.clone(), sigma)
    }

    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.data.len(), self.dim(), self.data.features())
    }

    fn targets(&self) -> DVector<f64> {
        DVector::from_column_slice(self.data.targets().expect("checked in new"))
    }

    /// `log p₀(θ) + Σ_n log N(y_n; x_nᵀθ, σ²)`.
    pub fn log_joint_value(&self, theta: &[f64]) -> f64 {
        let prior: f64 = theta.iter().map(|t| normal_log_pdf(*t, 0.0, 1.0)).sum();
        let y = self.data.targets().expect("checked in new");
        let lik: f64 = (0..self.data.len())
            .map(|i| {
                let pred: f64 = self.data.row(i).iter().zip(theta).map(|(x, t)| x * t).sum();
                normal_log_pdf(y[i], pred, self.sigma)
            })
            .sum();
        prior + lik
    }

    pub fn exact_posterior(&self) -> Result<BlrPosterior> {
        let x = self.design();
        let s2 = self.sigma * self.sigma;
        let d = self.dim();
        let precision = symmetrize(x.transpose() * &x / s2 + DMatrix::identity(d, d));
        let chol = cholesky(&precision)
            .ok_or_else(|| Error::NotPositiveDefinite("posterior precision is singular".into()))?;
        let mean = chol.solve(&(x.transpose() * self.targets() / s2));
        let cov = symmetrize(chol.inverse());
        let posterior = GaussianDist::full(mean.iter().copied().collect(), cov)?;
        // Bayes' rule at the posterior mean: p(D) = p₀(θ) p(D|θ) / p(θ|D)
        let log_post_at_mean = -(d as f64) * HALF_LN_2PI - 0.5 * posterior.log_det_cov();
        let log_evidence = self.log_joint_value(mean.as_slice()) - log_post_at_mean;
        Ok(BlrPosterior {
            posterior,
            log_evidence,
        })
    }

    pub fn log_evidence(&self) -> Result<f64> {
        Ok(self.exact_posterior()?.log_evidence)
    }

    /// Diagonal Gaussian minimizing `D_α[q ‖ p(θ|D)]`, i.e. maximizing the
    /// exact bound `L_α`.
    ///
    /// At α = 0 the exact bound is flat (it equals `log p(D)` for every
    /// full-support q), so the fit follows the α → 0 limit of the minimizer,
    /// `argmin KL(p(θ|D) ‖ q)`, whose solution is the product of the exact
    /// marginals. For α < 0 the bound is unbounded above over diagonal
    /// Gaussians, which is rejected.
    pub fn mean_field_fit(&self, alpha: AlphaSetting) -> Result<GaussianDist> {
        let exact = self.exact_posterior()?.posterior;
        let target = FitTarget::new(&exact);
        let objective = match alpha.kind() {
            AlphaKind::NegInf => return Err(unbounded(alpha)),
            AlphaKind::Finite(a) if a < 0.0 => return Err(unbounded(alpha)),
            AlphaKind::Finite(0.0) => FitObjective::InclusiveKl,
            AlphaKind::Finite(a) => FitObjective::Renyi(a),
            AlphaKind::One => FitObjective::ExclusiveKl,
            AlphaKind::PosInf => FitObjective::MaxRatio,
        };
        let d = self.dim();
        let v0 = match objective {
            FitObjective::Renyi(a) if a > 1.0 => 0.5 * target.min_eig,
            FitObjective::MaxRatio => 0.5 * target.min_eig,
            _ => 1.0,
        };
        let mut x = vec![0.0; d];
        x.extend(std::iter::repeat_n(0.5 * v0.ln(), d));
        // the max-ratio optimum sits on the edge of the region where the
        // supremum is finite, so its gradient need not vanish there
        let on_boundary = matches!(objective, FitObjective::MaxRatio);
        let x = descend(|x| target.eval(objective, x), x, on_boundary)?;
        GaussianDist::diagonal(x[..d].to_vec(), x[d..].iter().map(|r| (2.0 * r).exp()).collect())
    }

    /// `log p(D|σ)` and the fitted mean-field bound per α, for each σ.
    pub fn sigma_curve(&self, sigmas: &[f64], alphas: &[AlphaSetting]) -> Result<Vec<SigmaPoint>> {
        sigmas
            .iter()
            .map(|&sigma| {
                let m = self.with_sigma(sigma)?;
                let log_evidence = m.log_evidence()?;
                let bounds = alphas
                    .iter()
                    .map(|&a| {
                        let q = m.mean_field_fit(a)?;
                        Ok(exact_vr_bound_blr(&m, &q, a.value())?.value)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(SigmaPoint {
                    sigma,
                    log_evidence,
                    bounds,
                })
            })
            .collect()
    }
}

/// `n` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

fn unbounded(alpha: AlphaSetting) -> Error {
    Error::InvalidAlpha(format!(
        "mean-field fit needs alpha >= 0 or +inf; at alpha = {alpha} the bound is unbounded over diagonal Gaussians"
    ))
}

#[derive(Debug, Clone, Copy)]
enum FitObjective {
    /// `KL(p(θ|D) ‖ q)`.
    InclusiveKl,
    /// `KL(q ‖ p(θ|D))`.
    ExclusiveKl,
    Renyi(f64),
    /// `log sup q/p(θ|D)`.
    MaxRatio,
}

struct FitTarget {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det_cov: f64,
    min_eig: f64,
}

impl FitTarget {
    fn new(p: &GaussianDist) -> Self {
        let cov = p.cov_matrix();
        let min_eig = cov.clone().symmetric_eigenvalues().min();
        Self {
            mean: p.mean().clone(),
            precision: p.precision(),
            log_det_cov: p.log_det_cov(),
            cov,
            min_eig,
        }
    }

    /// Objective and gradient in `x = [m; ρ]`, `v = exp(2ρ)`. Infeasible
    /// points evaluate to `+inf`.
    fn eval(&self, obj: FitObjective, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.mean.len();
        let m = DVector::from_column_slice(&x[..d]);
        let v = DVector::from_iterator(d, x[d..].iter().map(|r| (2.0 * r).exp()));
        let delta = &m - &self.mean;
        let log_det_v: f64 = v.iter().map(|vi| vi.ln()).sum();
        let infeasible = (f64::INFINITY, vec![0.0; 2 * d]);
        let (f, gm, gv) = match obj {
            FitObjective::InclusiveKl => {
                let mut f = 0.5 * (log_det_v - self.log_det_cov - d as f64);
                let mut gm = DVector::zeros(d);
                let mut gv = DVector::zeros(d);
                for i in 0..d {
                    let second = self.cov[(i, i)] + delta[i] * delta[i];
                    f += 0.5 * second / v[i];
                    gm[i] = delta[i] / v[i];
                    gv[i] = 0.5 * (1.0 / v[i] - second / (v[i] * v[i]));
                }
                (f, gm, gv)
            }
            FitObjective::ExclusiveKl => {
                let lam_delta = &self.precision * &delta;
                let trace: f64 = (0..d).map(|i| self.precision[(i, i)] * v[i]).sum();
                let f = 0.5 * (trace + delta.dot(&lam_delta) - d as f64 + self.log_det_cov - log_det_v);
                let gv = DVector::from_iterator(d, (0..d).map(|i| 0.5 * (self.precision[(i, i)] - 1.0 / v[i])));
                (f, lam_delta, gv)
            }
            FitObjective::Renyi(a) => {
                let mix = symmetrize(&self.cov * a + DMatrix::from_diagonal(&v) * (1.0 - a));
                let Some(chol) = cholesky(&mix) else {
                    return infeasible;
                };
                let log_det_mix = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                let mix_inv = chol.inverse();
                let u = &mix_inv * &delta;
                let f = 0.5 * a * delta.dot(&u)
                    - (log_det_mix - (1.0 - a) * log_det_v - a * self.log_det_cov) / (2.0 * (a - 1.0));
                let gm = &u * a;
                let gv = DVector::from_iterator(
                    d,
                    (0..d).map(|i| -0.5 * a * (1.0 - a) * u[i] * u[i] + 0.5 * (mix_inv[(i, i)] - 1.0 / v[i])),
                );
                (f, gm, gv)
            }
            FitObjective::MaxRatio => {
                let v_inv = DVector::from_iterator(d, v.iter().map(|x| 1.0 / x));
                let h = symmetrize(DMatrix::from_diagonal(&v_inv) - &self.precision);
                let Some(chol) = cholesky(&h) else {
                    return infeasible;
                };
                // offset of the maximizer from m: H (t − m) = Λ (m − μ), which
                // avoids cancelling two large terms when v is small
                let r_q = chol.solve(&(&self.precision * &delta));
                let log_q: f64 = (0..d)
                    .map(|i| -0.5 * r_q[i] * r_q[i] / v[i] - 0.5 * v[i].ln() - HALF_LN_2PI)
                    .sum();
                let r = &r_q + &delta;
                let log_p = -(d as f64) * HALF_LN_2PI - 0.5 * self.log_det_cov - 0.5 * r.dot(&(&self.precision * &r));
                // envelope theorem: only the explicit dependence of log q on (m, v) at the maximizer
                let gm = DVector::from_iterator(d, (0..d).map(|i| r_q[i] / v[i]));
                let gv = DVector::from_iterator(
                    d,
                    (0..d).map(|i| 0.5 * (r_q[i] * r_q[i] / (v[i] * v[i]) - 1.0 / v[i])),
                );
                (log_q - log_p, gm, gv)
            }
        };
        if !f.is_finite() || gm.iter().chain(gv.iter()).any(|v| !v.is_finite()) {
            return infeasible;
        }
        let mut g: Vec<f64> = gm.iter().copied().collect();
        g.extend((0..d).map(|i| 2.0 * v[i] * gv[i]));
        (f, g)
    }
}

/// Quasi-Newton descent: BFGS directions with Armijo backtracking, falling
/// back to steepest descent whenever the direction is not a descent one.
/// With `boundary_optimum`, a line search that can no longer make progress
/// ends the run successfully.
fn descend<F: Fn(&[f64]) -> (f64, Vec<f64>)>(eval: F, x0: Vec<f64>, boundary_optimum: bool) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut f, g0) = eval(x.as_slice());
    if !f.is_finite() {
        return Err(Error::NonFiniteValue { coordinate: 0 });
    }
    let mut g = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    for iteration in 0..FIT_MAX_ITERS {
        let gnorm = g.norm();
        if gnorm < FIT_TOL {
            return Ok(x.as_slice().to_vec());
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let trial = &x + &dir * step;
            let (ft, gt) = eval(trial.as_slice());
            if ft < f && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            step *= 0.5;
        }
        if accepted.is_none() {
            // values no longer resolve progress; judge the full step by its gradient
            let trial = &x + &dir;
            let (ft, gt) = eval(trial.as_slice());
            let gt = DVector::from_vec(gt);
            if ft <= f + 1e-12 * (1.0 + f.abs()) && gt.norm() < gnorm {
                accepted = Some((trial, ft, gt));
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if dir != -&g {
                // retry from steepest descent before giving up
                h_inv = DMatrix::identity(n, n);
                continue;
            }
            if boundary_optimum || gnorm < FIT_ROUNDOFF_TOL {
                return Ok(x.as_slice().to_vec());
            }
            return Err(Error::NotConverged {
                iterations: iteration,
                grad_norm: gnorm,
            });
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let left = DMatrix::identity(n, n) - &s * y.transpose() * rho;
            h_inv = &left * &h_inv * left.transpose() + &s * s.transpose() * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::NotConverged {
        iterations: FIT_MAX_ITERS,
        grad_norm: g.norm(),
    })
}

impl JointModel for BLRModel {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    /// The single hyper-parameter is `log σ`.
    fn num_params(&self) -> usize {
        1
    }

    fn log_prior(&self, tape: &mut Tape, latent: Var, _params: Var) -> Var {
        standard_normal_log_pdf(tape, latent)
    }

    fn log_likelihood(&self, tape: &mut Tape, latent: Var, params: Var, data: &Dataset, batch: &[usize]) -> Var {
        let d = data.dim();
        let mut rows = Vec::with_capacity(batch.len() * d);
        let mut ys = Vec::with_capacity(batch.len());
        for &i in batch {
            rows.extend_from_slice(data.row(i));
            ys.push(data.target(i).expect("regression rows have targets"));
        }
        let w = tape.constant(rows);
        let b = tape.constant(vec![0.0; batch.len()]);
        let pred = tape.affine(w, latent, b, batch.len(), d);
        let y = tape.constant(ys);
        tape.gaussian_log_pdf(y, pred, params)
    }
}
