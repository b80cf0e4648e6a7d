//! Multivariate Gaussians with diagonal or full covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::HALF_LN_2PI;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances, all strictly positive.
    Diagonal(DVector<f64>),
    /// Symmetric positive definite matrix.
    Full(DMatrix<f64>),
}

/// A Gaussian `N(mean, covariance)`. Construction validates positivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: Covariance,
    chol: DMatrix<f64>,
}

impl GaussianDist {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variances.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!("variance {v} is not positive")));
        }
        let var = DVector::from_vec(variances);
        let chol = DMatrix::from_diagonal(&var.map(f64::sqrt));
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov: Covariance::Diagonal(var),
            chol,
        })
    }

    pub fn full(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let chol = cholesky(&cov)
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .l();
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov: Covariance::Full(cov),
            chol,
        })
    }

    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        Self::diagonal(vec![0.0; d], vec![1.0; d]).expect("valid standard normal")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.cov, Covariance::Diagonal(_))
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    /// Diagonal of the covariance (marginal variances).
    pub fn variances(&self) -> DVector<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&v.map(|x| 1.0 / x)),
            Covariance::Full(m) => {
                let inv = cholesky(m).expect("validated at construction").inverse();
                symmetrize(inv)
            }
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * z.norm_squared() - 0.5 * self.log_det_cov() - HALF_LN_2PI * self.dim() as f64
    }

    /// Draws `mean + L ε` with `ε ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + &self.chol * eps).iter().copied().collect()
    }
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// JSON form: `{"mean": [...], "var": [...]}` or `{"mean": [...], "cov": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRepr {
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cov: Option<Vec<Vec<f64>>>,
}

impl TryFrom<GaussianRepr> for GaussianDist {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        match (r.var, r.cov) {
            (Some(v), None) => GaussianDist::diagonal(r.mean, v),
            (None, Some(rows)) => {
                let d = rows.len();
                if rows.iter().any(|row| row.len() != d) {
                    return Err(Error::NotPositiveDefinite("covariance must be square".into()));
                }
                let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                GaussianDist::full(r.mean, m)
            }
            (None, None) => {
                let d = r.mean.len();
                GaussianDist::diagonal(r.mean, vec![1.0; d])
            }
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "give either `var` or `cov` for a Gaussian, not both".into(),
            )),
        }
    }
}

impl From<GaussianDist> for GaussianRepr {
    fn from(g: GaussianDist) -> Self {
        let mean = g.mean.iter().copied().collect();
        match g.cov {
            Covariance::Diagonal(v) => GaussianRepr {
                mean,
                var: Some(v.iter().copied().collect()),
                cov: None,
            },
            Covariance::Full(m) => GaussianRepr {
                mean,
                var: None,
                cov: Some(m.row_iter().map(|r| r.iter().copied().collect()).collect()),
            },
        }
    }
}
