//! Prior specifications and the routes used to build them: point-and-range
//! elicitation, data-augmentation prior datasets, and inflated posteriors
//! from a previous similar dataset.

mod da;
mod file;

pub use da::{da_log_prior, summarize_da_prior, DaPriorData, DaSummary, DaSummaryConfig};
pub use file::{load_da_data, load_prior_file, PriorFile};

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// 97.5% standard normal quantile used by the point-and-range method.
pub const Z_975: f64 = 1.96;

/// Multivariate normal prior with cached precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl NormalPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension {
                context: "prior covariance",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-10 * cov.abs().max().max(1.0) {
            return Err(Error::domain("prior covariance is not symmetric"));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::domain("prior covariance is not positive definite"))?;
        let precision = chol.inverse();
        Ok(Self {
            mean,
            cov,
            precision,
        })
    }

    /// Independent normals with the given means and standard deviations.
    pub fn diagonal(means: &[f64], sds: &[f64]) -> Result<Self> {
        if means.len() != sds.len() {
            return Err(Error::Dimension {
                context: "prior sds",
                expected: means.len(),
                got: sds.len(),
            });
        }
        if let Some(sd) = sds.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::domain(format!("prior sd must be positive, got {sd}")));
        }
        let var: Vec<f64> = sds.iter().map(|s| s * s).collect();
        Self::new(
            DVector::from_column_slice(means),
            DMatrix::from_diagonal(&DVector::from_vec(var)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn sds(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    /// `−½ (θ − m)' Σ⁻¹ (θ − m)`, dropping the normalising constant.
    pub fn log_kernel(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_column_slice(theta) - &self.mean;
        -0.5 * d.dot(&(&self.precision * &d))
    }
}

/// Inverse-gamma prior with density `∝ x^{−(a+1)} exp(−b/x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGammaPrior {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::domain(format!(
                "inverse-gamma needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// `b / (a − 1)`; infinite when `a ≤ 1`.
    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.scale / (self.shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }

    /// Inverse-gamma with the given mean and variance (requires `a > 2`).
    pub fn from_moments(mean: f64, var: f64) -> Result<Self> {
        if !(mean > 0.0 && var > 0.0) {
            return Err(Error::domain("moment matching needs positive mean and variance"));
        }
        let shape = 2.0 + mean * mean / var;
        Self::new(shape, mean * (shape - 1.0))
    }
}

/// Complete prior for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub alpha_names: Vec<String>,
    pub alpha: NormalPrior,
    pub psi_names: Vec<String>,
    pub psi: NormalPrior,
    pub d_beta: InverseGammaPrior,
    pub d_epsilon: Option<InverseGammaPrior>,
}

impl PriorSpec {
    pub fn p(&self) -> usize {
        self.alpha.dim()
    }

    pub fn q(&self) -> usize {
        self.psi.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_names.len() != self.alpha.dim() {
            return Err(Error::Dimension {
                context: "alpha prior names",
                expected: self.alpha.dim(),
                got: self.alpha_names.len(),
            });
        }
        if self.psi_names.len() != self.psi.dim() {
            return Err(Error::Dimension {
                context: "psi prior names",
                expected: self.psi.dim(),
                got: self.psi_names.len(),
            });
        }
        Ok(())
    }

    /// Reorder to match the given coefficient names (as laid out by the data
    /// schema). Every name must be present in the prior.
    pub fn reordered(&self, alpha_names: &[String], psi_names: &[String]) -> Result<Self> {
        let alpha = reorder(&self.alpha, &self.alpha_names, alpha_names, "alpha")?;
        let psi = reorder(&self.psi, &self.psi_names, psi_names, "psi")?;
        Ok(Self {
            alpha_names: alpha_names.to_vec(),
            alpha,
            psi_names: psi_names.to_vec(),
            psi,
            d_beta: self.d_beta,
            d_epsilon: self.d_epsilon,
        })
    }
}

fn reorder(
    prior: &NormalPrior,
    have: &[String],
    want: &[String],
    section: &str,
) -> Result<NormalPrior> {
    let idx = want
        .iter()
        .map(|name| {
            have.iter().position(|h| h == name).ok_or_else(|| {
                Error::config(format!("prior section [{section}] has no entry for `{name}`"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| prior.mean[i]));
    let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| prior.cov[(idx[r], idx[c])]);
    NormalPrior::new(mean, cov)
}

/// Prior SD that places the elicited multiplicative bound `d` at the upper
/// edge of a 95% interval centred at `m`: solves `exp(m + 1.96 s) = d`.
pub fn point_range_sd(m: f64, d: f64) -> Result<f64> {
    if !(d > 0.0 && d.ln() > m) {
        return Err(Error::domain(format!(
            "range bound {d} must exceed exp(point estimate) = {}",
            m.exp()
        )));
    }
    Ok((d.ln() - m) / Z_975)
}

/// Previous-dataset prior: keep the posterior mean and inflate the posterior
/// covariance by `g`.
pub fn ds_prior_from_posterior(
    post_mean: &DVector<f64>,
    post_cov: &DMatrix<f64>,
    g: f64,
) -> Result<NormalPrior> {
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::domain(format!("inflation factor must be positive, got {g}")));
    }
    NormalPrior::new(post_mean.clone(), post_cov * g)
}

/// Joint prior for two coefficient vectors whose average is known a priori
/// and whose difference is centred at zero.
///
/// With `A ~ N(avg_mean, avg_cov)` and independent `D ~ N(0, Σ_D)`, where `Σ_D`
/// is compound-symmetric with variance `diff_sd²` and correlation `diff_corr`,
/// returns the law of the stacked vector `(A + D/2, A − D/2)`.
pub fn split_average_difference_prior(
    avg_mean: &DVector<f64>,
    avg_cov: &DMatrix<f64>,
    diff_sd: f64,
    diff_corr: f64,
) -> Result<NormalPrior> {
    if !(diff_sd.is_finite() && diff_sd > 0.0) {
        return Err(Error::domain(format!("difference sd must be positive, got {diff_sd}")));
    }
    if !(0.0..1.0).contains(&diff_corr) {
        return Err(Error::domain(format!(
            "difference correlation must lie in [0, 1), got {diff_corr}"
        )));
    }
    let k = avg_mean.len();
    if avg_cov.nrows() != k || avg_cov.ncols() != k {
        return Err(Error::Dimension {
            context: "average covariance",
            expected: k,
            got: avg_cov.nrows(),
        });
    }
    let var = diff_sd * diff_sd;
    let sigma_d = DMatrix::from_fn(k, k, |r, c| if r == c { var } else { diff_corr * var });
    let same = avg_cov + &sigma_d / 4.0;
    let cross = avg_cov - &sigma_d / 4.0;
    let mut cov = DMatrix::zeros(2 * k, 2 * k);
    cov.view_mut((0, 0), (k, k)).copy_from(&same);
    cov.view_mut((k, k), (k, k)).copy_from(&same);
    cov.view_mut((0, k), (k, k)).copy_from(&cross);
    cov.view_mut((k, 0), (k, k)).copy_from(&cross);
    let mut mean = DVector::zeros(2 * k);
    mean.rows_mut(0, k).copy_from(avg_mean);
    mean.rows_mut(k, k).copy_from(avg_mean);
    NormalPrior::new(mean, cov)
}

/// Inverse-gamma hyperparameters from an equivalent prior sample: the shape
/// is half the number of equivalent subjects and the scale matches the
/// prior mean to `d_bar`.
pub fn ig_from_equivalent_sample(
    n_equiv_obs: f64,
    obs_per_subject: f64,
    d_bar: f64,
) -> Result<InverseGammaPrior> {
    if !(n_equiv_obs > 0.0 && obs_per_subject > 0.0 && d_bar > 0.0) {
        return Err(Error::domain("equivalent-sample inputs must be positive"));
    }
    let shape = n_equiv_obs / obs_per_subject / 2.0;
    if shape <= 1.0 {
        return Err(Error::domain(format!(
            "shape {shape} ≤ 1 leaves the prior mean undefined"
        )));
    }
    InverseGammaPrior::new(shape, d_bar * (shape - 1.0))
}
