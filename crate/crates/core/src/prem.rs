//! Poisson random-effects layer and the log-linear birth-death rate model.
//!
//! True counts follow `Z_ij ~ Poisson(μ_ij)` with
//! `log μ_ij = x_ij'α + h_ij'β_i`, `β_i ~ N_r(0, D_β)`, and reports follow the
//! birth-death law with rate `λ_ij = exp(w_ij'ψ [+ ε_i])`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::ln_gamma1p;

/// Covariates and response for one observation `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDesign {
    pub subject_index: usize,
    pub time: f64,
    pub y: u64,
    /// Mean-model covariates, length `p`.
    pub x: Vec<f64>,
    /// Random-effect covariates, length `r`.
    pub h: Vec<f64>,
    /// Rate-model covariates, length `q`.
    pub w: Vec<f64>,
}

/// Model dimensions and the time-fixed / time-varying split of `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub p: usize,
    pub r: usize,
    pub q: usize,
    /// Indices into `α` of time-fixed coefficients (constant within subject).
    pub fixed: Vec<usize>,
    /// Indices into `α` of time-varying coefficients.
    pub varying: Vec<usize>,
    pub use_rate_random_effect: bool,
}

impl ModelSpec {
    pub fn new(
        p: usize,
        r: usize,
        q: usize,
        fixed: Vec<usize>,
        varying: Vec<usize>,
        use_rate_random_effect: bool,
    ) -> Result<Self> {
        let spec = Self {
            p,
            r,
            q,
            fixed,
            varying,
            use_rate_random_effect,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.p];
        for &k in self.fixed.iter().chain(&self.varying) {
            if k >= self.p {
                return Err(Error::config(format!(
                    "alpha index {k} out of range for p = {}",
                    self.p
                )));
            }
            if seen[k] {
                return Err(Error::config(format!(
                    "alpha index {k} assigned to both fixed and varying blocks"
                )));
            }
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!(
                "alpha index {k} is in neither the fixed nor the varying block"
            )));
        }
        if self.r == 0 {
            return Err(Error::config("random-effect dimension r must be at least 1"));
        }
        Ok(())
    }

    pub fn check_observation(&self, obs: &ObservationDesign) -> Result<()> {
        check_len("x", self.p, obs.x.len())?;
        check_len("h", self.r, obs.h.len())?;
        check_len("w", self.q, obs.w.len())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x'α + h'β_i`.
pub fn log_mu(obs: &ObservationDesign, alpha: &[f64], beta_i: &[f64]) -> Result<f64> {
    check_len("alpha", obs.x.len(), alpha.len())?;
    check_len("beta_i", obs.h.len(), beta_i.len())?;
    Ok(dot(&obs.x, alpha) + dot(&obs.h, beta_i))
}

/// Poisson log-likelihood `z·log μ − μ − ln Γ(z+1)`. Accepts fractional
/// pseudo-counts.
#[inline]
pub fn poisson_log_lik(z: f64, log_mu: f64) -> f64 {
    let mu = log_mu.exp();
    if z == 0.0 {
        return -mu;
    }
    z * log_mu - mu - ln_gamma1p(z)
}

fn quad_form(h_j: &[f64], d_beta: &DMatrix<f64>, h_k: &[f64]) -> Result<f64> {
    let r = d_beta.nrows();
    check_len("D_beta", r, d_beta.ncols())?;
    check_len("h", r, h_j.len())?;
    check_len("h", r, h_k.len())?;
    let a = DVector::from_column_slice(h_j);
    let b = DVector::from_column_slice(h_k);
    Ok(a.dot(&(d_beta * b)))
}

fn check_covariance(d_beta: &DMatrix<f64>) -> Result<()> {
    if !d_beta.is_square() {
        return Err(Error::domain("D_beta must be square"));
    }
    let sym = (d_beta - d_beta.transpose()).abs().max();
    if sym > 1e-12 * d_beta.abs().max().max(1.0) {
        return Err(Error::domain("D_beta must be symmetric"));
    }
    if d_beta.clone().cholesky().is_none() {
        return Err(Error::domain("D_beta must be positive definite"));
    }
    Ok(())
}

/// `ν = exp(x'α + h'D_β h / 2)`, the mean of `Z` marginal over `β_i`.
pub fn unconditional_mean(
    obs: &ObservationDesign,
    alpha: &[f64],
    d_beta: &DMatrix<f64>,
) -> Result<f64> {
    check_covariance(d_beta)?;
    check_len("alpha", obs.x.len(), alpha.len())?;
    Ok((dot(&obs.x, alpha) + quad_form(&obs.h, d_beta, &obs.h)? / 2.0).exp())
}

/// `Var(Y) = (2λ + 1)ν + ν²(exp(h'D_β h) − 1)`.
pub fn marginal_variance(
    obs: &ObservationDesign,
    alpha: &[f64],
    d_beta: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("invalid rate {lambda}")));
    }
    let nu = unconditional_mean(obs, alpha, d_beta)?;
    let s = quad_form(&obs.h, d_beta, &obs.h)?;
    Ok((2.0 * lambda + 1.0) * nu + nu * nu * s.exp_m1())
}

/// `Cov(Y_ij, Y_ik) = ν_j ν_k (exp(h_j'D_β h_k) − 1)` for two observations
/// of the same subject. The reporting layer leaves it unchanged.
pub fn marginal_covariance(
    obs_j: &ObservationDesign,
    obs_k: &ObservationDesign,
    alpha: &[f64],
    d_beta: &DMatrix<f64>,
) -> Result<f64> {
    if obs_j.subject_index != obs_k.subject_index {
        return Err(Error::domain(
            "marginal covariance is only defined within a subject",
        ));
    }
    let nu_j = unconditional_mean(obs_j, alpha, d_beta)?;
    let nu_k = unconditional_mean(obs_k, alpha, d_beta)?;
    Ok(nu_j * nu_k * quad_form(&obs_j.h, d_beta, &obs_k.h)?.exp_m1())
}

/// `λ = exp(w'ψ + ε_i)`.
pub fn bd_rate(obs: &ObservationDesign, psi: &[f64], epsilon_i: Option<f64>) -> Result<f64> {
    check_len("psi", obs.w.len(), psi.len())?;
    Ok((dot(&obs.w, psi) + epsilon_i.unwrap_or(0.0)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: Vec<f64>, h: Vec<f64>, w: Vec<f64>) -> ObservationDesign {
        ObservationDesign {
            subject_index: 0,
            time: 0.0,
            y: 0,
            x,
            h,
            w,
        }
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn log_mu_examples() {
        let o = obs(vec![0.0, 0.0], vec![0.0], vec![]);
        assert_eq!(log_mu(&o, &[0.3, 0.2], &[1.0]).unwrap(), 0.0);
        let o = obs(vec![1.0, 1.0], vec![1.0], vec![]);
        let v = log_mu(&o, &[-0.42, 0.48], &[0.3]).unwrap();
        assert!((v - 0.36).abs() < 1e-12);
        let shifted = log_mu(&o, &[-0.42, 0.48], &[0.3 + 0.7]).unwrap();
        assert!((shifted - v - 0.7).abs() < 1e-12);
        assert!(log_mu(&o, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_log_lik(0.0, 0.0), -1.0);
        let v = poisson_log_lik(3.0, 3f64.ln());
        assert!((v - (3.0 * 3f64.ln() - 3.0 - 6f64.ln())).abs() < 1e-12);
        for &lm in &[-1.0, 0.0, 2.0] {
            let total: f64 = (0..=200).map(|z| poisson_log_lik(z as f64, lm).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "log_mu={lm}: {total}");
        }
    }

    #[test]
    fn unconditional_mean_examples() {
        let o = obs(vec![0.5], vec![1.0], vec![]);
        let tiny = unconditional_mean(&o, &[1.0], &scalar(1e-300)).unwrap();
        assert!((tiny - 0.5f64.exp()).abs() < 1e-12);
        let o = obs(vec![0.0], vec![1.0], vec![]);
        let v = unconditional_mean(&o, &[0.0], &scalar(0.98)).unwrap();
        assert!((v - 0.49f64.exp()).abs() < 1e-12);
        assert!((v - 1.632).abs() < 1e-3);
        let o2 = obs(vec![0.0], vec![2.0], vec![]);
        let v2 = unconditional_mean(&o2, &[0.0], &scalar(0.98)).unwrap();
        assert!((v2.ln() - 4.0 * 0.49).abs() < 1e-12);
        assert!(unconditional_mean(&o, &[0.0], &scalar(-1.0)).is_err());
    }

    #[test]
    fn variance_examples() {
        let o = obs(vec![1.0], vec![1.0], vec![]);
        let nu = 0.3f64.exp();
        let v = marginal_variance(&o, &[0.3], &scalar(1e-300), 0.0).unwrap();
        assert!((v - nu).abs() < 1e-12);
        let d = scalar(0.5);
        let with_bd = marginal_variance(&o, &[0.3], &d, 1.7).unwrap();
        let prem_only = marginal_variance(&o, &[0.3], &d, 0.0).unwrap();
        let nu = unconditional_mean(&o, &[0.3], &d).unwrap();
        assert!((with_bd - prem_only - 2.0 * 1.7 * nu).abs() < 1e-12);
    }

    #[test]
    fn covariance_examples() {
        let a = obs(vec![1.0, 0.0], vec![1.0], vec![]);
        let b = obs(vec![1.0, 1.0], vec![1.0], vec![]);
        let alpha = [0.2, -0.4];
        let c0 = marginal_covariance(&a, &b, &alpha, &scalar(1e-300)).unwrap();
        assert!(c0.abs() < 1e-12);
        let d = scalar(0.7);
        let c_ab = marginal_covariance(&a, &b, &alpha, &d).unwrap();
        let c_ba = marginal_covariance(&b, &a, &alpha, &d).unwrap();
        assert_eq!(c_ab, c_ba);
        let mut other = b.clone();
        other.subject_index = 1;
        assert!(marginal_covariance(&a, &other, &alpha, &d).is_err());
    }

    #[test]
    fn rate_examples() {
        let o = obs(vec![], vec![1.0], vec![0.0; 3]);
        assert_eq!(bd_rate(&o, &[1.0, 2.0, 3.0], None).unwrap(), 1.0);
        let o = obs(vec![], vec![1.0], vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let psi = [-2.43, -0.68, -0.61, 0.51, 3.47, 1.36];
        let lam = bd_rate(&o, &psi, None).unwrap();
        assert!((lam - 0.36f64.exp()).abs() < 1e-12);
        assert!((lam - 1.433).abs() < 1e-3);
        let doubled = bd_rate(&o, &psi, Some(2f64.ln())).unwrap();
        assert!((doubled - 2.0 * lam).abs() < 1e-12);
    }

    #[test]
    fn model_spec_partition_checks() {
        assert!(ModelSpec::new(3, 1, 1, vec![0], vec![1, 2], false).is_ok());
        assert!(ModelSpec::new(3, 1, 1, vec![0, 1], vec![1, 2], false).is_err());
        assert!(ModelSpec::new(3, 1, 1, vec![0], vec![2], false).is_err());
        assert!(ModelSpec::new(3, 1, 1, vec![0], vec![1, 5], false).is_err());
    }
}
