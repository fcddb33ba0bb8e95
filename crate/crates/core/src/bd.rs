//! Equal-rate linear birth-death reporting distribution.
//!
//! A reported count is the state at pseudo-time 1 of a linear birth-death
//! process started at the true count `z`, with per-capita birth and death
//! rate `lambda`. Zero is absorbing. With `υ = λ/(1+λ)` the transition
//! probabilities are a finite mixture of negative binomials:
//!
//! ```text
//! P(0 | z)  = υ^z
//! P(y | z)  = Σ_{j=1}^{min(y,z)} C(z,j) C(y-1,j-1) υ^{z+y-2j} (1-υ)^{2j},   y ≥ 1
//! ```
//!
//! The mean is `z` and the variance `2λz`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::math::{ln_binomial, softplus};

/// Relative log-magnitude below which trailing mixture terms are dropped.
/// The terms are log-concave in `j`, so everything after the first such term
/// past the peak is smaller still.
const TERM_CUTOFF: f64 = 50.0;

/// Validated parameters of the reporting distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdParams {
    z: u64,
    lambda: f64,
}

impl BdParams {
    pub fn new(z: u64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { z, lambda })
    }

    pub fn z(&self) -> u64 {
        self.z
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "birth-death rate must be positive and finite, got {lambda}"
        )))
    }
}

/// `υ = λ / (1 + λ)`.
pub fn upsilon(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda / (1.0 + lambda))
}

/// Precomputed `ln υ` and `ln(1-υ)` for a fixed rate, parameterised by
/// `ln λ` so that the log-linear rate model never has to exponentiate.
#[derive(Debug, Clone, Copy)]
pub struct BdKernel {
    ln_up: f64,
    ln_down: f64,
}

impl BdKernel {
    #[inline]
    pub fn from_log_rate(log_lambda: f64) -> Self {
        let ln_one_plus = softplus(log_lambda);
        Self {
            ln_up: log_lambda - ln_one_plus,
            ln_down: -ln_one_plus,
        }
    }

    #[inline]
    pub fn from_rate(lambda: f64) -> Self {
        Self::from_log_rate(lambda.ln())
    }

    /// `ln P(Y = y | Z = z)`; `-inf` exactly when the transition is impossible.
    pub fn log_pmf(&self, y: u64, z: u64) -> f64 {
        if z == 0 {
            return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        if y == 0 {
            return z as f64 * self.ln_up;
        }
        let m = y.min(z);
        let base = (z + y) as f64 * self.ln_up;
        let step = 2.0 * (self.ln_down - self.ln_up);
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0_f64;
        let mut prev = f64::NEG_INFINITY;
        for j in 1..=m {
            let term = ln_binomial(z, j) + ln_binomial(y - 1, j - 1) + base + j as f64 * step;
            if term > max {
                acc = acc * (max - term).exp() + 1.0;
                max = term;
            } else {
                acc += (term - max).exp();
                if term < prev && term < max - TERM_CUTOFF {
                    break;
                }
            }
            prev = term;
        }
        max + acc.ln()
    }
}

/// `P(S(1) = y | S(0) = z, λ)`.
pub fn pmf(y: u64, params: &BdParams) -> f64 {
    log_pmf(y, params).exp()
}

/// Log-domain transition probability, stable for counts in the tens of
/// thousands.
pub fn log_pmf(y: u64, params: &BdParams) -> f64 {
    BdKernel::from_rate(params.lambda).log_pmf(y, params.z)
}

/// `(E[Y | z], Var[Y | z]) = (z, 2λz)`.
pub fn moments(params: &BdParams) -> (f64, f64) {
    let z = params.z as f64;
    (z, 2.0 * params.lambda * z)
}

/// Exact event-driven simulation of the process over `τ ∈ [0, 1]`.
pub fn simulate<R: Rng + ?Sized>(params: &BdParams, rng: &mut R) -> u64 {
    simulate_rate(params.z, params.lambda, rng)
}

pub(crate) fn simulate_rate<R: Rng + ?Sized>(z: u64, lambda: f64, rng: &mut R) -> u64 {
    let mut s = z;
    let mut tau = 0.0_f64;
    while s > 0 {
        let wait: f64 = Exp1.sample(rng);
        tau += wait / (2.0 * lambda * s as f64);
        if tau > 1.0 {
            break;
        }
        if rng.random_bool(0.5) {
            s += 1;
        } else {
            s -= 1;
        }
    }
    s
}
