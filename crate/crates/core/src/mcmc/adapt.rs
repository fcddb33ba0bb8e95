//! Auto-optimising proposal scales.
//!
//! After every proposal the scale moves toward the value that yields the
//! target acceptance probability `π`:
//!
//! ```text
//! κ_{m+1} = κ_m + (θ_m − π) / (t(m) + 1)
//! ```
//!
//! where `θ_m` is the acceptance frequency over the first `m` proposals and
//! `t` is either the identity or the square root. `κ` multiplies the variance
//! of the proposal, and is clamped to `[KAPPA_FLOOR, KAPPA_CAP]`.

use serde::{Deserialize, Serialize};

pub const KAPPA_FLOOR: f64 = 1e-8;
pub const KAPPA_CAP: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    /// `t(m) = m`
    Linear,
    /// `t(m) = √m`
    #[default]
    Sqrt,
}

impl TimeTransform {
    #[inline]
    pub fn apply(self, m: u64) -> f64 {
        match self {
            TimeTransform::Linear => m as f64,
            TimeTransform::Sqrt => (m as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveScale {
    pub kappa: f64,
    pub accept_count: u64,
    pub proposal_count: u64,
    pub target: f64,
    pub transform: TimeTransform,
    pub frozen: bool,
}

impl AdaptiveScale {
    pub fn new(target: f64, transform: TimeTransform) -> Self {
        Self::with_kappa(1.0, target, transform)
    }

    pub fn with_kappa(kappa: f64, target: f64, transform: TimeTransform) -> Self {
        Self {
            kappa,
            accept_count: 0,
            proposal_count: 0,
            target,
            transform,
            frozen: false,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposal_count == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.proposal_count as f64
        }
    }

    /// Standard deviation multiplier corresponding to the variance scale.
    #[inline]
    pub fn sd(&self) -> f64 {
        self.kappa.sqrt()
    }

    /// Record the outcome of one proposal and, unless frozen, adapt using the
    /// proposal count as the iteration index.
    pub fn record(&mut self, accepted: bool) {
        self.proposal_count += 1;
        if accepted {
            self.accept_count += 1;
        }
        if !self.frozen {
            *self = adapt_scale(self, self.proposal_count);
        }
    }
}

/// One step of the scale recursion at iteration `m ≥ 1`.
pub fn adapt_scale(state: &AdaptiveScale, m: u64) -> AdaptiveScale {
    let mut next = state.clone();
    if state.proposal_count == 0 {
        return next;
    }
    let theta = state.acceptance_rate();
    let kappa = state.kappa + (theta - state.target) / (state.transform.apply(m.max(1)) + 1.0);
    next.kappa = kappa.clamp(KAPPA_FLOOR, KAPPA_CAP);
    next
}
