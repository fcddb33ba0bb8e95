use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adapt::TimeTransform;
use crate::error::{Error, Result};

/// Which layers are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Poisson random effects with birth-death reporting error.
    #[default]
    Bdprem,
    /// Poisson random effects only; reports are taken as true counts.
    Prem,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bdprem => "bdprem",
            ModelKind::Prem => "prem",
        }
    }
}

/// A parameter block that the random scan can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Eta,
    Z,
    AlphaV,
    DBeta,
    AlphaF,
    Psi,
    Epsilon,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::Eta,
        Block::Z,
        Block::AlphaV,
        Block::DBeta,
        Block::AlphaF,
        Block::Psi,
        Block::Epsilon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Eta => "eta",
            Block::Z => "z",
            Block::AlphaV => "alpha_v",
            Block::DBeta => "d_beta",
            Block::AlphaF => "alpha_f",
            Block::Psi => "psi",
            Block::Epsilon => "epsilon",
        }
    }

    pub fn parse(name: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == name)
    }

    /// Default selection probability before renormalisation over the blocks
    /// that a given model actually has.
    pub fn default_probability(self) -> f64 {
        match self {
            Block::Eta => 0.2,
            Block::Z => 0.2,
            Block::AlphaV => 0.26,
            Block::DBeta => 0.07,
            Block::AlphaF => 0.07,
            Block::Psi => 0.07,
            Block::Epsilon => 0.13,
        }
    }
}

/// Target acceptance probabilities for the random-walk blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Targets {
    pub eta: f64,
    pub alpha_v: f64,
    pub psi: f64,
    pub epsilon: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            eta: 0.4,
            alpha_v: 0.25,
            psi: 0.25,
            epsilon: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    /// Explicit block probabilities; when absent the defaults are
    /// renormalised over the blocks present in the model.
    pub scan_probabilities: Option<BTreeMap<Block, f64>>,
    pub targets: Targets,
    pub time_transform: TimeTransform,
    pub initial_kappa: f64,
    /// Stop adapting proposal scales once burn-in ends.
    pub freeze_after_burn_in: bool,
    /// Observation indices whose latent counts are stored at every sample.
    pub z_selected: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 110_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            scan_probabilities: None,
            targets: Targets::default(),
            time_transform: TimeTransform::Sqrt,
            initial_kappa: 1.0,
            freeze_after_burn_in: false,
            z_selected: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        let t = &self.targets;
        for (name, v) in [("eta", t.eta), ("alpha_v", t.alpha_v), ("psi", t.psi), ("epsilon", t.epsilon)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("target acceptance for {name} must lie in (0, 1)")));
            }
        }
        if !(self.initial_kappa > 0.0 && self.initial_kappa.is_finite()) {
            return Err(Error::config("initial_kappa must be positive"));
        }
        if let Some(probs) = &self.scan_probabilities {
            check_probabilities(probs)?;
        }
        Ok(())
    }

    /// Number of samples kept after burn-in and thinning.
    pub fn stored_samples(&self) -> u64 {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin.max(1)
    }

    /// Resolve the scan distribution over the active blocks.
    pub fn scan(&self, active: &[Block]) -> Result<Vec<(Block, f64)>> {
        match &self.scan_probabilities {
            None => {
                let total: f64 = active.iter().map(|b| b.default_probability()).sum();
                Ok(active
                    .iter()
                    .map(|&b| (b, b.default_probability() / total))
                    .collect())
            }
            Some(probs) => {
                check_probabilities(probs)?;
                for (&b, &p) in probs {
                    if p > 0.0 && !active.contains(&b) {
                        return Err(Error::config(format!(
                            "block `{}` has positive scan probability but is not part of this model",
                            b.name()
                        )));
                    }
                }
                Ok(active
                    .iter()
                    .map(|&b| (b, probs.get(&b).copied().unwrap_or(0.0)))
                    .collect())
            }
        }
    }
}

fn check_probabilities(probs: &BTreeMap<Block, f64>) -> Result<()> {
    if probs.values().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::config("scan probabilities must be non-negative"));
    }
    let total: f64 = probs.values().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!("scan probabilities sum to {total}, not 1")));
    }
    Ok(())
}
