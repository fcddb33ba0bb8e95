use super::config::Block;

/// Posterior means of per-observation quantities, accumulated over stored
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObsMean {
    pub z: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Acceptance and scale diagnostics for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRecord {
    pub block: Block,
    pub selections: u64,
    pub proposals: u64,
    pub accepted: u64,
    /// Final proposal scale; averaged over subjects for per-subject blocks and
    /// absent for blocks without one.
    pub kappa: Option<f64>,
}

impl AdaptRecord {
    pub fn acceptance(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Thinned post-burn-in output of one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub alpha_names: Vec<String>,
    pub psi_names: Vec<String>,
    /// Iteration number at which each sample was stored.
    pub sample_iteration: Vec<u64>,
    pub alpha: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub d_beta: Vec<f64>,
    /// Empty unless the rate random effect is enabled.
    pub d_epsilon: Vec<f64>,
    pub z_selected: Vec<usize>,
    /// One row per stored sample, one column per selected observation.
    pub z_samples: Vec<Vec<u64>>,
    pub obs_means: Vec<ObsMean>,
    pub adapt: Vec<AdaptRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.sample_iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_iteration.is_empty()
    }

    pub fn alpha_column(&self, k: usize) -> Vec<f64> {
        self.alpha.iter().map(|row| row[k]).collect()
    }

    pub fn psi_column(&self, k: usize) -> Vec<f64> {
        self.psi.iter().map(|row| row[k]).collect()
    }

    /// Every scalar parameter as `(name, samples)`.
    pub fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (k, name) in self.alpha_names.iter().enumerate() {
            out.push((format!("alpha:{name}"), self.alpha_column(k)));
        }
        for (k, name) in self.psi_names.iter().enumerate() {
            out.push((format!("psi:{name}"), self.psi_column(k)));
        }
        out.push(("d_beta".to_string(), self.d_beta.clone()));
        if !self.d_epsilon.is_empty() {
            out.push(("d_epsilon".to_string(), self.d_epsilon.clone()));
        }
        out
    }
}
