use std::ops::Range;

use crate::error::{Error, Result};
use crate::prem::{ModelSpec, ObservationDesign};

/// Observations grouped by subject, ready for sampling.
///
/// Subjects are numbered `0..n` and rows are contiguous per subject. The
/// random effect is a scalar intercept (`h ≡ 1`), which is what allows the
/// centred parameterisation `η_i = β_i + x_i^(F)'α^(F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    spec: ModelSpec,
    obs: Vec<ObservationDesign>,
    subjects: Vec<Range<usize>>,
}

impl FitData {
    pub fn new(spec: ModelSpec, observations: Vec<ObservationDesign>) -> Result<Self> {
        spec.validate()?;
        if spec.r != 1 {
            return Err(Error::config(
                "the sampler supports a single random intercept (r = 1)",
            ));
        }
        let mut subjects: Vec<Range<usize>> = Vec::new();
        for (k, o) in observations.iter().enumerate() {
            spec.check_observation(o)?;
            if o.h[0] != 1.0 {
                return Err(Error::domain(format!(
                    "observation {k}: random-effect covariate must be 1, got {}",
                    o.h[0]
                )));
            }
            let current = subjects.len();
            match subjects.last_mut() {
                Some(r) if o.subject_index + 1 == current => r.end = k + 1,
                _ if o.subject_index == current => subjects.push(k..k + 1),
                _ => {
                    return Err(Error::domain(format!(
                        "observation {k}: subject index {} breaks the 0..n contiguous ordering",
                        o.subject_index
                    )))
                }
            }
        }
        for (i, rows) in subjects.iter().enumerate() {
            let first = &observations[rows.start];
            for o in &observations[rows.clone()] {
                for &f in &spec.fixed {
                    if o.x[f] != first.x[f] {
                        return Err(Error::domain(format!(
                            "subject {i}: time-fixed covariate {f} varies within subject"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            spec,
            obs: observations,
            subjects,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn observations(&self) -> &[ObservationDesign] {
        &self.obs
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn subject_rows(&self, i: usize) -> Range<usize> {
        self.subjects[i].clone()
    }

    /// Time-fixed covariates of subject `i` (taken from its first row).
    pub fn fixed_row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let x = &self.obs[self.subjects[i].start].x;
        self.spec.fixed.iter().map(move |&f| x[f])
    }

    pub(crate) fn set_y(&mut self, k: usize, y: u64) {
        self.obs[k].y = y;
    }
}
