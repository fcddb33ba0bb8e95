//! Fit configuration files and the fit pipeline behind the `fit` command.
//!
//! ```toml
//! [data]
//! path = "data.csv"
//!
//! [model]
//! kind = "bdprem"
//! alpha = ["intercept", "idu", "casual"]
//! fixed = ["intercept", "idu"]
//! psi = ["intercept", "casual"]
//!
//! [prior]
//! path = "prior.txt"
//!
//! [sampler]
//! iterations = 110000
//!
//! [output]
//! dir = "fit"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dataset::{load_dataset, Dataset, Schema};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ModelKind, SamplerConfig, Trace};
use crate::output::{create_file, write_mrse, write_summary};
use crate::priors::load_prior_file;
use crate::report::{mrse_decomposition, summarize_trace, DEFAULT_LAMBDA_BREAKS};
use crate::trace_io::write_trace_dir;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    pub alpha: Vec<String>,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub psi: Vec<String>,
    #[serde(default)]
    pub rate_random_effect: bool,
}

impl ModelSection {
    pub fn schema(&self) -> Schema {
        Schema {
            alpha: self.alpha.clone(),
            fixed: self.fixed.clone(),
            psi: self.psi.clone(),
            rate_random_effect: self.rate_random_effect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub level: f64,
    pub lambda_breaks: Vec<f64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("fit"),
            level: 0.95,
            lambda_breaks: DEFAULT_LAMBDA_BREAKS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub output: OutputSection,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

pub fn load_fit_config(path: &Path) -> Result<FitConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: FitConfig = toml::from_str(&text).map_err(|source| Error::Toml {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    rebase(base, &mut cfg.data.path);
    rebase(base, &mut cfg.prior.path);
    rebase(base, &mut cfg.output.dir);
    Ok(cfg)
}

/// Everything a finished fit produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRun {
    pub dataset: Dataset,
    pub trace: Trace,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.schema().validate()?;
        self.sampler.validate()?;
        if !(self.output.level > 0.0 && self.output.level < 1.0) {
            return Err(Error::config("output level must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Load data and prior, then run the chain.
    pub fn run(&self) -> Result<FitRun> {
        self.validate()?;
        let schema = self.model.schema();
        let dataset = load_dataset(&self.data.path, &schema)?;
        let prior = load_prior_file(&self.prior.path)?.resolve(&schema.alpha, &schema.psi)?;
        let trace = run_chain(dataset.fit_data()?, prior, self.model.kind, self.sampler.clone())?;
        Ok(FitRun { dataset, trace })
    }

    /// Write the trace directory, `summary.csv` and `mrse.csv` into the
    /// output directory.
    pub fn write_outputs(&self, run: &FitRun) -> Result<()> {
        let dir = &self.output.dir;
        write_trace_dir(dir, &run.trace)?;
        write_summary(create_file(&dir.join("summary.csv"))?, &summarize_trace(&run.trace, self.output.level)?)?;
        let rows = mrse_decomposition(&run.dataset.responses(), &run.trace.obs_means, &self.output.lambda_breaks)?;
        write_mrse(create_file(&dir.join("mrse.csv"))?, &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fit.toml");
        fs::write(
            &p,
            "[data]\npath = \"d.csv\"\n[model]\nalpha = [\"intercept\"]\n[prior]\npath = \"/abs/prior.txt\"\n[sampler]\niterations = 50\nburn_in = 10\n",
        )
        .unwrap();
        let cfg = load_fit_config(&p).unwrap();
        assert_eq!(cfg.data.path, dir.path().join("d.csv"));
        assert_eq!(cfg.prior.path, PathBuf::from("/abs/prior.txt"));
        assert_eq!(cfg.output.dir, dir.path().join("fit"));
        assert_eq!(cfg.model.kind, ModelKind::Bdprem);
        assert_eq!(cfg.sampler.iterations, 50);
        assert_eq!(cfg.sampler.thin, 10);
        assert_eq!(cfg.output.lambda_breaks, vec![0.05, 1.0]);
    }

    #[test]
    fn unknown_keys_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fit.toml");
        fs::write(&p, "[data]\npath = \"d.csv\"\nextra = 1\n").unwrap();
        assert!(load_fit_config(&p).unwrap_err().is_validation());
    }
}
