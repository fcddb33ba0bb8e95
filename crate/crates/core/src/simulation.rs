//! Simulation studies: draw data from known truths over a fixed design, fit
//! one or more models to each replicate, and tabulate recovery.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Deserialize;

use crate::bd::simulate_rate;
use crate::dataset::{write_dataset_file, DataRow, Dataset, Schema};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ModelKind, SamplerConfig, Trace};
use crate::prem::dot;
use crate::priors::{load_prior_file, PriorSpec};
use crate::report::summarize_samples;
use crate::trace_io::write_trace_dir;

/// Covariate layout of a three-arm trial with a baseline and follow-up
/// visits: time-fixed IDU/MSM indicators, visit-level CASUAL/TRADE, a month
/// effect per follow-up, and arm-by-month interactions. The rate model has
/// an intercept, a post-baseline indicator, its arm interactions, CASUAL and
/// TRADE.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDesign {
    pub n_subjects: usize,
    /// Visit times; the first is baseline.
    pub visits: Vec<f64>,
    /// Probability of attending each follow-up visit.
    pub retention: f64,
    pub idu: f64,
    pub msm: f64,
    pub casual: f64,
    pub trade: f64,
    /// Allocation probabilities for control, in-person and telephone arms.
    pub groups: [f64; 3],
}

impl Default for TrialDesign {
    fn default() -> Self {
        Self {
            n_subjects: 173,
            visits: vec![0.0, 3.0, 6.0, 9.0, 15.0],
            retention: 0.8,
            idu: 0.15,
            msm: 0.45,
            casual: 0.35,
            trade: 0.1,
            groups: [0.34, 0.33, 0.33],
        }
    }
}

fn month_label(t: f64) -> String {
    format!("month{t}")
}

impl TrialDesign {
    pub fn schema(&self) -> Schema {
        let follow = &self.visits[1.min(self.visits.len())..];
        let mut alpha: Vec<String> = ["intercept", "idu", "msm", "casual", "trade"].map(String::from).into();
        alpha.extend(follow.iter().map(|&t| month_label(t)));
        alpha.extend(follow.iter().map(|&t| format!("inperson_{}", month_label(t))));
        alpha.extend(follow.iter().map(|&t| format!("phone_{}", month_label(t))));
        Schema {
            alpha,
            fixed: ["intercept", "idu", "msm"].map(String::from).into(),
            psi: ["intercept", "pb", "pb_inperson", "pb_phone", "casual", "trade"].map(String::from).into(),
            rate_random_effect: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let probs = [self.retention, self.idu, self.msm, self.casual, self.trade];
        if probs.iter().chain(&self.groups).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("design frequencies must lie in [0, 1]"));
        }
        if (self.groups.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("group allocation probabilities must sum to 1"));
        }
        if self.visits.is_empty() || self.visits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("visits must be non-empty and increasing"));
        }
        if self.n_subjects == 0 {
            return Err(Error::config("n_subjects must be positive"));
        }
        Ok(())
    }

    /// Draw a covariate table; responses are left at zero.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        self.validate()?;
        let schema = self.schema();
        let follow = self.visits.len() - 1;
        let mut rows = Vec::new();
        for i in 0..self.n_subjects {
            let idu = rng.random_bool(self.idu) as u8 as f64;
            let msm = rng.random_bool(self.msm) as u8 as f64;
            let u: f64 = rng.random();
            let group = if u < self.groups[0] {
                0
            } else if u < self.groups[0] + self.groups[1] {
                1
            } else {
                2
            };
            for (v, &t) in self.visits.iter().enumerate() {
                if v > 0 && !rng.random_bool(self.retention) {
                    continue;
                }
                let casual = rng.random_bool(self.casual) as u8 as f64;
                let trade = rng.random_bool(self.trade) as u8 as f64;
                let mut values = vec![1.0, idu, msm, casual, trade];
                let mut month = vec![0.0; follow];
                if v > 0 {
                    month[v - 1] = 1.0;
                }
                values.extend(&month);
                values.extend(month.iter().map(|m| m * (group == 1) as u8 as f64));
                values.extend(month.iter().map(|m| m * (group == 2) as u8 as f64));
                let pb = (v > 0) as u8 as f64;
                values.extend([pb, pb * (group == 1) as u8 as f64, pb * (group == 2) as u8 as f64]);
                rows.push(DataRow {
                    subject: format!("s{:03}", i + 1),
                    time: t,
                    y: 0,
                    values,
                });
            }
        }
        Dataset::new(schema, rows)
    }
}

/// True parameter values and the generating model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub alpha: Vec<f64>,
    pub psi: Vec<f64>,
    pub d_beta: f64,
    pub generator: ModelKind,
}

/// A generated dataset together with its hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub z: Vec<u64>,
    pub beta: Vec<f64>,
}

/// Draw `β_i ~ N(0, D_β)`, `Z ~ Poisson(exp(x'α + β_i))` and reports from
/// the birth-death law with rate `exp(w'ψ)` (or `Y = Z` for PREM truths).
pub fn generate_dataset<R: Rng + ?Sized>(truth: &SimulationTruth, design: &Dataset, rng: &mut R) -> Result<SimulatedData> {
    if !(truth.d_beta > 0.0 && truth.d_beta.is_finite()) {
        return Err(Error::domain("d_beta truth must be positive"));
    }
    crate::prem::check_len("alpha truth", design.schema.alpha.len(), truth.alpha.len())?;
    if truth.generator == ModelKind::Bdprem {
        crate::prem::check_len("psi truth", design.schema.psi.len(), truth.psi.len())?;
    }
    let obs = design.observations();
    let n = obs.last().map_or(0, |o| o.subject_index + 1);
    let normal = Normal::new(0.0, truth.d_beta.sqrt()).map_err(|e| Error::domain(e.to_string()))?;
    let beta: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let mut z = Vec::with_capacity(obs.len());
    let mut dataset = design.clone();
    for (o, row) in obs.iter().zip(dataset.rows.iter_mut()) {
        let mu = (dot(&o.x, &truth.alpha) + beta[o.subject_index]).exp();
        let zk = Poisson::new(mu).map_err(|e| Error::domain(e.to_string()))?.sample(rng) as u64;
        row.y = match truth.generator {
            ModelKind::Bdprem => simulate_rate(zk, dot(&o.w, &truth.psi).exp(), rng),
            ModelKind::Prem => zk,
        };
        z.push(zk);
    }
    Ok(SimulatedData { dataset, z, beta })
}

/// One model fitted to every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSetup {
    pub kind: ModelKind,
    pub prior: PriorSpec,
    pub config: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub truth: SimulationTruth,
    pub design: Dataset,
    pub fits: Vec<FitSetup>,
    pub replicates: usize,
    pub seed: u64,
}

/// Posterior summary of one parameter in one replicate fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub var: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub kind: ModelKind,
    pub trace: Trace,
    pub estimates: Vec<ParameterEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub data: SimulatedData,
    pub fits: Vec<FitOutcome>,
}

/// Aggregated recovery for one parameter under one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub model: ModelKind,
    pub truth: f64,
    pub mse: f64,
    pub bias: f64,
    /// Variance of posterior means across replicates (divisor = replicates).
    pub var: f64,
    pub avg_var: f64,
    pub coverage: f64,
    /// `bias / sqrt(var / replicates)`.
    pub bias_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub replicates: usize,
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn row(&self, model: ModelKind, parameter: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.parameter == parameter)
    }
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

impl Study {
    fn check(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("a study needs at least one replicate"));
        }
        if self.fits.is_empty() {
            return Err(Error::config("a study needs at least one fitted model"));
        }
        Ok(())
    }

    /// Generate replicate `index` and fit every model to it.
    pub fn run_replicate(&self, index: usize) -> Result<ReplicateOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + index as u64);
        let data = generate_dataset(&self.truth, &self.design, &mut rng)?;
        let schema = &self.design.schema;
        let fit_data = data.dataset.fit_data()?;
        let mut fits = Vec::with_capacity(self.fits.len());
        for (m, setup) in self.fits.iter().enumerate() {
            let prior = setup.prior.reordered(&schema.alpha, &schema.psi)?;
            let config = SamplerConfig {
                seed: derive_seed(self.seed, 1 << 32 | (index as u64) << 8 | m as u64),
                ..setup.config.clone()
            };
            let trace = run_chain(fit_data.clone(), prior, setup.kind, config)?;
            let estimates = self.estimates(&trace)?;
            fits.push(FitOutcome {
                kind: setup.kind,
                trace,
                estimates,
            });
        }
        Ok(ReplicateOutcome { index, data, fits })
    }

    fn estimates(&self, trace: &Trace) -> Result<Vec<ParameterEstimate>> {
        let mut out = Vec::new();
        let mut push = |name: String, truth: f64, samples: Vec<f64>| -> Result<()> {
            let s = summarize_samples(&name, &samples, 0.95)?;
            out.push(ParameterEstimate {
                name,
                truth,
                mean: s.mean,
                var: s.sd * s.sd,
                lower: s.lower,
                upper: s.upper,
            });
            Ok(())
        };
        for (k, name) in trace.alpha_names.iter().enumerate() {
            push(format!("alpha:{name}"), self.truth.alpha[k], trace.alpha_column(k))?;
        }
        for (k, name) in trace.psi_names.iter().enumerate() {
            let truth = self.truth.psi.get(k).copied().unwrap_or(f64::NAN);
            push(format!("psi:{name}"), truth, trace.psi_column(k))?;
        }
        push("d_beta".into(), self.truth.d_beta, trace.d_beta.clone())?;
        Ok(out)
    }
}

/// Per-model estimates from one replicate.
pub type ReplicateEstimates = Vec<(ModelKind, Vec<ParameterEstimate>)>;

type EstimateGroup<'a> = (ModelKind, String, f64, Vec<&'a ParameterEstimate>);

/// Aggregate replicate estimates. Values are sorted before summation so
/// that replicate order cannot change the result.
pub fn aggregate(outcomes: &[ReplicateEstimates]) -> StudyReport {
    let mut groups: BTreeMap<(usize, usize), EstimateGroup> = BTreeMap::new();
    for rep in outcomes {
        for (m, (kind, ests)) in rep.iter().enumerate() {
            for (p, e) in ests.iter().enumerate() {
                groups
                    .entry((m, p))
                    .or_insert_with(|| (*kind, e.name.clone(), e.truth, Vec::new()))
                    .3
                    .push(e);
            }
        }
    }
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.into_iter().sum::<f64>()
    };
    let rows = groups
        .into_values()
        .map(|(model, parameter, truth, ests)| {
            let r = ests.len() as f64;
            let means: Vec<f64> = ests.iter().map(|e| e.mean).collect();
            let avg = sorted_sum(means.clone()) / r;
            let bias = avg - truth;
            let var = sorted_sum(means.iter().map(|m| (m - avg).powi(2)).collect()) / r;
            let mse = sorted_sum(means.iter().map(|m| (m - truth).powi(2)).collect()) / r;
            let avg_var = sorted_sum(ests.iter().map(|e| e.var).collect()) / r;
            let covered = ests.iter().filter(|e| e.lower <= truth && truth <= e.upper).count();
            ReportRow {
                parameter,
                model,
                truth,
                mse,
                bias,
                var,
                avg_var,
                coverage: covered as f64 / r,
                bias_t: bias / (var / r).sqrt(),
            }
        })
        .collect();
    StudyReport {
        replicates: outcomes.len(),
        rows,
    }
}

/// Run every replicate (concurrently), hand each outcome to `sink`, and
/// aggregate. Traces are dropped after `sink` returns.
pub fn replicate_study(
    study: &Study,
    sink: &(dyn Fn(&ReplicateOutcome) -> Result<()> + Sync),
) -> Result<StudyReport> {
    study.check()?;
    let per_rep = (0..study.replicates)
        .into_par_iter()
        .map(|r| {
            let out = study.run_replicate(r)?;
            sink(&out)?;
            Ok(out.fits.into_iter().map(|f| (f.kind, f.estimates)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per_rep))
}

/// Write `replicate_NNN/data.csv` (1-based) and one trace directory per
/// fitted model under `root`.
pub fn write_replicate(root: &Path, outcome: &ReplicateOutcome) -> Result<()> {
    let dir = root.join(format!("replicate_{:03}", outcome.index + 1));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_dataset_file(&outcome.data.dataset, &dir.join("data.csv"))?;
    for fit in &outcome.fits {
        write_trace_dir(&dir.join(fit.kind.name()), &fit.trace)?;
    }
    Ok(())
}

/// Scenario file: design, truths, prior and sampler settings for a study.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    pub generator: ModelKind,
    pub fit_models: Vec<ModelKind>,
    /// Prior file, relative to the scenario file.
    pub prior: PathBuf,
    #[serde(default)]
    pub design: TrialDesign,
    pub truth: ScenarioTruth,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTruth {
    pub d_beta: f64,
    pub alpha: BTreeMap<String, f64>,
    #[serde(default)]
    pub psi: BTreeMap<String, f64>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s: Scenario = toml::from_str(&text).map_err(|source| Error::Toml {
        path: path.to_path_buf(),
        source,
    })?;
    if s.prior.is_relative() {
        s.prior = path.parent().unwrap_or(Path::new(".")).join(&s.prior);
    }
    Ok(s)
}

impl Scenario {
    /// Materialise the design and prior into a runnable study.
    pub fn build(&self) -> Result<Study> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let design = self.design.generate(&mut rng)?;
        let schema = &design.schema;
        let pick = |names: &[String], map: &BTreeMap<String, f64>, what: &str| -> Result<Vec<f64>> {
            if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
                return Err(Error::config(format!("unknown {what} truth `{extra}`")));
            }
            names
                .iter()
                .map(|n| map.get(n).copied().ok_or_else(|| Error::config(format!("missing {what} truth `{n}`"))))
                .collect()
        };
        let alpha = pick(&schema.alpha, &self.truth.alpha, "alpha")?;
        let psi = if self.generator == ModelKind::Bdprem {
            pick(&schema.psi, &self.truth.psi, "psi")?
        } else {
            Vec::new()
        };
        let prior = load_prior_file(&self.prior)?.resolve(&schema.alpha, &schema.psi)?;
        self.sampler.validate()?;
        Ok(Study {
            truth: SimulationTruth {
                alpha,
                psi,
                d_beta: self.truth.d_beta,
                generator: self.generator,
            },
            fits: self
                .fit_models
                .iter()
                .map(|&kind| FitSetup {
                    kind,
                    prior: prior.clone(),
                    config: self.sampler.clone(),
                })
                .collect(),
            design,
            replicates: self.replicates,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, variance};
    use crate::priors::{InverseGammaPrior, NormalPrior};

    fn small_design() -> Dataset {
        TrialDesign { n_subjects: 40, ..TrialDesign::default() }
            .generate(&mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
    }

    fn truth(generator: ModelKind) -> SimulationTruth {
        let mut alpha = vec![0.0; 17];
        alpha[0] = -0.42;
        alpha[3] = 1.16;
        SimulationTruth {
            alpha,
            psi: vec![2.0, -0.5, 0.5, -0.5, 0.5, 0.5],
            d_beta: 0.98,
            generator,
        }
    }

    #[test]
    fn design_shape() {
        let d = TrialDesign::default().generate(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d.schema.alpha.len(), 17);
        assert_eq!(d.schema.psi.len(), 6);
        assert_eq!(d.n_subjects(), 173);
        let expected = 173.0 * (1.0 + 4.0 * 0.8);
        assert!((d.n_obs() as f64 - expected).abs() < 40.0, "{}", d.n_obs());
        let fd = d.fit_data().unwrap();
        assert_eq!(fd.spec().fixed, vec![0, 1, 2]);
    }

    #[test]
    fn prem_generator_reports_truth() {
        let d = small_design();
        let sim = generate_dataset(&truth(ModelKind::Prem), &d, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(sim.dataset.responses(), sim.z);
        assert_eq!(sim.beta.len(), 40);
    }

    #[test]
    fn marginal_moments_match_closed_form() {
        // One design row repeated: Var(Y) = (2λ+1)ν + ν²(e^{D} − 1), E[Y] = ν.
        let schema = Schema {
            alpha: vec!["intercept".into()],
            fixed: vec!["intercept".into()],
            psi: vec!["intercept".into()],
            rate_random_effect: false,
        };
        let n = 100_000;
        let rows = (0..n)
            .map(|i| DataRow { subject: format!("{i}"), time: 0.0, y: 0, values: vec![1.0] })
            .collect();
        let design = Dataset::new(schema, rows).unwrap();
        let t = SimulationTruth { alpha: vec![0.3], psi: vec![-0.7], d_beta: 0.4, generator: ModelKind::Bdprem };
        let sim = generate_dataset(&t, &design, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let y: Vec<f64> = sim.dataset.responses().iter().map(|&v| v as f64).collect();
        let nu = (0.3f64 + 0.2).exp();
        let lambda = (-0.7f64).exp();
        let var = (2.0 * lambda + 1.0) * nu + nu * nu * (0.4f64.exp() - 1.0);
        let se_mean = (var / n as f64).sqrt();
        assert!((mean(&y) - nu).abs() < 4.0 * se_mean);
        assert!((variance(&y) / var - 1.0).abs() < 0.05);
    }

    fn quick_study(generator: ModelKind, replicates: usize) -> Study {
        let design = small_design();
        let schema = design.schema.clone();
        let prior = PriorSpec {
            alpha_names: schema.alpha.clone(),
            alpha: NormalPrior::diagonal(&[0.0; 17], &[2.0; 17]).unwrap(),
            psi_names: schema.psi.clone(),
            psi: NormalPrior::diagonal(&[0.0; 6], &[2.0; 6]).unwrap(),
            d_beta: InverseGammaPrior::new(3.0, 2.0).unwrap(),
            d_epsilon: None,
        };
        let config = SamplerConfig { iterations: 600, burn_in: 100, thin: 5, ..SamplerConfig::default() };
        Study {
            truth: truth(generator),
            design,
            fits: [ModelKind::Bdprem, ModelKind::Prem]
                .map(|kind| FitSetup { kind, prior: prior.clone(), config: config.clone() })
                .into(),
            replicates,
            seed: 9,
        }
    }

    #[test]
    fn single_replicate_degenerates() {
        let study = quick_study(ModelKind::Bdprem, 1);
        let report = replicate_study(&study, &|_| Ok(())).unwrap();
        assert_eq!(report.rows.len(), 17 + 6 + 1 + 17 + 1);
        for r in &report.rows {
            assert_eq!(r.var, 0.0);
            assert!((r.mse - r.bias * r.bias).abs() < 1e-12);
        }
        assert!(report.row(ModelKind::Prem, "psi:pb").is_none());
    }

    #[test]
    fn decomposition_identity_and_order_invariance() {
        let study = quick_study(ModelKind::Bdprem, 3);
        let per: Vec<_> = (0..3)
            .map(|r| {
                study
                    .run_replicate(r)
                    .unwrap()
                    .fits
                    .into_iter()
                    .map(|f| (f.kind, f.estimates))
                    .collect::<Vec<_>>()
            })
            .collect();
        let a = aggregate(&per);
        for r in &a.rows {
            assert!((r.mse - (r.bias * r.bias + r.var)).abs() < 1e-12 * r.mse.max(1.0));
            assert!((0.0..=1.0).contains(&r.coverage));
        }
        let mut shuffled = per.clone();
        shuffled.rotate_left(1);
        shuffled.swap(0, 1);
        assert_eq!(aggregate(&shuffled), a);
        let again = replicate_study(&study, &|_| Ok(())).unwrap();
        assert_eq!(again, a);
    }
}
