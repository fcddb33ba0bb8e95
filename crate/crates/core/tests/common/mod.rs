#![allow(dead_code)]

use std::collections::BTreeMap;

use bdprem::bd::{pmf, simulate, BdParams};
use bdprem::math::ln_factorial;
use bdprem::mcmc::{Block, ChainState, FitData, ModelKind, Sampler, SamplerConfig};
use bdprem::prem::{ModelSpec, ObservationDesign};
use bdprem::priors::{InverseGammaPrior, NormalPrior, PriorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

/// One subject with intercept-only mean and rate models.
pub fn single_subject(ys: &[u64], rate_re: bool) -> FitData {
    let obs = ys
        .iter()
        .enumerate()
        .map(|(j, &y)| ObservationDesign {
            subject_index: 0,
            time: j as f64,
            y,
            x: vec![1.0],
            h: vec![1.0],
            w: vec![1.0],
        })
        .collect();
    FitData::new(ModelSpec::new(1, 1, 1, vec![0], vec![], rate_re).unwrap(), obs).unwrap()
}

pub fn intercept_prior(alpha: (f64, f64), psi: (f64, f64), d_beta: (f64, f64)) -> PriorSpec {
    PriorSpec {
        alpha_names: vec!["intercept".into()],
        alpha: NormalPrior::diagonal(&[alpha.0], &[alpha.1]).unwrap(),
        psi_names: vec!["intercept".into()],
        psi: NormalPrior::diagonal(&[psi.0], &[psi.1]).unwrap(),
        d_beta: InverseGammaPrior::new(d_beta.0, d_beta.1).unwrap(),
        d_epsilon: Some(InverseGammaPrior::new(3.0, 1.0).unwrap()),
    }
}

pub fn only(block: Block, iterations: u64, seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations,
        burn_in: 0,
        thin: 1,
        seed,
        scan_probabilities: Some(BTreeMap::from([(block, 1.0)])),
        ..SamplerConfig::default()
    }
}

/// Kolmogorov-Smirnov distance between samples and a density known up to a
/// constant, using trapezoid quadrature on `[lo, hi]`.
pub fn ks_distance(samples: &[f64], lo: f64, hi: f64, log_density: impl Fn(f64) -> f64) -> f64 {
    let n = 40_001;
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let lds: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let max = lds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ds: Vec<f64> = lds.iter().map(|l| (l - max).exp()).collect();
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1] + 0.5 * h * (ds[i] + ds[i - 1]);
    }
    let total = cdf[n - 1];
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let mut worst: f64 = 0.0;
    for (r, &x) in sorted.iter().enumerate() {
        let f = if x <= lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            let pos = (x - lo) / h;
            let i = pos.floor() as usize;
            let t = pos - i as f64;
            (cdf[i] + t * (cdf[(i + 1).min(n - 1)] - cdf[i])) / total
        };
        worst = worst.max((f - r as f64 / m).abs()).max((f - (r + 1) as f64 / m).abs());
    }
    worst
}

/// Normalised full conditional of a single latent count, by enumeration.
pub fn z_enumeration(y: u64, lambda: f64, mu: f64, z_max: u64) -> Vec<f64> {
    let logs: Vec<f64> = (0..=z_max)
        .map(|z| {
            let p = pmf(y, &BdParams::new(z, lambda).unwrap());
            if p == 0.0 {
                f64::NEG_INFINITY
            } else {
                p.ln() + z as f64 * mu.ln() - ln_factorial(z)
            }
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0
}

/// Standard error of the mean from non-overlapping batch means.
pub fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Small model for joint-distribution (Geweke) checks: twenty subjects with
/// three visits, a fixed intercept and a visit covariate in the mean, and
/// optionally a binary visit covariate in the rate.
pub struct GewekeToy {
    pub data: FitData,
    pub prior: PriorSpec,
}

impl GewekeToy {
    pub fn new(rate_covariate: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let q = 1 + rate_covariate as usize;
        let mut obs = Vec::new();
        for i in 0..20 {
            for j in 0..3 {
                let mut w = vec![1.0];
                if rate_covariate {
                    w.push(rng.random_bool(0.5) as u8 as f64);
                }
                obs.push(ObservationDesign {
                    subject_index: i,
                    time: j as f64,
                    y: 0,
                    x: vec![1.0, rng.random::<f64>() - 0.5],
                    h: vec![1.0],
                    w,
                });
            }
        }
        let spec = ModelSpec::new(2, 1, q, vec![0], vec![1], false).unwrap();
        let (psi_names, psi) = if rate_covariate {
            (vec!["intercept".into(), "g".into()], NormalPrior::diagonal(&[-1.0, 0.3], &[0.5, 0.6]).unwrap())
        } else {
            (vec!["intercept".into()], NormalPrior::diagonal(&[-1.0], &[0.5]).unwrap())
        };
        let prior = PriorSpec {
            alpha_names: vec!["intercept".into(), "x".into()],
            alpha: NormalPrior::diagonal(&[0.5, 0.0], &[0.4, 0.5]).unwrap(),
            psi_names,
            psi,
            d_beta: InverseGammaPrior::new(4.0, 1.5).unwrap(),
            d_epsilon: None,
        };
        Self {
            data: FitData::new(spec, obs).unwrap(),
            prior,
        }
    }

    fn normal_draw<R: Rng>(prior: &NormalPrior, rng: &mut R) -> Vec<f64> {
        prior
            .mean()
            .iter()
            .zip(prior.sds())
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Parameters and latent counts drawn from the prior.
    pub fn prior_state<R: Rng>(&self, rng: &mut R) -> ChainState {
        let mut state = ChainState::initial(&self.data, &self.prior, ModelKind::Bdprem);
        let alpha = Self::normal_draw(&self.prior.alpha, rng);
        let precision = Gamma::new(self.prior.d_beta.shape, 1.0 / self.prior.d_beta.scale)
            .unwrap()
            .sample(rng);
        let d = 1.0 / precision;
        for e in state.eta.iter_mut() {
            *e = d.sqrt() * rng.sample::<f64, _>(StandardNormal) + alpha[0];
        }
        for (k, o) in self.data.observations().iter().enumerate() {
            let mu = (state.eta[o.subject_index] + alpha[1] * o.x[1]).exp();
            state.z[k] = Poisson::new(mu).unwrap().sample(rng) as u64;
        }
        state.alpha = alpha;
        state.psi = Self::normal_draw(&self.prior.psi, rng);
        state.d_beta = d;
        state
    }

    pub fn reports<R: Rng>(&self, state: &ChainState, rng: &mut R) -> Vec<u64> {
        self.data
            .observations()
            .iter()
            .zip(&state.z)
            .map(|(o, &z)| {
                let log_rate: f64 = o.w.iter().zip(&state.psi).map(|(w, p)| w * p).sum();
                simulate(&BdParams::new(z, log_rate.exp()).unwrap(), rng)
            })
            .collect()
    }

    /// Marginal-conditional and successive-conditional draws of `stats`.
    /// Each successive draw runs `steps` random-scan updates with frozen
    /// proposal scales and then redraws every report.
    pub fn run<const K: usize>(
        &self,
        n_marginal: usize,
        n_successive: usize,
        steps: usize,
        seed: u64,
        stats: impl Fn(&ChainState) -> [f64; K],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut marginal = vec![Vec::new(); K];
        for _ in 0..n_marginal {
            for (k, g) in stats(&self.prior_state(&mut rng)).into_iter().enumerate() {
                marginal[k].push(g);
            }
        }
        let state = self.prior_state(&mut rng);
        let ys = self.reports(&state, &mut rng);
        let obs = self
            .data
            .observations()
            .iter()
            .zip(&ys)
            .map(|(o, &y)| ObservationDesign { y, ..o.clone() })
            .collect();
        let data = FitData::new(self.data.spec().clone(), obs).unwrap();
        let config = SamplerConfig {
            iterations: 10,
            burn_in: 0,
            thin: 1,
            seed: seed + 1,
            ..SamplerConfig::default()
        };
        let mut sampler = Sampler::with_state(data, self.prior.clone(), ModelKind::Bdprem, config, state).unwrap();
        sampler.freeze_scales();
        let mut successive = vec![Vec::new(); K];
        for _ in 0..n_successive {
            for _ in 0..steps {
                sampler.step();
            }
            let ys = self.reports(sampler.state(), &mut rng);
            for (k, y) in ys.into_iter().enumerate() {
                sampler.set_response(k, y).unwrap();
            }
            for (k, g) in stats(sampler.state()).into_iter().enumerate() {
                successive[k].push(g);
            }
        }
        (marginal, successive)
    }
}

/// `(mean_marginal − mean_successive) / se` for each statistic, with a
/// batch-means standard error on the autocorrelated side.
pub fn geweke_z(marginal: &[Vec<f64>], successive: &[Vec<f64>]) -> Vec<f64> {
    marginal
        .iter()
        .zip(successive)
        .map(|(m, s)| {
            let se = (var(m) / m.len() as f64 + batch_se(s, 100).powi(2)).sqrt();
            (mean(m) - mean(s)) / se
        })
        .collect()
}

/// `ln(1 + mean Z)`. The raw mean of the latent counts has no finite prior
/// expectation when `D_β` is inverse-gamma, since `E[e^β] = E[e^{D_β/2}]`.
pub fn log_mean_z(s: &ChainState) -> f64 {
    (s.z.iter().sum::<u64>() as f64 / s.z.len() as f64).ln_1p()
}

pub fn geweke_stats(s: &ChainState) -> [f64; 3] {
    [s.alpha[0], s.d_beta, log_mean_z(s)]
}
