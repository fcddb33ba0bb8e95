//! Posterior summaries, residual-error decomposition and group trajectories.
//!
//! Equal-tailed intervals use linear interpolation between order statistics
//! (the "type 7" rule): the `p` quantile of `n` sorted values sits at
//! position `(n − 1)p`.

use crate::error::{Error, Result};
use crate::math::quantile_sorted;
use crate::mcmc::{ObsMean, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("interval level {level} is not in (0, 1)")))
    }
}

/// Mean, SD and equal-tailed interval of one parameter's samples. Sorting
/// first makes the result independent of sample order.
pub fn summarize_samples(name: &str, samples: &[f64], level: f64) -> Result<ParameterSummary> {
    check_level(level)?;
    if samples.len() < 2 {
        return Err(Error::domain(format!("`{name}` needs at least two samples")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let tail = (1.0 - level) / 2.0;
    let lower = quantile_sorted(&sorted, tail);
    let upper = quantile_sorted(&sorted, 1.0 - tail);
    Ok(ParameterSummary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        lower,
        upper,
        significant: lower > 0.0 || upper < 0.0,
    })
}

/// Summaries for every scalar parameter in the trace.
pub fn summarize_trace(trace: &Trace, level: f64) -> Result<Vec<ParameterSummary>> {
    if trace.len() < 2 {
        return Err(Error::domain("trace holds fewer than two samples"));
    }
    trace
        .parameters()
        .iter()
        .map(|(name, s)| summarize_samples(name, s, level))
        .collect()
}

/// One `λ̄` bin of the residual decomposition. Averages are `None` for an
/// empty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MrseRow {
    pub lower: f64,
    pub upper: f64,
    pub m: usize,
    pub mrse: Option<f64>,
    pub measurement: Option<f64>,
    pub sampling: Option<f64>,
    pub cross: Option<f64>,
}

impl MrseRow {
    /// Shares of MRSE taken by measurement, sampling and cross-product terms.
    pub fn shares(&self) -> Option<(f64, f64, f64)> {
        let total = self.mrse?;
        if total == 0.0 {
            return None;
        }
        Some((self.measurement? / total, self.sampling? / total, self.cross? / total))
    }
}

/// Default `λ̄` breaks.
pub const DEFAULT_LAMBDA_BREAKS: [f64; 2] = [0.05, 1.0];

/// Split `Σ(Y − μ̄)²/m` into measurement `Σ(Y − Z̄)²/m`, sampling
/// `Σ(Z̄ − μ̄)²/m` and cross-product `2Σ(Y − Z̄)(Z̄ − μ̄)/m` within bins of
/// `λ̄`. Bins are `[b_k, b_{k+1})` with open ends at 0 and infinity.
pub fn mrse_decomposition(y: &[u64], means: &[ObsMean], breaks: &[f64]) -> Result<Vec<MrseRow>> {
    crate::prem::check_len("observation means", y.len(), means.len())?;
    if breaks.windows(2).any(|w| w[0] >= w[1]) || breaks.iter().any(|b| !b.is_finite()) {
        return Err(Error::domain("lambda breaks must be finite and increasing"));
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend_from_slice(breaks);
    edges.push(f64::INFINITY);
    let mut rows = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut m = 0usize;
        let (mut total, mut meas, mut samp, mut cross) = (0.0, 0.0, 0.0, 0.0);
        for (&yk, o) in y.iter().zip(means) {
            if o.lambda >= lo && o.lambda < hi {
                let yk = yk as f64;
                m += 1;
                total += (yk - o.mu).powi(2);
                meas += (yk - o.z).powi(2);
                samp += (o.z - o.mu).powi(2);
                cross += 2.0 * (yk - o.z) * (o.z - o.mu);
            }
        }
        let avg = |s: f64| (m > 0).then(|| s / m as f64);
        rows.push(MrseRow {
            lower: lo.max(0.0),
            upper: hi,
            m,
            mrse: avg(total),
            measurement: avg(meas),
            sampling: avg(samp),
            cross: avg(cross),
        });
    }
    Ok(rows)
}

/// Covariates for one group at one time; `β_i = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub group: String,
    pub time: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub group: String,
    pub time: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior mean and equal-tailed interval of `exp(x'α)` per profile point.
pub fn predict_group_trajectory(trace: &Trace, profile: &[ProfilePoint], level: f64) -> Result<Vec<PredictionRow>> {
    check_level(level)?;
    if trace.is_empty() {
        return Err(Error::domain("trace holds no samples"));
    }
    let tail = (1.0 - level) / 2.0;
    profile
        .iter()
        .map(|pt| {
            crate::prem::check_len("profile covariates", trace.alpha_names.len(), pt.x.len())?;
            let mut mu: Vec<f64> = trace
                .alpha
                .iter()
                .map(|a| crate::prem::dot(&pt.x, a).exp())
                .collect();
            mu.sort_by(f64::total_cmp);
            Ok(PredictionRow {
                group: pt.group.clone(),
                time: pt.time,
                mean: mu.iter().sum::<f64>() / mu.len() as f64,
                lower: quantile_sorted(&mu, tail),
                upper: quantile_sorted(&mu, 1.0 - tail),
            })
        })
        .collect()
}
