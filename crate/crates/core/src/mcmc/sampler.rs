use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use super::adapt::AdaptiveScale;
use super::config::{Block, ModelKind, SamplerConfig};
use super::data::FitData;
use super::proposal::propose_z;
use super::trace::{AdaptRecord, ObsMean, Trace};
use crate::bd::BdKernel;
use crate::error::{Error, Result};
use crate::math::ln_factorial;
use crate::prem::dot;
use crate::priors::{InverseGammaPrior, PriorSpec};

const OPTIMAL_RW: f64 = 2.38 * 2.38;

/// Current values of every sampled quantity. `λ` is derived from `ψ` and `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub z: Vec<u64>,
    /// Centred random effects `η_i = β_i + x_i^(F)'α^(F)`.
    pub eta: Vec<f64>,
    /// Full coefficient vector; the fixed/varying split comes from the model.
    pub alpha: Vec<f64>,
    pub psi: Vec<f64>,
    pub epsilon: Option<Vec<f64>>,
    pub d_beta: f64,
    pub d_epsilon: Option<f64>,
}

fn ig_start(p: &InverseGammaPrior) -> f64 {
    if p.shape > 1.0 {
        p.scale / (p.shape - 1.0)
    } else {
        p.scale / (p.shape + 1.0)
    }
}

fn rate_effect_enabled(data: &FitData, kind: ModelKind) -> bool {
    kind == ModelKind::Bdprem && data.spec().use_rate_random_effect
}

impl ChainState {
    /// `Z = Y`, coefficients at their prior means, `β = 0`, variances at
    /// their prior means.
    pub fn initial(data: &FitData, prior: &PriorSpec, kind: ModelKind) -> Self {
        let alpha: Vec<f64> = prior.alpha.mean().iter().copied().collect();
        let psi: Vec<f64> = match kind {
            ModelKind::Bdprem => prior.psi.mean().iter().copied().collect(),
            ModelKind::Prem => Vec::new(),
        };
        let eta = (0..data.n_subjects())
            .map(|i| data.fixed_row(i).zip(&data.spec().fixed).map(|(x, &f)| x * alpha[f]).sum())
            .collect();
        let rate_re = rate_effect_enabled(data, kind);
        Self {
            z: data.observations().iter().map(|o| o.y).collect(),
            eta,
            alpha,
            psi,
            epsilon: rate_re.then(|| vec![0.0; data.n_subjects()]),
            d_beta: ig_start(&prior.d_beta),
            d_epsilon: if rate_re { prior.d_epsilon.as_ref().map(ig_start) } else { None },
        }
    }

    /// Subject random effects `β_i = η_i − x_i^(F)'α^(F)`.
    pub fn beta(&self, data: &FitData) -> Vec<f64> {
        (0..data.n_subjects())
            .map(|i| self.eta[i] - data.fixed_row(i).zip(&data.spec().fixed).map(|(x, &f)| x * self.alpha[f]).sum::<f64>())
            .collect()
    }

    fn check(&self, data: &FitData, kind: ModelKind) -> Result<()> {
        let n = data.n_subjects();
        let check = |ctx, expected, got| crate::prem::check_len(ctx, expected, got);
        check("z", data.n_obs(), self.z.len())?;
        check("eta", n, self.eta.len())?;
        check("alpha", data.spec().p, self.alpha.len())?;
        if kind == ModelKind::Bdprem {
            check("psi", data.spec().q, self.psi.len())?;
        }
        let rate_re = rate_effect_enabled(data, kind);
        match (&self.epsilon, self.d_epsilon) {
            (Some(e), Some(d)) if rate_re => {
                check("epsilon", n, e.len())?;
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::domain("d_epsilon must be positive"));
                }
            }
            (None, None) if !rate_re => {}
            _ => return Err(Error::domain("epsilon state does not match the model")),
        }
        if !(self.d_beta > 0.0 && self.d_beta.is_finite()) {
            return Err(Error::domain("d_beta must be positive"));
        }
        for (k, (o, &z)) in data.observations().iter().zip(&self.z).enumerate() {
            if kind == ModelKind::Prem && z != o.y {
                return Err(Error::domain(format!("observation {k}: PREM requires z = y")));
            }
            if o.y > 0 && z == 0 {
                return Err(Error::domain(format!(
                    "observation {k}: latent count 0 cannot produce report {}",
                    o.y
                )));
            }
        }
        Ok(())
    }
}

/// Random-scan Metropolis-within-Gibbs sampler for one chain.
pub struct Sampler {
    data: FitData,
    prior: PriorSpec,
    kind: ModelKind,
    config: SamplerConfig,
    scan: Vec<(Block, f64)>,
    state: ChainState,
    rng: ChaCha8Rng,

    /// `n × p_F` time-fixed design, row-major.
    x_fixed: Vec<f64>,
    /// `N × p_V` time-varying design, row-major.
    x_varying: Vec<f64>,
    obs_subject: Vec<usize>,

    xv: Vec<f64>,
    exp_xv_sum: Vec<f64>,
    z_sum: Vec<f64>,
    log_rate: Vec<f64>,
    bd_ll: Vec<f64>,
    scratch_xv: Vec<f64>,
    scratch_rate: Vec<f64>,
    scratch_ll: Vec<f64>,

    eta_shape: Vec<f64>,
    alpha_v_shape: Vec<f64>,
    psi_shape: Vec<f64>,
    eps_shape: Vec<f64>,
    eta_scale: Vec<AdaptiveScale>,
    alpha_v_scale: AdaptiveScale,
    psi_scale: AdaptiveScale,
    eps_scale: Vec<AdaptiveScale>,
    z_accepted: u64,
    z_proposals: u64,
    selections: [u64; 7],
    iteration: u64,
}

fn block_slot(b: Block) -> usize {
    Block::ALL.iter().position(|&x| x == b).unwrap_or(0)
}

#[inline]
fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

impl Sampler {
    pub fn new(data: FitData, prior: PriorSpec, kind: ModelKind, config: SamplerConfig) -> Result<Self> {
        let state = ChainState::initial(&data, &prior, kind);
        Self::with_state(data, prior, kind, config, state)
    }

    /// Start from an explicit state (proposal shapes still come from the data).
    pub fn with_state(
        data: FitData,
        prior: PriorSpec,
        kind: ModelKind,
        config: SamplerConfig,
        state: ChainState,
    ) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        let spec = data.spec().clone();
        crate::prem::check_len("prior alpha", spec.p, prior.p())?;
        if kind == ModelKind::Bdprem {
            crate::prem::check_len("prior psi", spec.q, prior.q())?;
        }
        if rate_effect_enabled(&data, kind) && prior.d_epsilon.is_none() {
            return Err(Error::config("the rate random effect needs a d_epsilon prior"));
        }
        if let Some(&k) = config.z_selected.iter().find(|&&k| k >= data.n_obs()) {
            return Err(Error::config(format!("selected observation {k} is out of range")));
        }
        state.check(&data, kind)?;

        let mut active = vec![Block::Eta];
        if kind == ModelKind::Bdprem {
            active.push(Block::Z);
        }
        if !spec.varying.is_empty() {
            active.push(Block::AlphaV);
        }
        active.push(Block::DBeta);
        if !spec.fixed.is_empty() {
            active.push(Block::AlphaF);
        }
        if kind == ModelKind::Bdprem && spec.q > 0 {
            active.push(Block::Psi);
        }
        if rate_effect_enabled(&data, kind) {
            active.push(Block::Epsilon);
        }
        let scan = config.scan(&active)?;

        let n = data.n_subjects();
        let big_n = data.n_obs();
        let mut x_fixed = Vec::with_capacity(n * spec.fixed.len());
        for i in 0..n {
            x_fixed.extend(data.fixed_row(i));
        }
        let mut x_varying = Vec::with_capacity(big_n * spec.varying.len());
        let mut obs_subject = Vec::with_capacity(big_n);
        for o in data.observations() {
            x_varying.extend(spec.varying.iter().map(|&v| o.x[v]));
            obs_subject.push(o.subject_index);
        }

        // Diagonal proposal shapes from approximate curvature at the data.
        let obs = data.observations();
        let info_mu: Vec<f64> = obs.iter().map(|o| o.y as f64 + 0.5).collect();
        let info_rate: Vec<f64> = obs.iter().map(|o| if o.y > 0 { 0.5 } else { 0.1 }).collect();
        let d_beta0 = state.d_beta;
        let eta_shape = (0..n)
            .map(|i| OPTIMAL_RW / (data.subject_rows(i).map(|k| info_mu[k]).sum::<f64>() + 1.0 / d_beta0))
            .collect();
        let dv = spec.varying.len().max(1) as f64;
        let alpha_prec = prior.alpha.precision();
        let alpha_v_shape = spec
            .varying
            .iter()
            .enumerate()
            .map(|(c, &v)| {
                let info: f64 = (0..big_n).map(|k| info_mu[k] * x_varying[k * spec.varying.len() + c].powi(2)).sum();
                OPTIMAL_RW / dv / (info + alpha_prec[(v, v)])
            })
            .collect();
        let psi_shape = if kind == ModelKind::Bdprem {
            let dq = spec.q.max(1) as f64;
            let psi_prec = prior.psi.precision();
            (0..spec.q)
                .map(|c| {
                    let info: f64 = obs.iter().zip(&info_rate).map(|(o, r)| r * o.w[c] * o.w[c]).sum();
                    OPTIMAL_RW / dq / (info + psi_prec[(c, c)])
                })
                .collect()
        } else {
            Vec::new()
        };
        let eps_shape = match state.d_epsilon {
            Some(d0) => (0..n)
                .map(|i| OPTIMAL_RW / (data.subject_rows(i).map(|k| info_rate[k]).sum::<f64>() + 1.0 / d0))
                .collect(),
            None => Vec::new(),
        };

        let t = config.targets;
        let mk = |target| AdaptiveScale::with_kappa(config.initial_kappa, target, config.time_transform);
        let eps_n = if state.epsilon.is_some() { n } else { 0 };
        let mut sampler = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            eta_scale: vec![mk(t.eta); n],
            alpha_v_scale: mk(t.alpha_v),
            psi_scale: mk(t.psi),
            eps_scale: vec![mk(t.epsilon); eps_n],
            data,
            prior,
            kind,
            scan,
            state,
            x_fixed,
            x_varying,
            obs_subject,
            xv: vec![0.0; big_n],
            exp_xv_sum: vec![0.0; n],
            z_sum: vec![0.0; n],
            log_rate: vec![0.0; big_n],
            bd_ll: vec![0.0; big_n],
            scratch_xv: vec![0.0; big_n],
            scratch_rate: vec![0.0; big_n],
            scratch_ll: vec![0.0; big_n],
            eta_shape,
            alpha_v_shape,
            psi_shape,
            eps_shape,
            z_accepted: 0,
            z_proposals: 0,
            selections: [0; 7],
            iteration: 0,
            config,
        };
        sampler.refresh_caches();
        Ok(sampler)
    }

    fn refresh_caches(&mut self) {
        let spec = self.data.spec();
        let alpha_v: Vec<f64> = spec.varying.iter().map(|&v| self.state.alpha[v]).collect();
        let pv = alpha_v.len();
        self.exp_xv_sum.iter_mut().for_each(|s| *s = 0.0);
        self.z_sum.iter_mut().for_each(|s| *s = 0.0);
        for (k, o) in self.data.observations().iter().enumerate() {
            let i = o.subject_index;
            self.xv[k] = dot(&self.x_varying[k * pv..(k + 1) * pv], &alpha_v);
            self.exp_xv_sum[i] += self.xv[k].exp();
            self.z_sum[i] += self.state.z[k] as f64;
            if self.kind == ModelKind::Bdprem {
                let eps = self.state.epsilon.as_ref().map_or(0.0, |e| e[i]);
                self.log_rate[k] = dot(&o.w, &self.state.psi) + eps;
                self.bd_ll[k] = BdKernel::from_log_rate(self.log_rate[k]).log_pmf(o.y, self.state.z[k]);
            }
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn data(&self) -> &FitData {
        &self.data
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn scan_probabilities(&self) -> &[(Block, f64)] {
        &self.scan
    }

    /// Replace a reported count, keeping the current latent count. Fails if
    /// the report is impossible under the current state.
    pub fn set_response(&mut self, k: usize, y: u64) -> Result<()> {
        if k >= self.data.n_obs() {
            return Err(Error::domain(format!("observation {k} is out of range")));
        }
        match self.kind {
            ModelKind::Bdprem => {
                let ll = BdKernel::from_log_rate(self.log_rate[k]).log_pmf(y, self.state.z[k]);
                if ll == f64::NEG_INFINITY {
                    return Err(Error::domain(format!(
                        "report {y} is impossible from latent count {}",
                        self.state.z[k]
                    )));
                }
                self.bd_ll[k] = ll;
            }
            ModelKind::Prem => {
                let i = self.obs_subject[k];
                self.z_sum[i] += y as f64 - self.state.z[k] as f64;
                self.state.z[k] = y;
            }
        }
        self.data.set_y(k, y);
        Ok(())
    }

    fn center(&self, i: usize) -> f64 {
        let fixed = &self.data.spec().fixed;
        let pf = fixed.len();
        self.x_fixed[i * pf..(i + 1) * pf]
            .iter()
            .zip(fixed)
            .map(|(x, &f)| x * self.state.alpha[f])
            .sum()
    }

    // ---- log full conditionals (up to constants) ----

    /// Log conditional of `η_i` at `value`.
    pub fn log_cond_eta(&self, i: usize, value: f64) -> f64 {
        let c = self.center(i);
        self.z_sum[i] * value - value.exp() * self.exp_xv_sum[i] - (value - c).powi(2) / (2.0 * self.state.d_beta)
    }

    /// Log conditional of `α^(V)` (in the model's varying-index order).
    pub fn log_cond_alpha_v(&self, alpha_v: &[f64]) -> f64 {
        let spec = self.data.spec();
        let pv = spec.varying.len();
        let mut alpha = self.state.alpha.clone();
        for (c, &v) in spec.varying.iter().enumerate() {
            alpha[v] = alpha_v[c];
        }
        let mut total = 0.0;
        for k in 0..self.data.n_obs() {
            let xv = dot(&self.x_varying[k * pv..(k + 1) * pv], alpha_v);
            total += self.state.z[k] as f64 * xv - (self.state.eta[self.obs_subject[k]] + xv).exp();
        }
        total + self.prior.alpha.log_kernel(&alpha)
    }

    /// Log conditional of `Z_k` at `z`.
    pub fn log_cond_z(&self, k: usize, z: u64) -> f64 {
        let y = self.data.observations()[k].y;
        let bd = BdKernel::from_log_rate(self.log_rate[k]).log_pmf(y, z);
        if bd == f64::NEG_INFINITY {
            return bd;
        }
        let log_mu = self.state.eta[self.obs_subject[k]] + self.xv[k];
        bd + z as f64 * log_mu - ln_factorial(z)
    }

    /// Log conditional of `ψ`.
    pub fn log_cond_psi(&self, psi: &[f64]) -> f64 {
        let eps = self.state.epsilon.as_deref();
        let ll: f64 = self
            .data
            .observations()
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let e = eps.map_or(0.0, |e| e[o.subject_index]);
                BdKernel::from_log_rate(dot(&o.w, psi) + e).log_pmf(o.y, self.state.z[k])
            })
            .sum();
        ll + self.prior.psi.log_kernel(psi)
    }

    /// Log conditional of `ε_i` at `value`.
    pub fn log_cond_epsilon(&self, i: usize, value: f64) -> f64 {
        let Some(eps) = &self.state.epsilon else {
            return f64::NAN;
        };
        let d = self.state.d_epsilon.unwrap_or(f64::NAN);
        let ll: f64 = self
            .data
            .subject_rows(i)
            .map(|k| {
                let o = &self.data.observations()[k];
                BdKernel::from_log_rate(self.log_rate[k] - eps[i] + value).log_pmf(o.y, self.state.z[k])
            })
            .sum();
        ll - value * value / (2.0 * d)
    }

    // ---- blocks ----

    /// One random-walk sweep over all subjects' `η_i`.
    pub fn update_eta(&mut self) {
        for i in 0..self.data.n_subjects() {
            let cur = self.state.eta[i];
            let sd = (self.eta_scale[i].kappa * self.eta_shape[i]).sqrt();
            let prop = cur + sd * self.rng.sample::<f64, _>(StandardNormal);
            let ratio = self.log_cond_eta(i, prop) - self.log_cond_eta(i, cur);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                self.state.eta[i] = prop;
            }
            self.eta_scale[i].record(ok);
        }
    }

    /// Joint random-walk update of the time-varying coefficients.
    pub fn update_alpha_v(&mut self) {
        let varying = self.data.spec().varying.clone();
        let pv = varying.len();
        if pv == 0 {
            return;
        }
        let sd = self.alpha_v_scale.sd();
        let mut prop_alpha = self.state.alpha.clone();
        let mut prop_v = Vec::with_capacity(pv);
        for (c, &v) in varying.iter().enumerate() {
            let step = sd * self.alpha_v_shape[c].sqrt() * self.rng.sample::<f64, _>(StandardNormal);
            prop_alpha[v] += step;
            prop_v.push(prop_alpha[v]);
        }
        let mut cur_ll = 0.0;
        let mut new_ll = 0.0;
        for k in 0..self.data.n_obs() {
            let z = self.state.z[k] as f64;
            let eta = self.state.eta[self.obs_subject[k]];
            let xv_new = dot(&self.x_varying[k * pv..(k + 1) * pv], &prop_v);
            self.scratch_xv[k] = xv_new;
            cur_ll += z * self.xv[k] - (eta + self.xv[k]).exp();
            new_ll += z * xv_new - (eta + xv_new).exp();
        }
        let ratio = new_ll + self.prior.alpha.log_kernel(&prop_alpha)
            - cur_ll
            - self.prior.alpha.log_kernel(&self.state.alpha);
        let ok = accept(&mut self.rng, ratio);
        if ok {
            self.state.alpha = prop_alpha;
            std::mem::swap(&mut self.xv, &mut self.scratch_xv);
            self.exp_xv_sum.iter_mut().for_each(|s| *s = 0.0);
            for k in 0..self.data.n_obs() {
                self.exp_xv_sum[self.obs_subject[k]] += self.xv[k].exp();
            }
        }
        self.alpha_v_scale.record(ok);
    }

    /// Mean and covariance of the normal conditional of `α^(F)` given `η`,
    /// `α^(V)` and `D_β`.
    pub fn alpha_f_conditional(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (precision, rhs) = self.alpha_f_system();
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::domain("alpha_F conditional precision is not positive definite"))?;
        Ok((chol.solve(&rhs), chol.inverse()))
    }

    fn alpha_f_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let spec = self.data.spec();
        let (fixed, varying) = (&spec.fixed, &spec.varying);
        let pf = fixed.len();
        let lambda = self.prior.alpha.precision();
        let m = self.prior.alpha.mean();
        let d = self.state.d_beta;
        let mut precision = DMatrix::from_fn(pf, pf, |a, b| lambda[(fixed[a], fixed[b])]);
        let mut rhs = DVector::zeros(pf);
        for (a, &fa) in fixed.iter().enumerate() {
            let mut r: f64 = fixed.iter().map(|&fb| lambda[(fa, fb)] * m[fb]).sum();
            r -= varying
                .iter()
                .map(|&v| lambda[(fa, v)] * (self.state.alpha[v] - m[v]))
                .sum::<f64>();
            rhs[a] = r;
        }
        for i in 0..self.data.n_subjects() {
            let row = &self.x_fixed[i * pf..(i + 1) * pf];
            for a in 0..pf {
                rhs[a] += row[a] * self.state.eta[i] / d;
                for b in 0..pf {
                    precision[(a, b)] += row[a] * row[b] / d;
                }
            }
        }
        (precision, rhs)
    }

    /// Exact draw of the time-fixed coefficients.
    pub fn update_alpha_f(&mut self) {
        let pf = self.data.spec().fixed.len();
        if pf == 0 {
            return;
        }
        let (precision, rhs) = self.alpha_f_system();
        // A proper prior keeps the precision positive definite.
        let chol = precision
            .cholesky()
            .expect("alpha_F conditional precision must be positive definite");
        let mean = chol.solve(&rhs);
        let noise = DVector::from_fn(pf, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let lt = chol.l().transpose();
        let offset = lt
            .solve_upper_triangular(&noise)
            .expect("Cholesky factor has a positive diagonal");
        let draw = mean + offset;
        let fixed = self.data.spec().fixed.clone();
        for (a, &f) in fixed.iter().enumerate() {
            self.state.alpha[f] = draw[a];
        }
    }

    /// Shape and rate of the gamma conditional of `1/D_β`.
    pub fn d_beta_inv_conditional(&self) -> (f64, f64) {
        let beta = self.state.beta(&self.data);
        let ss: f64 = beta.iter().map(|b| b * b).sum();
        (
            beta.len() as f64 / 2.0 + self.prior.d_beta.shape,
            0.5 * ss + self.prior.d_beta.scale,
        )
    }

    pub fn update_d_beta_inv(&mut self) {
        let (shape, rate) = self.d_beta_inv_conditional();
        let k: f64 = self.rng.sample(Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters"));
        self.state.d_beta = 1.0 / k;
    }

    /// One Metropolis-Hastings sweep over every latent count.
    pub fn update_z(&mut self) {
        if self.kind == ModelKind::Prem {
            return;
        }
        for k in 0..self.data.n_obs() {
            let y = self.data.observations()[k].y;
            let v = self.state.z[k];
            let prop = propose_z(v, y, &mut self.rng);
            self.z_proposals += 1;
            if prop.log_reverse == f64::NEG_INFINITY || prop.proposal == v {
                if prop.proposal == v {
                    self.z_accepted += 1;
                }
                continue;
            }
            let u = prop.proposal;
            let new_bd = BdKernel::from_log_rate(self.log_rate[k]).log_pmf(y, u);
            if new_bd == f64::NEG_INFINITY {
                continue;
            }
            let i = self.obs_subject[k];
            let log_mu = self.state.eta[i] + self.xv[k];
            let ratio = new_bd - self.bd_ll[k] + (u as f64 - v as f64) * log_mu - ln_factorial(u)
                + ln_factorial(v)
                + prop.log_reverse
                - prop.log_forward;
            if accept(&mut self.rng, ratio) {
                self.z_accepted += 1;
                self.state.z[k] = u;
                self.bd_ll[k] = new_bd;
                self.z_sum[i] += u as f64 - v as f64;
            }
        }
    }

    /// Joint random-walk update of the rate coefficients.
    pub fn update_psi(&mut self) {
        let q = self.state.psi.len();
        if q == 0 || self.kind == ModelKind::Prem {
            return;
        }
        let sd = self.psi_scale.sd();
        let prop: Vec<f64> = (0..q)
            .map(|c| {
                self.state.psi[c] + sd * self.psi_shape[c].sqrt() * self.rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut cur = 0.0;
        let mut new = 0.0;
        for (k, o) in self.data.observations().iter().enumerate() {
            let delta = dot(&o.w, &prop) - dot(&o.w, &self.state.psi);
            let rate = self.log_rate[k] + delta;
            self.scratch_rate[k] = rate;
            self.scratch_ll[k] = BdKernel::from_log_rate(rate).log_pmf(o.y, self.state.z[k]);
            new += self.scratch_ll[k];
            cur += self.bd_ll[k];
        }
        let ratio = new + self.prior.psi.log_kernel(&prop) - cur - self.prior.psi.log_kernel(&self.state.psi);
        let ok = accept(&mut self.rng, ratio);
        if ok {
            self.state.psi = prop;
            std::mem::swap(&mut self.log_rate, &mut self.scratch_rate);
            std::mem::swap(&mut self.bd_ll, &mut self.scratch_ll);
        }
        self.psi_scale.record(ok);
    }

    /// Random-walk sweep over the subject rate effects `ε_i`.
    pub fn update_epsilon(&mut self) {
        let Some(d) = self.state.d_epsilon else {
            return;
        };
        for i in 0..self.data.n_subjects() {
            let cur = self.state.epsilon.as_ref().map_or(0.0, |e| e[i]);
            let sd = (self.eps_scale[i].kappa * self.eps_shape[i]).sqrt();
            let prop = cur + sd * self.rng.sample::<f64, _>(StandardNormal);
            let rows = self.data.subject_rows(i);
            let mut ll_new = 0.0;
            let mut ll_cur = 0.0;
            for k in rows.clone() {
                let o = &self.data.observations()[k];
                let rate = self.log_rate[k] - cur + prop;
                self.scratch_rate[k] = rate;
                self.scratch_ll[k] = BdKernel::from_log_rate(rate).log_pmf(o.y, self.state.z[k]);
                ll_new += self.scratch_ll[k];
                ll_cur += self.bd_ll[k];
            }
            let ratio = ll_new - prop * prop / (2.0 * d) - ll_cur + cur * cur / (2.0 * d);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                if let Some(e) = self.state.epsilon.as_mut() {
                    e[i] = prop;
                }
                for k in rows {
                    self.log_rate[k] = self.scratch_rate[k];
                    self.bd_ll[k] = self.scratch_ll[k];
                }
            }
            self.eps_scale[i].record(ok);
        }
    }

    /// Shape and rate of the gamma conditional of `1/D_ε`.
    pub fn d_epsilon_inv_conditional(&self) -> Option<(f64, f64)> {
        let eps = self.state.epsilon.as_ref()?;
        let prior = self.prior.d_epsilon?;
        let ss: f64 = eps.iter().map(|e| e * e).sum();
        Some((eps.len() as f64 / 2.0 + prior.shape, 0.5 * ss + prior.scale))
    }

    pub fn update_d_epsilon_inv(&mut self) {
        if let Some((shape, rate)) = self.d_epsilon_inv_conditional() {
            let h: f64 = self.rng.sample(Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters"));
            self.state.d_epsilon = Some(1.0 / h);
        }
    }

    pub fn update(&mut self, block: Block) {
        match block {
            Block::Eta => self.update_eta(),
            Block::Z => self.update_z(),
            Block::AlphaV => self.update_alpha_v(),
            Block::DBeta => self.update_d_beta_inv(),
            Block::AlphaF => self.update_alpha_f(),
            Block::Psi => self.update_psi(),
            Block::Epsilon => {
                self.update_epsilon();
                self.update_d_epsilon_inv();
            }
        }
    }

    fn select_block(&mut self) -> Block {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for &(b, p) in &self.scan {
            acc += p;
            if u < acc {
                return b;
            }
        }
        self.scan
            .iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(b, _)| *b)
            .unwrap_or(Block::Eta)
    }

    /// Select one block at random and update it.
    pub fn step(&mut self) -> Block {
        let block = self.select_block();
        self.update(block);
        self.selections[block_slot(block)] += 1;
        self.iteration += 1;
        block
    }

    /// Stop adapting every proposal scale.
    pub fn freeze_scales(&mut self) {
        for s in self
            .eta_scale
            .iter_mut()
            .chain(self.eps_scale.iter_mut())
            .chain([&mut self.alpha_v_scale, &mut self.psi_scale])
        {
            s.frozen = true;
        }
    }

    pub fn adapt_records(&self) -> Vec<AdaptRecord> {
        fn pooled(block: Block, selections: u64, scales: &[AdaptiveScale]) -> AdaptRecord {
            AdaptRecord {
                block,
                selections,
                proposals: scales.iter().map(|s| s.proposal_count).sum(),
                accepted: scales.iter().map(|s| s.accept_count).sum(),
                kappa: (!scales.is_empty())
                    .then(|| scales.iter().map(|s| s.kappa).sum::<f64>() / scales.len() as f64),
            }
        }
        self.scan
            .iter()
            .map(|&(b, _)| {
                let sel = self.selections[block_slot(b)];
                match b {
                    Block::Eta => pooled(b, sel, &self.eta_scale),
                    Block::AlphaV => pooled(b, sel, std::slice::from_ref(&self.alpha_v_scale)),
                    Block::Psi => pooled(b, sel, std::slice::from_ref(&self.psi_scale)),
                    Block::Epsilon => pooled(b, sel, &self.eps_scale),
                    Block::Z => AdaptRecord {
                        block: b,
                        selections: sel,
                        proposals: self.z_proposals,
                        accepted: self.z_accepted,
                        kappa: None,
                    },
                    Block::DBeta | Block::AlphaF => AdaptRecord {
                        block: b,
                        selections: sel,
                        proposals: sel,
                        accepted: sel,
                        kappa: None,
                    },
                }
            })
            .collect()
    }

    /// Run the configured number of iterations and collect the trace.
    pub fn run(mut self) -> Trace {
        let cfg = self.config.clone();
        let big_n = self.data.n_obs();
        let stored = cfg.stored_samples() as usize;
        let mut trace = Trace {
            alpha_names: self.prior.alpha_names.clone(),
            psi_names: if self.kind == ModelKind::Bdprem {
                self.prior.psi_names.clone()
            } else {
                Vec::new()
            },
            z_selected: cfg.z_selected.clone(),
            ..Trace::default()
        };
        trace.sample_iteration.reserve(stored);
        let mut sums = vec![ObsMean::default(); big_n];
        while self.iteration < cfg.iterations {
            self.step();
            let it = self.iteration;
            if cfg.freeze_after_burn_in && it == cfg.burn_in {
                self.freeze_scales();
            }
            if it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                trace.sample_iteration.push(it);
                trace.alpha.push(self.state.alpha.clone());
                trace.psi.push(self.state.psi.clone());
                trace.d_beta.push(self.state.d_beta);
                if let Some(d) = self.state.d_epsilon {
                    trace.d_epsilon.push(d);
                }
                if !cfg.z_selected.is_empty() {
                    trace.z_samples.push(cfg.z_selected.iter().map(|&k| self.state.z[k]).collect());
                }
                for (k, s) in sums.iter_mut().enumerate() {
                    s.z += self.state.z[k] as f64;
                    s.mu += (self.state.eta[self.obs_subject[k]] + self.xv[k]).exp();
                    if self.kind == ModelKind::Bdprem {
                        s.lambda += self.log_rate[k].exp();
                    }
                }
            }
        }
        let count = trace.len().max(1) as f64;
        trace.obs_means = sums
            .into_iter()
            .map(|s| ObsMean {
                z: s.z / count,
                lambda: s.lambda / count,
                mu: s.mu / count,
            })
            .collect();
        trace.adapt = self.adapt_records();
        trace
    }
}

/// Build a sampler from its initial state and run it.
pub fn run_chain(data: FitData, prior: PriorSpec, kind: ModelKind, config: SamplerConfig) -> Result<Trace> {
    Ok(Sampler::new(data, prior, kind, config)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bd;
    use crate::mcmc::z_proposal_log_prob;
    use crate::prem::{ModelSpec, ObservationDesign};
    use crate::priors::NormalPrior;
    use std::collections::BTreeMap;

    fn toy_data(rate_re: bool) -> FitData {
        let ys = [[3u64, 0, 5], [0, 0, 1], [12, 7, 9]];
        let mut obs = Vec::new();
        for (i, row) in ys.iter().enumerate() {
            for (j, &y) in row.iter().enumerate() {
                obs.push(ObservationDesign {
                    subject_index: i,
                    time: j as f64,
                    y,
                    x: vec![1.0, (i % 2) as f64, j as f64 / 2.0],
                    h: vec![1.0],
                    w: vec![1.0, (j == 1) as u8 as f64],
                });
            }
        }
        let spec = ModelSpec::new(3, 1, 2, vec![0, 1], vec![2], rate_re).unwrap();
        FitData::new(spec, obs).unwrap()
    }

    fn toy_prior() -> PriorSpec {
        PriorSpec {
            alpha_names: vec!["a0".into(), "a1".into(), "a2".into()],
            alpha: NormalPrior::new(
                DVector::from_vec(vec![0.5, 0.0, 0.1]),
                DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 2.0, 0.0, 0.1, 0.0, 0.5]),
            )
            .unwrap(),
            psi_names: vec!["p0".into(), "p1".into()],
            psi: NormalPrior::diagonal(&[-0.5, 0.0], &[1.0, 0.7]).unwrap(),
            d_beta: InverseGammaPrior::new(3.0, 2.0).unwrap(),
            d_epsilon: Some(InverseGammaPrior::new(3.0, 1.0).unwrap()),
        }
    }

    fn config(iterations: u64, burn_in: u64, thin: u64, seed: u64) -> SamplerConfig {
        SamplerConfig {
            iterations,
            burn_in,
            thin,
            seed,
            ..SamplerConfig::default()
        }
    }

    fn sampler(rate_re: bool, seed: u64) -> Sampler {
        Sampler::new(toy_data(rate_re), toy_prior(), ModelKind::Bdprem, config(2000, 1000, 1, seed)).unwrap()
    }

    fn assert_caches_fresh(s: &Sampler) {
        let fresh = Sampler::with_state(
            s.data.clone(),
            s.prior.clone(),
            s.kind,
            s.config.clone(),
            s.state.clone(),
        )
        .unwrap();
        for (a, b) in [
            (&s.xv, &fresh.xv),
            (&s.exp_xv_sum, &fresh.exp_xv_sum),
            (&s.z_sum, &fresh.z_sum),
            (&s.log_rate, &fresh.log_rate),
            (&s.bd_ll, &fresh.bd_ll),
        ] {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn initial_state() {
        let s = sampler(false, 1);
        let st = s.state();
        assert_eq!(st.z, vec![3, 0, 5, 0, 0, 1, 12, 7, 9]);
        assert_eq!(st.alpha, vec![0.5, 0.0, 0.1]);
        assert_eq!(st.psi, vec![-0.5, 0.0]);
        assert_eq!(st.d_beta, 1.0);
        assert!(st.beta(s.data()).iter().all(|b| b.abs() < 1e-15));
        assert!(st.epsilon.is_none());
        let s = sampler(true, 1);
        assert_eq!(s.state().d_epsilon, Some(0.5));
        let total: f64 = s.scan_probabilities().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn caches_survive_every_block() {
        let mut s = sampler(true, 7);
        for _ in 0..3000 {
            s.step();
        }
        assert_caches_fresh(&s);
        for b in Block::ALL {
            s.update(b);
            assert_caches_fresh(&s);
        }
    }

    #[test]
    fn positive_reports_keep_positive_latent_counts() {
        let mut s = sampler(true, 11);
        for _ in 0..20_000 {
            s.step();
            for (o, &z) in s.data().observations().iter().zip(&s.state().z) {
                assert!(o.y == 0 || z >= 1);
            }
        }
    }

    #[test]
    fn eta_conditional_matches_direct_formula() {
        let mut s = sampler(false, 3);
        for _ in 0..500 {
            s.step();
        }
        let data = s.data();
        let st = s.state();
        for i in 0..data.n_subjects() {
            let c: f64 = data.fixed_row(i).zip(&data.spec().fixed).map(|(x, &f)| x * st.alpha[f]).sum();
            let direct = |e: f64| -> f64 {
                data.subject_rows(i)
                    .map(|k| {
                        let o = &data.observations()[k];
                        let xv: f64 = data.spec().varying.iter().map(|&v| o.x[v] * st.alpha[v]).sum();
                        st.z[k] as f64 * e - (e + xv).exp()
                    })
                    .sum::<f64>()
                    - (e - c).powi(2) / (2.0 * st.d_beta)
            };
            for (a, b) in [(0.3, -0.4), (1.2, 2.0), (-1.0, 0.1)] {
                let log_diff = s.log_cond_eta(i, a) - s.log_cond_eta(i, b);
                let ratio = direct(a).exp() / direct(b).exp();
                assert!((log_diff.exp() - ratio).abs() <= 1e-10 * ratio.max(1.0));
            }
        }
    }

    #[test]
    fn z_kernel_satisfies_detailed_balance() {
        let s = sampler(false, 5);
        for k in [0usize, 1, 6] {
            let y = s.data().observations()[k].y;
            let lambda = s.log_rate[k].exp();
            let mu = (s.state().eta[s.obs_subject[k]] + s.xv[k]).exp();
            let target = |z: u64| -> f64 {
                let pr = bd::pmf(y, &bd::BdParams::new(z, lambda).unwrap());
                pr * mu.powi(z as i32) / (1..=z).map(|t| t as f64).product::<f64>()
            };
            let flow = |v: u64, u: u64| -> f64 {
                let pv = s.log_cond_z(k, v);
                if pv == f64::NEG_INFINITY {
                    return 0.0;
                }
                let ratio = s.log_cond_z(k, u) - pv + z_proposal_log_prob(v, u, y) - z_proposal_log_prob(u, v, y);
                target(v) * z_proposal_log_prob(u, v, y).exp() * ratio.exp().min(1.0)
            };
            for v in 0..40u64 {
                for u in 0..40u64 {
                    let (a, b) = (flow(v, u), flow(u, v));
                    assert!((a - b).abs() <= 1e-10 * a.max(b).max(1e-300), "k={k} v={v} u={u}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn psi_and_alpha_v_conditionals_match_direct_formula() {
        let mut s = sampler(true, 9);
        for _ in 0..500 {
            s.step();
        }
        let st = s.state().clone();
        let data = s.data();
        let direct_psi = |psi: &[f64]| -> f64 {
            let mut total = 0.0;
            for (k, o) in data.observations().iter().enumerate() {
                let eps = st.epsilon.as_ref().unwrap()[o.subject_index];
                let lambda = (psi[0] * o.w[0] + psi[1] * o.w[1] + eps).exp();
                total += bd::pmf(o.y, &bd::BdParams::new(st.z[k], lambda).unwrap()).ln();
            }
            total - 0.5 * ((psi[0] + 0.5) / 1.0).powi(2) - 0.5 * (psi[1] / 0.7).powi(2)
        };
        let (a, b) = ([-0.2, 0.3], [-0.9, -0.1]);
        let diff = s.log_cond_psi(&a) - s.log_cond_psi(&b);
        assert!((diff - (direct_psi(&a) - direct_psi(&b))).abs() < 1e-10);

        let direct_eps = |i: usize, e: f64| -> f64 {
            let d = st.d_epsilon.unwrap();
            data.subject_rows(i)
                .map(|k| {
                    let o = &data.observations()[k];
                    let lambda = (st.psi[0] * o.w[0] + st.psi[1] * o.w[1] + e).exp();
                    bd::pmf(o.y, &bd::BdParams::new(st.z[k], lambda).unwrap()).ln()
                })
                .sum::<f64>()
                - e * e / (2.0 * d)
        };
        for i in 0..3 {
            let diff = s.log_cond_epsilon(i, 0.4) - s.log_cond_epsilon(i, -0.3);
            assert!((diff - (direct_eps(i, 0.4) - direct_eps(i, -0.3))).abs() < 1e-10);
        }

        let prior = toy_prior();
        let direct_av = |av: f64| -> f64 {
            let mut total = 0.0;
            for (k, o) in data.observations().iter().enumerate() {
                let xv = o.x[2] * av;
                total += st.z[k] as f64 * xv - (st.eta[o.subject_index] + xv).exp();
            }
            let mut alpha = st.alpha.clone();
            alpha[2] = av;
            let d = DVector::from_vec(alpha) - prior.alpha.mean();
            total - 0.5 * (d.transpose() * prior.alpha.cov().clone().try_inverse().unwrap() * &d)[(0, 0)]
        };
        let diff = s.log_cond_alpha_v(&[0.7]) - s.log_cond_alpha_v(&[-0.2]);
        assert!((diff - (direct_av(0.7) - direct_av(-0.2))).abs() < 1e-10);
    }

    #[test]
    fn bookkeeping_and_determinism() {
        let run = |seed| run_chain(toy_data(true), toy_prior(), ModelKind::Bdprem, SamplerConfig {
            z_selected: vec![0, 6],
            ..config(1210, 1200, 1, seed)
        })
        .unwrap();
        let a = run(4);
        assert_eq!(a.len(), 10);
        assert_eq!(a.sample_iteration, (1201..=1210).collect::<Vec<_>>());
        assert_eq!(a.z_samples.len(), 10);
        assert_eq!(a.d_epsilon.len(), 10);
        assert_eq!(a, run(4));
        assert_ne!(a, run(5));
        let one = run_chain(toy_data(false), toy_prior(), ModelKind::Bdprem, config(101, 100, 1, 1)).unwrap();
        assert_eq!(one.len(), 1);
        let sel: u64 = a.adapt.iter().map(|r| r.selections).sum();
        assert_eq!(sel, 1210);
    }

    #[test]
    fn disabled_rate_effect_ignores_its_prior() {
        let mut prior = toy_prior();
        let a = run_chain(toy_data(false), prior.clone(), ModelKind::Bdprem, config(3000, 1000, 2, 8)).unwrap();
        prior.d_epsilon = None;
        let b = run_chain(toy_data(false), prior, ModelKind::Bdprem, config(3000, 1000, 2, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prem_keeps_latent_counts_at_reports() {
        let data = toy_data(false);
        let mut s = Sampler::new(data, toy_prior(), ModelKind::Prem, config(2000, 1000, 1, 2)).unwrap();
        assert!(s.scan_probabilities().iter().all(|(b, _)| !matches!(b, Block::Z | Block::Psi | Block::Epsilon)));
        for _ in 0..2000 {
            s.step();
        }
        let ys: Vec<u64> = s.data().observations().iter().map(|o| o.y).collect();
        assert_eq!(s.state().z, ys);
        s.set_response(0, 4).unwrap();
        assert_eq!(s.state().z[0], 4);
        assert_caches_fresh(&s);
    }

    #[test]
    fn set_response_guards_impossible_reports() {
        let mut s = sampler(false, 1);
        assert!(s.set_response(1, 2).is_err());
        s.set_response(0, 9).unwrap();
        assert_eq!(s.data().observations()[0].y, 9);
        assert_caches_fresh(&s);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(Sampler::new(toy_data(false), toy_prior(), ModelKind::Bdprem, config(10, 10, 1, 1)).is_err());
        let mut bad = config(10, 5, 1, 1);
        bad.scan_probabilities = Some(BTreeMap::from([(Block::Epsilon, 1.0)]));
        assert!(Sampler::new(toy_data(false), toy_prior(), ModelKind::Bdprem, bad).is_err());
        let mut prior = toy_prior();
        prior.d_epsilon = None;
        assert!(Sampler::new(toy_data(true), prior, ModelKind::Bdprem, config(10, 5, 1, 1)).is_err());
        let mut st = ChainState::initial(&toy_data(false), &toy_prior(), ModelKind::Bdprem);
        st.z[0] = 0;
        assert!(Sampler::with_state(toy_data(false), toy_prior(), ModelKind::Bdprem, config(10, 5, 1, 1), st).is_err());
    }
}
