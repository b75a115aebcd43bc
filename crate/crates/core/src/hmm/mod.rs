//! N-state hidden Markov models over step length and turn angle with
//! covariates on the transition logits and on the log step mean.

mod fit;
mod grad;
mod sim;

pub use fit::{fit_hmm, HmmConfig, HmmFit, OrderingCertificate, RestartRecord, WorkingLayout};
pub use sim::{simulate_hmm, simulate_hmm_landscape, SimConfig};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::Covariates;
use crate::io::fmt_f64;
use crate::numcore::{GammaParams, VonMisesParams};
use crate::track::StepSeries;

/// How the initial state distribution is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPolicy {
    /// Free simplex parameters shared by all bursts.
    #[default]
    Free,
    /// Stationary distribution of the first transition matrix of each burst.
    Stationary,
}

/// Observation model of one state at covariates zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateObs {
    pub step: GammaParams,
    pub angle: VonMisesParams,
    /// Slopes on the log step mean, aligned with
    /// [`HmmModel::obs_covariates`].
    pub mean_slopes: Vec<f64>,
}

impl StateObs {
    pub fn new(step: GammaParams, angle: VonMisesParams) -> Self {
        StateObs {
            step,
            angle,
            mean_slopes: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    states: Vec<StateObs>,
    obs_covariates: Vec<String>,
    transition_covariates: Vec<String>,
    /// `beta[(i * n + j) * (k + 1) + c]`, c = 0 the intercept; zero on the
    /// diagonal.
    transition: Vec<f64>,
    delta: Vec<f64>,
    pub initial: InitialPolicy,
}

impl HmmModel {
    /// Model with zero transition coefficients and uniform initial
    /// distribution. Missing slope vectors are filled with zeros.
    pub fn new(
        mut states: Vec<StateObs>,
        transition_covariates: Vec<String>,
        obs_covariates: Vec<String>,
    ) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::InvalidParameter("an HMM needs at least one state".into()));
        }
        for s in &mut states {
            if s.mean_slopes.is_empty() {
                s.mean_slopes = vec![0.0; obs_covariates.len()];
            }
            if s.mean_slopes.len() != obs_covariates.len() {
                return Err(Error::InvalidParameter(
                    "mean slopes do not match the observation covariates".into(),
                ));
            }
        }
        let k = transition_covariates.len();
        Ok(HmmModel {
            states,
            obs_covariates,
            transition_covariates,
            transition: vec![0.0; n * n * (k + 1)],
            delta: vec![1.0 / n as f64; n],
            initial: InitialPolicy::Free,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[StateObs] {
        &self.states
    }

    pub fn state_mut(&mut self, i: usize) -> &mut StateObs {
        &mut self.states[i]
    }

    pub fn obs_covariates(&self) -> &[String] {
        &self.obs_covariates
    }

    pub fn transition_covariates(&self) -> &[String] {
        &self.transition_covariates
    }

    fn tidx(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.n_states() + j) * (self.transition_covariates.len() + 1) + c
    }

    /// Coefficient `c` (0 = intercept) of the logit for `i -> j`.
    pub fn transition_coef(&self, i: usize, j: usize, c: usize) -> f64 {
        self.transition[self.tidx(i, j, c)]
    }

    /// Diagonal coefficients are the reference and cannot be set.
    pub fn set_transition_coef(&mut self, i: usize, j: usize, c: usize, v: f64) -> Result<()> {
        if i == j {
            return Err(Error::InvalidParameter(
                "diagonal transition logits are fixed at 0".into(),
            ));
        }
        let n = self.n_states();
        if i >= n || j >= n || c > self.transition_covariates.len() {
            return Err(Error::InvalidParameter("transition index out of range".into()));
        }
        let idx = self.tidx(i, j, c);
        self.transition[idx] = v;
        Ok(())
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn set_delta(&mut self, delta: Vec<f64>) -> Result<()> {
        let s: f64 = delta.iter().sum();
        if delta.len() != self.n_states() || delta.iter().any(|d| !(*d >= 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "initial distribution must be a probability vector over the states".into(),
            ));
        }
        self.delta = delta;
        Ok(())
    }

    fn values(names: &[String], x: &Covariates) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| {
                x.get(n)
                    .copied()
                    .ok_or_else(|| Error::MissingCovariate(n.clone()))
            })
            .collect()
    }

    /// Row-stochastic transition matrix at covariates `x`.
    pub fn transition_matrix(&self, x: &Covariates) -> Result<DMatrix<f64>> {
        Ok(self.transition_matrix_at(&Self::values(&self.transition_covariates, x)?))
    }

    /// As [`transition_matrix`](Self::transition_matrix) with values aligned
    /// to [`transition_covariates`](Self::transition_covariates).
    pub fn transition_matrix_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n_states();
        let mut buf = vec![0.0; n * n];
        self.fill_transition(x, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// Row-major transition matrix into `out` (length `n * n`).
    fn fill_transition(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_states();
        let k = self.transition_covariates.len();
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for (j, e) in row.iter_mut().enumerate() {
                *e = if i == j {
                    0.0
                } else {
                    let b = &self.transition[self.tidx(i, j, 0)..=self.tidx(i, j, k)];
                    b[0] + b[1..].iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
                };
            }
            let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e /= z;
            }
        }
    }

    /// Observation distributions of `state` at covariates `x`.
    pub fn obs_params_at(&self, state: usize, x: &Covariates) -> Result<(GammaParams, VonMisesParams)> {
        if state >= self.n_states() {
            return Err(Error::InvalidParameter(format!("no state {state}")));
        }
        self.obs_at(state, &Self::values(&self.obs_covariates, x)?)
    }

    /// As [`obs_params_at`](Self::obs_params_at) with values aligned to
    /// [`obs_covariates`](Self::obs_covariates).
    pub fn obs_at(&self, state: usize, x: &[f64]) -> Result<(GammaParams, VonMisesParams)> {
        let s = &self.states[state];
        if s.mean_slopes.iter().all(|b| *b == 0.0) {
            return Ok((s.step, s.angle));
        }
        let ln_mean = s.step.mean().ln() + s.mean_slopes.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        Ok((GammaParams::new(ln_mean.exp(), s.step.sd())?, s.angle))
    }

    /// Initial distribution for a burst whose first transition matrix is
    /// `gamma1`.
    fn initial_for(&self, gamma1: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self.initial {
            InitialPolicy::Free => Ok(self.delta.clone()),
            InitialPolicy::Stationary => stationary_distribution(gamma1),
        }
    }
}

/// One observation prepared for likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Obs {
    pub l: f64,
    pub ln_l: f64,
    pub turn: Option<f64>,
    pub cos_t: f64,
    pub sin_t: f64,
    pub xt: Vec<f64>,
    pub xo: Vec<f64>,
}

/// Observations grouped by burst, with covariates aligned to a model.
#[derive(Debug, Clone)]
pub(crate) struct HmmData {
    pub bursts: Vec<Vec<Obs>>,
    /// Index into the source [`StepSeries::steps`] for each observation.
    pub index: Vec<Vec<usize>>,
}

impl HmmData {
    pub fn prepare(steps: &StepSeries, transition: &[String], obs: &[String]) -> Result<HmmData> {
        let col = |n: &String| {
            steps
                .covariate_index(n)
                .ok_or_else(|| Error::MissingCovariate(n.clone()))
        };
        let tcols: Vec<usize> = transition.iter().map(col).collect::<Result<_>>()?;
        let ocols: Vec<usize> = obs.iter().map(col).collect::<Result<_>>()?;
        let mut bursts: Vec<Vec<Obs>> = Vec::new();
        let mut index: Vec<Vec<usize>> = Vec::new();
        let mut current = usize::MAX;
        for (i, s) in steps.steps.iter().enumerate() {
            if !(s.length.is_finite() && s.length >= 0.0) {
                return Err(Error::InvalidObservation {
                    index: i,
                    msg: format!("step length {} is not a non-negative number", s.length),
                });
            }
            if s.turn.is_some_and(|t| !t.is_finite()) {
                return Err(Error::InvalidObservation {
                    index: i,
                    msg: "turn angle is not finite".into(),
                });
            }
            let pick = |cols: &[usize]| -> Result<Vec<f64>> {
                cols.iter()
                    .map(|&c| {
                        s.covariates[c].ok_or_else(|| Error::InvalidObservation {
                            index: i,
                            msg: format!("covariate `{}` is nodata", steps.covariate_names[c]),
                        })
                    })
                    .collect()
            };
            let l = s.length_floored();
            let o = Obs {
                l,
                ln_l: l.ln(),
                turn: s.turn,
                cos_t: s.turn.map_or(0.0, f64::cos),
                sin_t: s.turn.map_or(0.0, f64::sin),
                xt: pick(&tcols)?,
                xo: pick(&ocols)?,
            };
            if s.burst != current {
                current = s.burst;
                bursts.push(Vec::new());
                index.push(Vec::new());
            }
            bursts.last_mut().expect("pushed above").push(o);
            index.last_mut().expect("pushed above").push(i);
        }
        Ok(HmmData { bursts, index })
    }

    pub fn n_obs(&self) -> usize {
        self.bursts.iter().map(Vec::len).sum()
    }
}

/// Per-state constants of the emission density.
struct StateConst {
    fixed: bool,
    shape: f64,
    rate: f64,
    norm: f64,
    kc: f64,
    ks: f64,
    vm_norm: f64,
}

fn state_consts(model: &HmmModel) -> Vec<StateConst> {
    model
        .states
        .iter()
        .map(|s| {
            let (shape, rate) = (s.step.shape(), s.step.rate());
            let kappa = s.angle.kappa();
            StateConst {
                fixed: s.mean_slopes.iter().all(|b| *b == 0.0),
                shape,
                rate,
                norm: shape * rate.ln() - statrs::function::gamma::ln_gamma(shape),
                kc: kappa * s.angle.mu().cos(),
                ks: kappa * s.angle.mu().sin(),
                vm_norm: s.angle.logpdf(s.angle.mu()) - kappa,
            }
        })
        .collect()
}

fn emission(model: &HmmModel, i: usize, c: &StateConst, o: &Obs) -> Result<f64> {
    let (k, r, norm) = if c.fixed {
        (c.shape, c.rate, c.norm)
    } else {
        let (g, _) = model.obs_at(i, &o.xo)?;
        let (k, r) = (g.shape(), g.rate());
        (k, r, k * r.ln() - statrs::function::gamma::ln_gamma(k))
    };
    let mut v = norm + (k - 1.0) * o.ln_l - r * o.l;
    if o.turn.is_some() {
        // kappa cos(theta - mu)
        v += c.vm_norm + c.kc * o.cos_t + c.ks * o.sin_t;
    }
    Ok(v)
}

/// Emission log-densities, `T x N`.
fn log_emissions(model: &HmmModel, burst: &[Obs]) -> Result<DMatrix<f64>> {
    let n = model.n_states();
    let consts = state_consts(model);
    let mut lp = DMatrix::zeros(burst.len(), n);
    for (i, c) in consts.iter().enumerate() {
        for (t, o) in burst.iter().enumerate() {
            lp[(t, i)] = emission(model, i, c, o)?;
        }
    }
    Ok(lp)
}

/// Transition matrices for a burst: entry t drives t -> t+1.
fn burst_gammas(model: &HmmModel, burst: &[Obs]) -> Vec<DMatrix<f64>> {
    if model.transition_covariates.is_empty() {
        return vec![model.transition_matrix_at(&[]); burst.len().min(1)];
    }
    burst.iter().map(|o| model.transition_matrix_at(&o.xt)).collect()
}

fn gamma_at(gammas: &[DMatrix<f64>], t: usize) -> &DMatrix<f64> {
    &gammas[t.min(gammas.len() - 1)]
}

fn burst_loglik(model: &HmmModel, burst: &[Obs]) -> Result<f64> {
    if burst.is_empty() {
        return Ok(0.0);
    }
    let n = model.n_states();
    let consts = state_consts(model);
    let varying = !model.transition_covariates.is_empty();
    let mut gamma = vec![0.0; n * n];
    model.fill_transition(&burst[0].xt, &mut gamma);
    let mut alpha = match model.initial {
        InitialPolicy::Free => model.delta.clone(),
        InitialPolicy::Stationary => stationary_distribution(&DMatrix::from_row_slice(n, n, &gamma))?,
    };
    let mut lp = vec![0.0; n];
    let mut prior = vec![0.0; n];
    let mut ll = 0.0;
    for (t, o) in burst.iter().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            lp[i] = emission(model, i, &consts[i], o)?;
            m = m.max(lp[i]);
        }
        if !m.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        if t == 0 {
            prior.copy_from_slice(&alpha);
        } else {
            if varying {
                model.fill_transition(&burst[t - 1].xt, &mut gamma);
            }
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += alpha[i] * gamma[i * n + j];
                }
                prior[j] = acc;
            }
        }
        let mut s = 0.0;
        for i in 0..n {
            alpha[i] = prior[i] * (lp[i] - m).exp();
            s += alpha[i];
        }
        if !(s > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        for a in alpha.iter_mut() {
            *a /= s;
        }
        ll += s.ln() + m;
    }
    Ok(ll)
}

pub(crate) fn data_loglik(model: &HmmModel, data: &HmmData) -> Result<f64> {
    let parts: Vec<Result<f64>> = data.bursts.par_iter().map(|b| burst_loglik(model, b)).collect();
    let mut ll = 0.0;
    for p in parts {
        ll += p?;
    }
    Ok(ll)
}

/// Log-likelihood summed over bursts. Turn angles that are undefined
/// contribute no factor.
pub fn hmm_loglik(model: &HmmModel, steps: &StepSeries) -> Result<f64> {
    let data = HmmData::prepare(steps, &model.transition_covariates, &model.obs_covariates)?;
    data_loglik(model, &data)
}

fn burst_viterbi(model: &HmmModel, burst: &[Obs]) -> Result<Vec<usize>> {
    let n = model.n_states();
    if burst.is_empty() {
        return Ok(vec![]);
    }
    let lp = log_emissions(model, burst)?;
    let gammas = burst_gammas(model, burst);
    let delta = model.initial_for(&gammas[0])?;
    let tlen = burst.len();
    let mut v: Vec<f64> = (0..n).map(|i| delta[i].ln() + lp[(0, i)]).collect();
    let mut back = vec![vec![0usize; n]; tlen];
    for t in 1..tlen {
        let lg = gamma_at(&gammas, t - 1).map(f64::ln);
        let mut next = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for i in 0..n {
                let c = v[i] + lg[(i, j)];
                if c > best.0 {
                    best = (c, i);
                }
            }
            next[j] = best.0 + lp[(t, j)];
            back[t][j] = best.1;
        }
        v = next;
    }
    let mut z = vec![0usize; tlen];
    let mut best = f64::NEG_INFINITY;
    for (i, &vi) in v.iter().enumerate() {
        if vi > best {
            best = vi;
            z[tlen - 1] = i;
        }
    }
    for t in (1..tlen).rev() {
        z[t - 1] = back[t][z[t]];
    }
    Ok(z)
}

/// Most probable joint state sequence per burst (0-based states).
pub fn viterbi_decode(model: &HmmModel, steps: &StepSeries) -> Result<Vec<Vec<usize>>> {
    let data = HmmData::prepare(steps, &model.transition_covariates, &model.obs_covariates)?;
    data.bursts.iter().map(|b| burst_viterbi(model, b)).collect()
}

fn burst_posteriors(model: &HmmModel, burst: &[Obs]) -> Result<Vec<Vec<f64>>> {
    let n = model.n_states();
    let tlen = burst.len();
    if tlen == 0 {
        return Ok(vec![]);
    }
    let lp = log_emissions(model, burst)?;
    let p: Vec<DVector<f64>> = (0..tlen)
        .map(|t| {
            let m = lp.row(t).max();
            DVector::from_fn(n, |i, _| (lp[(t, i)] - m).exp())
        })
        .collect();
    let gammas = burst_gammas(model, burst);
    let delta = model.initial_for(&gammas[0])?;
    let mut alphas = Vec::with_capacity(tlen);
    for t in 0..tlen {
        let prior = if t == 0 {
            DVector::from_vec(delta.clone())
        } else {
            gamma_at(&gammas, t - 1).tr_mul(&alphas[t - 1])
        };
        let mut a = prior.component_mul(&p[t]);
        let s = a.sum();
        if !(s > 0.0) {
            return Err(Error::InvalidObservation {
                index: t,
                msg: "observation has zero probability under every state".into(),
            });
        }
        a /= s;
        alphas.push(a);
    }
    let mut out = vec![vec![0.0; n]; tlen];
    let mut beta = DVector::from_element(n, 1.0);
    for t in (0..tlen).rev() {
        if t + 1 < tlen {
            beta = gamma_at(&gammas, t) * beta.component_mul(&p[t + 1]);
            let s = beta.sum();
            beta /= s;
        }
        let post = alphas[t].component_mul(&beta);
        let s = post.sum();
        out[t] = post.iter().map(|v| v / s).collect();
    }
    Ok(out)
}

/// Smoothed per-state probabilities per burst and observation.
pub fn state_probabilities(model: &HmmModel, steps: &StepSeries) -> Result<Vec<Vec<Vec<f64>>>> {
    let data = HmmData::prepare(steps, &model.transition_covariates, &model.obs_covariates)?;
    data.bursts.iter().map(|b| burst_posteriors(model, b)).collect()
}

/// Left eigenvector `pi` with `pi G = pi`, `sum pi = 1`.
pub fn stationary_distribution(gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = gamma.nrows();
    if n == 0 || gamma.ncols() != n {
        return Err(Error::NonStochasticInput("matrix is not square".into()));
    }
    for i in 0..n {
        let row = gamma.row(i);
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonStochasticInput(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        if (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochasticInput(format!(
                "row {i} sums to {}",
                row.sum()
            )));
        }
    }
    let mut a = gamma.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonStochasticInput("chain is reducible".into()))?;
    if pi.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(Error::NonStochasticInput("chain is reducible".into()));
    }
    let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|v| v / s).collect())
}

/// `id,t,x,y,state,p_state1..p_stateN`, one row per step at its start
/// location; states are 1-based.
pub fn decoded_states_csv(model: &HmmModel, steps: &StepSeries) -> Result<String> {
    let data = HmmData::prepare(steps, &model.transition_covariates, &model.obs_covariates)?;
    let n = model.n_states();
    let mut s = String::from("id,t,x,y,state");
    for i in 1..=n {
        s.push_str(&format!(",p_state{i}"));
    }
    s.push('\n');
    for (b, burst) in data.bursts.iter().enumerate() {
        let z = burst_viterbi(model, burst)?;
        let post = burst_posteriors(model, burst)?;
        for (t, &si) in data.index[b].iter().enumerate() {
            let step = &steps.steps[si];
            s.push_str(&format!(
                "{},{},{},{},{}",
                steps.burst_ids[step.burst],
                step.t_start,
                fmt_f64(step.start.x),
                fmt_f64(step.start.y),
                z[t] + 1
            ));
            for p in &post[t] {
                s.push(',');
                s.push_str(&fmt_f64(*p));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// One row of a decoded-state CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedRow {
    pub id: String,
    pub t: i64,
    pub x: f64,
    pub y: f64,
    pub state: usize,
    pub probs: Vec<f64>,
}

pub fn parse_decoded_states_csv(text: &str, origin: &Path) -> Result<Vec<DecodedRow>> {
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines
        .next()
        .map(|(_, l)| l.split(',').collect())
        .unwrap_or_default();
    let n = header.len().saturating_sub(5);
    if header.len() < 6 || header[..5] != ["id", "t", "x", "y", "state"] {
        return Err(Error::parse(origin, 1, "expected `id,t,x,y,state,p_state1,...`"));
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != n + 5 {
                return Err(Error::parse(origin, line, "wrong field count"));
            }
            let bad = |what: &str| Error::parse(origin, line, format!("bad {what}"));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
            let state: usize = f[4].parse().map_err(|_| bad("state"))?;
            if state == 0 || state > n {
                return Err(bad("state"));
            }
            Ok(DecodedRow {
                id: f[0].to_string(),
                t: f[1].parse().map_err(|_| bad("time"))?,
                x: num(f[2])?,
                y: num(f[3])?,
                state,
                probs: f[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            })
        })
        .collect()
}
