use rayon::prelude::*;

use super::grad::data_loglik_grad;
use super::{data_loglik, HmmData, HmmModel, InitialPolicy, StateObs};
use crate::error::{Error, Result};
use crate::numcore::{
    hessian_from_gradient, numerical_hessian, optimize_mle, optimize_mle_with_gradient, wrap_angle,
    GammaParams, OptConfig, Rng, StdErr, Uncertainty, VonMisesParams,
};
use crate::track::StepSeries;

/// Working parameters with less observed information than this (standard
/// error above 1000 on the working scale) are treated as unidentified.
const MIN_INFORMATION: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct HmmConfig {
    pub restarts: usize,
    /// Estimate per-state turn-angle means instead of fixing them at 0.
    pub estimate_mu: bool,
    pub initial: InitialPolicy,
    /// Gradient tolerance relative to `max(1, |loglik|)` at the start point.
    pub grad_tol_rel: f64,
    pub max_evals: usize,
    /// Relative jitter applied to the quantile-based starting means.
    pub jitter: f64,
    /// Compute working-scale standard errors.
    pub standard_errors: bool,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            restarts: 25,
            estimate_mu: false,
            initial: InitialPolicy::Free,
            grad_tol_rel: 1e-7,
            max_evals: 40_000,
            jitter: 0.2,
            standard_errors: true,
        }
    }
}

/// Maps an [`HmmModel`] to and from its unconstrained working vector.
///
/// Per state: log mean (at covariates 0), log sd, log kappa, optional mu,
/// then log-mean slopes. Then off-diagonal transition coefficients row by
/// row, then the initial-distribution logits against state 1 when the
/// initial distribution is free.
#[derive(Debug, Clone)]
pub struct WorkingLayout {
    pub n_states: usize,
    pub transition_covariates: Vec<String>,
    pub obs_covariates: Vec<String>,
    pub estimate_mu: bool,
    pub initial: InitialPolicy,
}

impl WorkingLayout {
    fn state_block(&self) -> usize {
        3 + usize::from(self.estimate_mu) + self.obs_covariates.len()
    }

    fn free_delta(&self) -> usize {
        match self.initial {
            InitialPolicy::Free => self.n_states - 1,
            InitialPolicy::Stationary => 0,
        }
    }

    pub fn len(&self) -> usize {
        let n = self.n_states;
        n * self.state_block() + n * (n - 1) * (self.transition_covariates.len() + 1) + self.free_delta()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        let n = self.n_states;
        let mut v = Vec::with_capacity(self.len());
        for i in 1..=n {
            v.push(format!("state{i}.log_mean"));
            v.push(format!("state{i}.log_sd"));
            v.push(format!("state{i}.log_kappa"));
            if self.estimate_mu {
                v.push(format!("state{i}.mu"));
            }
            for c in &self.obs_covariates {
                v.push(format!("state{i}.log_mean:{c}"));
            }
        }
        for i in 1..=n {
            for j in (1..=n).filter(|j| *j != i) {
                v.push(format!("gamma{i}{j}.(Intercept)"));
                for c in &self.transition_covariates {
                    v.push(format!("gamma{i}{j}.{c}"));
                }
            }
        }
        for i in 2..=1 + self.free_delta() {
            v.push(format!("delta{i}.logit"));
        }
        v
    }

    pub fn pack(&self, m: &HmmModel) -> Vec<f64> {
        let n = self.n_states;
        let mut w = Vec::with_capacity(self.len());
        for s in m.states() {
            w.push(s.step.mean().ln());
            w.push(s.step.sd().ln());
            w.push(s.angle.kappa().max(1e-300).ln());
            if self.estimate_mu {
                w.push(s.angle.mu());
            }
            w.extend_from_slice(&s.mean_slopes);
        }
        for i in 0..n {
            for j in (0..n).filter(|j| *j != i) {
                for c in 0..=self.transition_covariates.len() {
                    w.push(m.transition_coef(i, j, c));
                }
            }
        }
        if self.free_delta() > 0 {
            let d0 = m.delta()[0].max(1e-300);
            for d in &m.delta()[1..] {
                w.push((d.max(1e-300) / d0).ln());
            }
        }
        w
    }

    pub fn unpack(&self, w: &[f64]) -> Result<HmmModel> {
        if w.len() != self.len() {
            return Err(Error::InvalidParameter(
                "working vector has the wrong length".into(),
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("non-finite working parameter".into()));
        }
        let n = self.n_states;
        let ko = self.obs_covariates.len();
        let mut it = w.iter().copied();
        let mut next = || it.next().expect("length checked");
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let mean = next().exp();
            let sd = next().exp();
            let kappa = next().exp();
            let mu = if self.estimate_mu { wrap_angle(next()) } else { 0.0 };
            let mean_slopes = (0..ko).map(|_| next()).collect();
            states.push(StateObs {
                step: GammaParams::new(mean, sd)?,
                angle: VonMisesParams::new(mu, kappa)?,
                mean_slopes,
            });
        }
        let mut m = HmmModel::new(
            states,
            self.transition_covariates.clone(),
            self.obs_covariates.clone(),
        )?;
        m.initial = self.initial;
        for i in 0..n {
            for j in (0..n).filter(|j| *j != i) {
                for c in 0..=self.transition_covariates.len() {
                    m.set_transition_coef(i, j, c, next())?;
                }
            }
        }
        if self.free_delta() > 0 {
            let logits: Vec<f64> = std::iter::once(0.0).chain((1..n).map(|_| next())).collect();
            let mx = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut d: Vec<f64> = e.iter().map(|v| v / z).collect();
            // exact simplex
            let rest: f64 = d[1..].iter().sum();
            d[0] = 1.0 - rest;
            if d[0] < 0.0 {
                d[0] = 0.0;
            }
            m.set_delta_unchecked(d);
        }
        Ok(m)
    }
}

impl HmmModel {
    fn set_delta_unchecked(&mut self, d: Vec<f64>) {
        self.delta = d;
    }

    /// Reorder states: new state `a` is old state `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<HmmModel> {
        let n = self.n_states();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidParameter("not a permutation of the states".into()));
        }
        let states = perm.iter().map(|&p| self.states()[p].clone()).collect();
        let mut m = HmmModel::new(
            states,
            self.transition_covariates().to_vec(),
            self.obs_covariates().to_vec(),
        )?;
        m.initial = self.initial;
        for a in 0..n {
            for b in (0..n).filter(|b| *b != a) {
                for c in 0..=self.transition_covariates().len() {
                    m.set_transition_coef(a, b, c, self.transition_coef(perm[a], perm[b], c))?;
                }
            }
        }
        m.set_delta_unchecked(perm.iter().map(|&p| self.delta()[p]).collect());
        Ok(m)
    }
}

/// Evidence that reported states are sorted by base step mean.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCertificate {
    /// Reported state `a` was optimizer state `permutation[a]`.
    pub permutation: Vec<usize>,
    /// Step mean at covariates 0, per reported state.
    pub base_means: Vec<f64>,
}

impl OrderingCertificate {
    pub fn is_ascending(&self) -> bool {
        self.base_means.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRecord {
    pub index: usize,
    pub seed: u64,
    pub init_loglik: f64,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub n_evals: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HmmFit {
    pub model: HmmModel,
    pub loglik: f64,
    pub layout: WorkingLayout,
    pub working: Vec<f64>,
    pub se: Vec<StdErr>,
    pub covariance: Option<nalgebra::DMatrix<f64>>,
    pub restarts: Vec<RestartRecord>,
    pub best_restart: usize,
    pub ordering: OrderingCertificate,
    pub converged: bool,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

impl HmmFit {
    /// `term,estimate,se,se_valid` over the working parameters.
    pub fn coefficients_csv(&self) -> String {
        use crate::io::fmt_f64;
        let mut s = String::from("term,estimate,se,se_valid\n");
        for ((name, v), se) in self.layout.names().iter().zip(&self.working).zip(&self.se) {
            s.push_str(&format!(
                "{},{},{},{}\n",
                name,
                fmt_f64(*v),
                fmt_f64(se.value),
                se.valid
            ));
        }
        s
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn initial_model(
    layout: &WorkingLayout,
    sorted_lengths: &[f64],
    jitter: f64,
    rng: &mut Rng,
) -> Result<HmmModel> {
    let n = layout.n_states;
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let q = quantile(sorted_lengths, (i as f64 + 0.5) / n as f64);
        let mean = q * rng.uniform_range(1.0 - jitter, 1.0 + jitter);
        let sd = 0.5 * mean * rng.uniform_range(1.0 - jitter, 1.0 + jitter);
        let kappa = rng.uniform_range(0.1, 2.0);
        states.push(StateObs::new(
            GammaParams::new(mean, sd)?,
            VonMisesParams::new(0.0, kappa)?,
        ));
    }
    let mut m = HmmModel::new(
        states,
        layout.transition_covariates.clone(),
        layout.obs_covariates.clone(),
    )?;
    m.initial = layout.initial;
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            m.set_transition_coef(i, j, 0, rng.uniform_range(-3.0, -1.0))?;
        }
    }
    Ok(m)
}

/// Maximum-likelihood HMM from seeded random restarts. States in the result
/// are ordered by ascending step mean at covariates 0.
pub fn fit_hmm(
    steps: &StepSeries,
    n_states: usize,
    transition_covariates: &[String],
    obs_covariates: &[String],
    config: &HmmConfig,
    rng: &Rng,
) -> Result<HmmFit> {
    if n_states == 0 {
        return Err(Error::InvalidParameter("n_states must be >= 1".into()));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidParameter("need at least one restart".into()));
    }
    let data = HmmData::prepare(steps, transition_covariates, obs_covariates)?;
    let n_obs = data.n_obs();
    if n_obs < 2 {
        return Err(Error::TooFewSteps {
            needed: 2,
            have: n_obs,
        });
    }
    let layout = WorkingLayout {
        n_states,
        transition_covariates: transition_covariates.to_vec(),
        obs_covariates: obs_covariates.to_vec(),
        estimate_mu: config.estimate_mu,
        initial: config.initial,
    };
    let mut warnings = Vec::new();
    if n_obs < 10 * layout.len() {
        warnings.push(format!(
            "{n_obs} observations for {} free parameters (fewer than 10 per parameter)",
            layout.len()
        ));
    }
    let mut sorted: Vec<f64> = data.bursts.iter().flatten().map(|o| o.l).collect();
    sorted.sort_by(f64::total_cmp);

    let objective = |w: &[f64]| -> f64 {
        match layout.unpack(w).and_then(|m| data_loglik(&m, &data)) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    // Forward-backward gradient for a free initial distribution; finite
    // differences otherwise.
    let analytic = layout.initial == InitialPolicy::Free;
    let gradient = |w: &[f64]| -> Option<Vec<f64>> {
        let m = layout.unpack(w).ok()?;
        data_loglik_grad(&m, &layout, &data).ok().map(|(_, g)| g)
    };

    let outcomes: Vec<(RestartRecord, Option<Vec<f64>>)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rr = rng.child_indexed(r as u64);
            let seed = rr.seed();
            let init = initial_model(&layout, &sorted, config.jitter, &mut rr).map(|m| layout.pack(&m));
            let mut rec = RestartRecord {
                index: r,
                seed,
                init_loglik: f64::NEG_INFINITY,
                loglik: None,
                converged: false,
                n_evals: 0,
                error: None,
            };
            let init = match init {
                Ok(w) => w,
                Err(e) => {
                    rec.error = Some(e.to_string());
                    return (rec, None);
                }
            };
            rec.init_loglik = objective(&init);
            let cfg = OptConfig {
                grad_tol: config.grad_tol_rel * rec.init_loglik.abs().max(1.0),
                max_evals: config.max_evals,
                skip_hessian: true,
                // with exact gradients the simplex only needs to find a basin
                simplex_evals: if analytic { 10 * (init.len() + 1) } else { 0 },
                // restarts drifting into a degenerate optimum (an emptied
                // state whose parameters run off) give up early
                stall_window: 50,
                ..OptConfig::default()
            };
            let result = if analytic {
                optimize_mle_with_gradient(objective, gradient, &init, &cfg)
            } else {
                optimize_mle(objective, &init, &cfg)
            };
            match result {
                Ok(res) if res.loglik.is_finite() => {
                    rec.loglik = Some(res.loglik);
                    rec.converged = res.converged;
                    rec.n_evals = res.n_evals;
                    (rec, Some(res.argmax))
                }
                Ok(_) => {
                    rec.error = Some("optimizer ended at a non-finite likelihood".into());
                    (rec, None)
                }
                Err(e) => {
                    rec.error = Some(format!("{}: {e}", e.name()));
                    (rec, None)
                }
            }
        })
        .collect();

    // Highest likelihood wins; ties go to the lower restart index.
    let mut best: Option<(usize, f64)> = None;
    for (rec, w) in &outcomes {
        if let (Some(ll), Some(_)) = (rec.loglik, w) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((rec.index, ll));
            }
        }
    }
    let Some((best_restart, _)) = best else {
        return Err(Error::AllRestartsFailed(config.restarts));
    };
    let best_converged = outcomes[best_restart].0.converged;
    let raw = layout.unpack(outcomes[best_restart].1.as_ref().expect("best has a vector"))?;

    let mut perm: Vec<usize> = (0..n_states).collect();
    perm.sort_by(|&a, &b| {
        raw.states()[a]
            .step
            .mean()
            .total_cmp(&raw.states()[b].step.mean())
            .then(a.cmp(&b))
    });
    let model = raw.permuted(&perm)?;
    let working = layout.pack(&model);
    let loglik = data_loglik(&model, &data)?;
    let ordering = OrderingCertificate {
        permutation: perm,
        base_means: model.states().iter().map(|s| s.step.mean()).collect(),
    };
    let (se, covariance) = if config.standard_errors {
        let hess = if analytic {
            hessian_from_gradient(gradient, &working)
        } else {
            Some(numerical_hessian(objective, &working))
        };
        let u = match hess {
            Some(h) => Uncertainty::from_information_partial(&(-h), MIN_INFORMATION),
            None => Uncertainty::from_information_partial(
                &nalgebra::DMatrix::from_element(working.len(), working.len(), f64::NAN),
                MIN_INFORMATION,
            ),
        };
        (u.se, u.covariance)
    } else {
        (
            vec![
                StdErr {
                    value: f64::NAN,
                    valid: false
                };
                working.len()
            ],
            None,
        )
    };
    let failed = outcomes.iter().filter(|(r, _)| r.error.is_some()).count();
    if failed > 0 {
        warnings.push(format!("{failed} of {} restarts failed", config.restarts));
    }
    if !best_converged {
        warnings.push("best restart did not meet the gradient tolerance".into());
    }
    Ok(HmmFit {
        model,
        loglik,
        layout,
        working,
        se,
        covariance,
        restarts: outcomes.into_iter().map(|(r, _)| r).collect(),
        best_restart,
        ordering,
        converged: best_converged,
        n_obs,
        warnings,
    })
}
