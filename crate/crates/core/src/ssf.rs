//! Integrated step selection: tentative movement kernel, control steps,
//! conditional logistic fitting and post-fit kernel correction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{Covariates, FitResult, ModelKind, Term, TermKind};
use crate::geodata::{CovariateStack, Point};
use crate::io::fmt_f64;
use crate::numcore::{
    ln_bessel_i0, optimize_mle, wrap_angle, GammaParams, OptConfig, Rng, Uncertainty, VonMisesParams,
};
use crate::rsf::SEPARATION_LIMIT;
use crate::track::StepSeries;

/// Lower working bound on the fitted step-length sd, as a fraction of the
/// mean.
pub const SD_FLOOR_FRACTION: f64 = 1e-4;

/// Attempts per control before it is dropped.
pub const MAX_CONTROL_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovementKernel {
    pub step: GammaParams,
    pub angle: VonMisesParams,
}

impl MovementKernel {
    /// Draw a step length then a turn angle.
    pub fn sample(&self, rng: &mut Rng) -> (f64, f64) {
        let l = self.step.sample(rng);
        let turn = self.angle.sample(rng);
        (l, turn)
    }

    /// Density of a step with length `l` and turn `turn`, with respect to
    /// length and angle.
    pub fn logpdf(&self, l: f64, turn: f64) -> Result<f64> {
        Ok(self.step.logpdf(l)? + self.angle.logpdf(turn))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TentativeKernel {
    pub kernel: MovementKernel,
    /// The sd estimate sits at its lower working bound (no spread in the
    /// observed lengths).
    pub sd_at_floor: bool,
    pub n_lengths: usize,
    pub n_turns: usize,
}

/// Maximum-likelihood gamma fit to floored step lengths and von Mises fit to
/// turn angles. The angular mean is 0 unless `free_mu`.
pub fn fit_tentative_kernel(steps: &StepSeries) -> Result<TentativeKernel> {
    fit_tentative_kernel_with(steps, false)
}

pub fn fit_tentative_kernel_with(steps: &StepSeries, free_mu: bool) -> Result<TentativeKernel> {
    let turns: Vec<f64> = steps.steps.iter().filter_map(|s| s.turn).collect();
    if turns.len() < 10 {
        return Err(Error::TooFewSteps {
            needed: 10,
            have: turns.len(),
        });
    }
    let lengths: Vec<f64> = steps.steps.iter().map(|s| s.length_floored()).collect();
    let (step, sd_at_floor) = fit_gamma(&lengths)?;
    let angle = fit_vonmises(&turns, free_mu)?;
    Ok(TentativeKernel {
        kernel: MovementKernel { step, angle },
        sd_at_floor,
        n_lengths: lengths.len(),
        n_turns: turns.len(),
    })
}

/// Gamma MLE over (log mean, log excess sd). Returns the fit and whether the
/// sd hit its floor.
pub fn fit_gamma(xs: &[f64]) -> Result<(GammaParams, bool)> {
    if xs.is_empty() || xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::DomainError(
            "gamma fit needs positive finite values".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mean_ln = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let floor = SD_FLOOR_FRACTION * mean;
    if var.sqrt() <= floor {
        return Ok((GammaParams::new(mean, floor)?, true));
    }
    // Per-observation average log-likelihood from sufficient statistics.
    let sd_of = |m: f64, u: f64| m * SD_FLOOR_FRACTION + u.exp();
    let ll = |p: &[f64]| {
        let m = p[0].exp();
        let sd = sd_of(m, p[1]);
        let k = (m / sd).powi(2);
        let r = m / (sd * sd);
        k * r.ln() - statrs::function::gamma::ln_gamma(k) + (k - 1.0) * mean_ln - r * mean
    };
    let init = [mean.ln(), (var.sqrt() - floor).max(floor).ln()];
    let cfg = OptConfig {
        grad_tol: 1e-10,
        skip_hessian: true,
        ..OptConfig::default()
    };
    let r = optimize_mle(ll, &init, &cfg)?;
    let m = r.argmax[0].exp();
    let sd = sd_of(m, r.argmax[1]);
    let at_floor = sd <= floor * 1.01;
    Ok((GammaParams::new(m, sd)?, at_floor))
}

/// Von Mises MLE. With `free_mu` the mean direction is the circular mean;
/// otherwise it is 0.
pub fn fit_vonmises(thetas: &[f64], free_mu: bool) -> Result<VonMisesParams> {
    if thetas.is_empty() {
        return Err(Error::TooFewSteps { needed: 1, have: 0 });
    }
    let n = thetas.len() as f64;
    let c = thetas.iter().map(|t| t.cos()).sum::<f64>() / n;
    let s = thetas.iter().map(|t| t.sin()).sum::<f64>() / n;
    let (mu, rbar) = if free_mu {
        (s.atan2(c), c.hypot(s))
    } else {
        (0.0, c)
    };
    if rbar <= 0.0 {
        return VonMisesParams::new(mu, 0.0);
    }
    let ll = |p: &[f64]| {
        let k = p[0].exp();
        k * rbar - ln_bessel_i0(k)
    };
    let init = [(2.0 * rbar / (1.0 - rbar).max(1e-3)).ln()];
    let cfg = OptConfig {
        grad_tol: 1e-12,
        skip_hessian: true,
        ..OptConfig::default()
    };
    let r = optimize_mle(ll, &init, &cfg)?;
    VonMisesParams::new(mu, r.argmax[0].exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub case: bool,
    pub end: Point,
    pub l: f64,
    pub ln_l: f64,
    pub cos_theta: f64,
    /// Covariates at the end point, aligned with
    /// [`StepTable::covariate_names`].
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    /// Index of the observed step in the source series.
    pub id: usize,
    /// Case row first, then controls, as built by [`generate_controls`];
    /// fitting accepts the case row anywhere.
    pub rows: Vec<StepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTable {
    pub covariate_names: Vec<String>,
    pub strata: Vec<Stratum>,
    /// Controls given up on after [`MAX_CONTROL_ATTEMPTS`] failed draws.
    pub dropped_controls: usize,
    /// Observed steps without a turn angle (burst starts, floored steps).
    pub skipped_no_turn: usize,
    /// Observed steps whose end point is nodata.
    pub skipped_nodata: usize,
    pub seed: Option<u64>,
}

impl StepTable {
    pub fn n_rows(&self) -> usize {
        self.strata.iter().map(|s| s.rows.len()).sum()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// `stratum,case,l,ln_l,cos_theta,<covariates>`
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("stratum,case,l,ln_l,cos_theta");
        for n in &self.covariate_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for st in &self.strata {
            for r in &st.rows {
                s.push_str(&format!(
                    "{},{},{},{},{}",
                    st.id,
                    u8::from(r.case),
                    fmt_f64(r.l),
                    fmt_f64(r.ln_l),
                    fmt_f64(r.cos_theta)
                ));
                for v in &r.x {
                    s.push(',');
                    s.push_str(&fmt_f64(*v));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Reads the CSV form back. End points are not part of it and come back
    /// as the origin.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<StepTable> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| Error::parse(origin, 1, "empty step table"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 5 || cols[..5] != ["stratum", "case", "l", "ln_l", "cos_theta"] {
            return Err(Error::parse(
                origin,
                1,
                "expected `stratum,case,l,ln_l,cos_theta,...`",
            ));
        }
        let covariate_names: Vec<String> = cols[5..].iter().map(|s| s.to_string()).collect();
        let mut strata: Vec<Stratum> = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::parse(origin, lineno, "wrong field count"));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad number `{s}`")))
            };
            let id: usize = f[0]
                .parse()
                .map_err(|_| Error::parse(origin, lineno, "bad stratum id"))?;
            let case = match f[1] {
                "1" => true,
                "0" => false,
                _ => return Err(Error::parse(origin, lineno, "case must be 0 or 1")),
            };
            let row = StepRow {
                case,
                end: Point::default(),
                l: num(f[2])?,
                ln_l: num(f[3])?,
                cos_theta: num(f[4])?,
                x: f[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            };
            match strata.last_mut() {
                Some(s) if s.id == id => {
                    if case {
                        return Err(Error::parse(origin, lineno, "second case row in stratum"));
                    }
                    s.rows.push(row);
                }
                _ => {
                    if !case {
                        return Err(Error::parse(
                            origin,
                            lineno,
                            "stratum must start with its case row",
                        ));
                    }
                    strata.push(Stratum { id, rows: vec![row] });
                }
            }
        }
        Ok(StepTable {
            covariate_names,
            strata,
            dropped_controls: 0,
            skipped_no_turn: 0,
            skipped_nodata: 0,
            seed: None,
        })
    }
}

fn step_row(case: bool, end: Point, l: f64, turn: f64, x: Vec<f64>) -> StepRow {
    StepRow {
        case,
        end,
        l,
        ln_l: l.ln(),
        cos_theta: turn.cos(),
        x,
    }
}

/// Build one stratum per observed step with a defined turn angle. Control
/// end points come from kernel draws applied to the previous heading; draws
/// off the rasters or on nodata are redrawn and eventually dropped.
pub fn generate_controls(
    steps: &StepSeries,
    kernel: &MovementKernel,
    n_controls: usize,
    grids: &CovariateStack,
    rng: &Rng,
) -> Result<StepTable> {
    if n_controls == 0 {
        return Err(Error::InvalidParameter(
            "need at least one control per step".into(),
        ));
    }
    if steps.covariate_names != grids.names() {
        return Err(Error::InvalidParameter(
            "step covariates do not match the supplied rasters".into(),
        ));
    }
    enum Outcome {
        NoTurn,
        Nodata,
        Stratum(Stratum, usize),
    }
    let outcomes: Vec<Result<Outcome>> = steps
        .steps
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (Some(turn), Some(prev)) = (s.turn, s.prev_heading) else {
                return Ok(Outcome::NoTurn);
            };
            let Some(x) = s.covariates.iter().copied().collect::<Option<Vec<f64>>>() else {
                return Ok(Outcome::Nodata);
            };
            let mut rng = rng.child_indexed(i as u64);
            let mut rows = vec![step_row(true, s.end, s.length_floored(), turn, x)];
            let mut dropped = 0;
            for _ in 0..n_controls {
                let mut placed = false;
                for _ in 0..MAX_CONTROL_ATTEMPTS {
                    let (l, t) = kernel.sample(&mut rng);
                    let end = s.start.step(l, wrap_angle(prev + t));
                    if let Some(x) = grids.extract_complete(end) {
                        rows.push(step_row(false, end, l, t, x));
                        placed = true;
                        break;
                    }
                }
                dropped += usize::from(!placed);
            }
            if rows.len() == 1 {
                return Err(Error::ExtentExhausted(format!(
                    "every control for step {i} fell outside the rasters or on nodata"
                )));
            }
            Ok(Outcome::Stratum(Stratum { id: i, rows }, dropped))
        })
        .collect();
    let mut table = StepTable {
        covariate_names: steps.covariate_names.clone(),
        strata: Vec::new(),
        dropped_controls: 0,
        skipped_no_turn: 0,
        skipped_nodata: 0,
        seed: Some(rng.seed()),
    };
    for o in outcomes {
        match o? {
            Outcome::NoTurn => table.skipped_no_turn += 1,
            Outcome::Nodata => table.skipped_nodata += 1,
            Outcome::Stratum(s, d) => {
                table.dropped_controls += d;
                table.strata.push(s);
            }
        }
    }
    Ok(table)
}

/// `{cov, l, ln l, cos theta}`, plus `cov:ln l` when `with_interaction`.
pub fn make_ssf_spec(available: &[String], covariate: &str, with_interaction: bool) -> Result<Vec<TermKind>> {
    if !available.iter().any(|n| n == covariate) {
        return Err(Error::UnknownCovariate(covariate.to_string()));
    }
    let mut spec = vec![
        TermKind::Covariate(covariate.to_string()),
        TermKind::StepLength,
        TermKind::LogStepLength,
        TermKind::CosTurn,
    ];
    if with_interaction {
        spec.push(TermKind::CovariateXLogStep(covariate.to_string()));
    }
    Ok(spec)
}

enum Col {
    Cov(usize),
    L,
    LnL,
    Cos,
    CovLnL(usize),
}

impl Col {
    fn value(&self, r: &StepRow) -> f64 {
        match *self {
            Col::Cov(j) => r.x[j],
            Col::L => r.l,
            Col::LnL => r.ln_l,
            Col::Cos => r.cos_theta,
            Col::CovLnL(j) => r.x[j] * r.ln_l,
        }
    }
}

fn resolve(table: &StepTable, kind: &TermKind) -> Result<Col> {
    let idx = |c: &str| {
        table
            .covariate_index(c)
            .ok_or_else(|| Error::UnknownCovariate(c.to_string()))
    };
    Ok(match kind {
        TermKind::Intercept => {
            return Err(Error::InvalidParameter(
                "an intercept is constant within strata and cannot be estimated".into(),
            ))
        }
        TermKind::Covariate(c) => Col::Cov(idx(c)?),
        TermKind::StepLength => Col::L,
        TermKind::LogStepLength => Col::LnL,
        TermKind::CosTurn => Col::Cos,
        TermKind::CovariateXLogStep(c) => Col::CovLnL(idx(c)?),
    })
}

/// Per-stratum design matrices with a fixed offset.
struct Clogit {
    /// rows x free terms, case row first.
    xs: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
}

impl Clogit {
    fn new(table: &StepTable, free: &[TermKind], fixed: &[(TermKind, f64)]) -> Result<Self> {
        let cols: Vec<Col> = free.iter().map(|k| resolve(table, k)).collect::<Result<_>>()?;
        let fixed_cols: Vec<(Col, f64)> = fixed
            .iter()
            .map(|(k, v)| Ok((resolve(table, k)?, *v)))
            .collect::<Result<_>>()?;
        let mut xs = Vec::with_capacity(table.strata.len());
        let mut offsets = Vec::with_capacity(table.strata.len());
        for st in &table.strata {
            let cases: Vec<usize> = (0..st.rows.len()).filter(|&i| st.rows[i].case).collect();
            if cases.len() != 1 {
                return Err(Error::InvalidParameter(format!(
                    "stratum {} must hold exactly one case row",
                    st.id
                )));
            }
            // case row first, controls in table order
            let order: Vec<&StepRow> = std::iter::once(&st.rows[cases[0]])
                .chain(st.rows.iter().filter(|r| !r.case))
                .collect();
            xs.push(DMatrix::from_fn(order.len(), cols.len(), |i, j| {
                cols[j].value(order[i])
            }));
            offsets.push(DVector::from_fn(order.len(), |i, _| {
                fixed_cols.iter().map(|(c, b)| b * c.value(order[i])).sum()
            }));
        }
        Ok(Clogit { xs, offsets })
    }

    fn k(&self) -> usize {
        self.xs.first().map_or(0, |x| x.ncols())
    }

    /// Log-likelihood, score and information of one stratum.
    fn stratum(&self, s: usize, beta: &DVector<f64>, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let x = &self.xs[s];
        let eta = x * beta + &self.offsets[s];
        let m = eta.max();
        let w: DVector<f64> = eta.map(|e| (e - m).exp());
        let z = w.sum();
        let ll = eta[0] - m - z.ln();
        let k = x.ncols();
        if !derivs {
            return (ll, DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        let p = w / z;
        let xbar = x.transpose() * &p;
        let score = x.row(0).transpose() - &xbar;
        let mut info = DMatrix::zeros(k, k);
        for (i, pi) in p.iter().enumerate() {
            let d = x.row(i).transpose() - &xbar;
            info += *pi * &d * d.transpose();
        }
        (ll, score, info)
    }

    /// Stratum terms run in parallel; the reduction is sequential in stratum
    /// order so results are bit-stable.
    fn eval(&self, beta: &DVector<f64>, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let parts: Vec<_> = (0..self.xs.len())
            .into_par_iter()
            .map(|s| self.stratum(s, beta, derivs))
            .collect();
        let k = self.k();
        let (mut ll, mut g, mut h) = if derivs {
            (0.0, DVector::zeros(k), DMatrix::zeros(k, k))
        } else {
            (0.0, DVector::zeros(0), DMatrix::zeros(0, 0))
        };
        for (l, sg, sh) in parts {
            ll += l;
            if derivs {
                g += sg;
                h += sh;
            }
        }
        (ll, g, h)
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        self.eval(&DVector::from_column_slice(beta), false).0
    }

    fn check_rank(&self, names: &[String]) -> Result<()> {
        let k = self.k();
        let mut cp = DMatrix::<f64>::zeros(k, k);
        for x in &self.xs {
            let mean = x.row_mean();
            for i in 0..x.nrows() {
                let d = x.row(i) - &mean;
                cp += d.transpose() * d;
            }
        }
        for (j, name) in names.iter().enumerate() {
            if cp[(j, j)] <= 1e-12 * (1.0 + cp.diagonal().amax()) {
                return Err(Error::SingularDesign(format!(
                    "term `{name}` does not vary within strata"
                )));
            }
        }
        let d: Vec<f64> = (0..k).map(|i| cp[(i, i)].sqrt()).collect();
        let corr = DMatrix::from_fn(k, k, |i, j| cp[(i, j)] / (d[i] * d[j]));
        if corr.symmetric_eigenvalues().min() < 1e-10 {
            return Err(Error::SingularDesign("terms are collinear within strata".into()));
        }
        Ok(())
    }
}

/// Conditional (stratified) logistic regression: maximizes
/// `sum_t [eta_case - log sum_i exp(eta_i)]`.
pub fn fit_conditional_logistic(table: &StepTable, spec: &[TermKind]) -> Result<FitResult> {
    fit_conditional_logistic_fixed(table, spec, &[])
}

/// As [`fit_conditional_logistic`], holding the `fixed` terms at the given
/// values. Fixed terms are reported with a zero, invalid standard error.
pub fn fit_conditional_logistic_fixed(
    table: &StepTable,
    spec: &[TermKind],
    fixed: &[(TermKind, f64)],
) -> Result<FitResult> {
    if table.strata.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 strata, have {}",
            table.strata.len()
        )));
    }
    let free: Vec<TermKind> = spec
        .iter()
        .filter(|k| !fixed.iter().any(|(f, _)| f == *k))
        .cloned()
        .collect();
    if free.is_empty() {
        return Err(Error::InvalidParameter("no free terms to estimate".into()));
    }
    let model = Clogit::new(table, &free, fixed)?;
    let names: Vec<String> = free.iter().map(TermKind::name).collect();
    model.check_rank(&names)?;
    let k = free.len();

    let separated = |beta: &DVector<f64>| -> Result<()> {
        if let Some(i) = beta.iter().position(|b| !(b.abs() <= SEPARATION_LIMIT)) {
            return Err(Error::SeparationDetected {
                term: names[i].clone(),
                limit: SEPARATION_LIMIT,
            });
        }
        Ok(())
    };

    let mut beta = DVector::<f64>::zeros(k);
    let (mut ll, _, _) = model.eval(&beta, false);
    let mut converged = false;
    for _ in 0..100 {
        let (_, g, info) = model.eval(&beta, true);
        let Some(chol) = info.clone().cholesky() else {
            let i = beta.iamax();
            return Err(Error::SeparationDetected {
                term: names[i].clone(),
                limit: SEPARATION_LIMIT,
            });
        };
        let delta = chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + step * &delta;
            let lc = model.eval(&cand, false).0;
            if lc.is_finite() && lc >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = lc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        separated(&beta)?;
        if !accepted {
            break;
        }
        if delta.amax() * step < 1e-10 * (1.0 + beta.amax()) {
            converged = model.eval(&beta, true).1.amax() < 1e-6;
            break;
        }
    }
    if !converged {
        let cfg = OptConfig {
            grad_tol: 1e-7,
            skip_hessian: true,
            ..OptConfig::default()
        };
        let r = optimize_mle(|b| model.loglik(b), beta.as_slice(), &cfg)?;
        let cand = DVector::from_vec(r.argmax);
        separated(&cand)?;
        if r.loglik >= ll {
            beta = cand;
            ll = r.loglik;
        }
        converged = model.eval(&beta, true).1.amax() < 1e-6;
    }

    let (_, _, info) = model.eval(&beta, true);
    let unc = Uncertainty::from_information(&info);
    // Report in spec order, fixed terms included.
    let mut cov_index = Vec::new();
    let mut terms = Vec::with_capacity(spec.len());
    for kind in spec {
        if let Some(j) = free.iter().position(|f| f == kind) {
            cov_index.push(Some(j));
            terms.push(Term {
                kind: kind.clone(),
                estimate: beta[j],
                se: unc.se[j],
            });
        } else {
            let v = fixed
                .iter()
                .find(|(f, _)| f == kind)
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
            cov_index.push(None);
            terms.push(Term {
                kind: kind.clone(),
                estimate: v,
                se: crate::numcore::StdErr {
                    value: 0.0,
                    valid: false,
                },
            });
        }
    }
    let covariance = unc.covariance.map(|c| {
        DMatrix::from_fn(spec.len(), spec.len(), |a, b| {
            match (cov_index[a], cov_index[b]) {
                (Some(i), Some(j)) => c[(i, j)],
                _ => 0.0,
            }
        })
    });
    Ok(FitResult {
        terms,
        covariance,
        loglik: ll,
        n_obs: table.strata.len(),
        converged,
        model_kind: ModelKind::Ssf,
        seed: table.seed,
    })
}

/// Conditional log-likelihood at `beta` (aligned with `spec`).
pub fn clogit_loglik(table: &StepTable, spec: &[TermKind], beta: &[f64]) -> Result<f64> {
    Ok(Clogit::new(table, spec, &[])?.loglik(beta))
}

/// Analytic score of [`clogit_loglik`].
pub fn clogit_score(table: &StepTable, spec: &[TermKind], beta: &[f64]) -> Result<Vec<f64>> {
    let m = Clogit::new(table, spec, &[])?;
    Ok(m.eval(&DVector::from_column_slice(beta), true)
        .1
        .as_slice()
        .to_vec())
}

/// Which kernel parameters the movement coefficients correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelUpdate {
    pub shape: bool,
    pub rate: bool,
    pub kappa: bool,
}

impl Default for KernelUpdate {
    fn default() -> Self {
        KernelUpdate {
            shape: true,
            rate: true,
            kappa: true,
        }
    }
}

/// Kernel corrected by the fitted movement coefficients, evaluated at the
/// covariates `x` for interaction terms.
pub fn update_movement_kernel(
    kernel: &MovementKernel,
    fit: &FitResult,
    x: &Covariates,
) -> Result<MovementKernel> {
    update_movement_kernel_with(kernel, fit, x, KernelUpdate::default())
}

pub fn update_movement_kernel_with(
    kernel: &MovementKernel,
    fit: &FitResult,
    x: &Covariates,
    which: KernelUpdate,
) -> Result<MovementKernel> {
    let need = |kind: TermKind| {
        fit.term(&kind)
            .map(|t| t.estimate)
            .ok_or_else(|| Error::InvalidParameter(format!("fit has no `{}` term", kind.name())))
    };
    let mut shape = kernel.step.shape();
    let mut rate = kernel.step.rate();
    let mut kappa = kernel.angle.kappa();
    if which.shape {
        shape += need(TermKind::LogStepLength)?;
        for t in &fit.terms {
            if let TermKind::CovariateXLogStep(c) = &t.kind {
                let v = x.get(c).ok_or_else(|| Error::MissingCovariate(c.clone()))?;
                shape += t.estimate * v;
            }
        }
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidUpdatedKernel {
                term: "ln_l".into(),
                msg: format!("updated gamma shape {shape} is not positive"),
            });
        }
    }
    if which.rate {
        rate -= need(TermKind::StepLength)?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidUpdatedKernel {
                term: "l".into(),
                msg: format!("updated gamma rate {rate} is not positive"),
            });
        }
    }
    if which.kappa {
        kappa += need(TermKind::CosTurn)?;
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidUpdatedKernel {
                term: "cos_theta".into(),
                msg: format!("updated von Mises concentration {kappa} is negative"),
            });
        }
    }
    Ok(MovementKernel {
        step: GammaParams::from_shape_rate(shape, rate)?,
        angle: VonMisesParams::new(kernel.angle.mu(), kappa)?,
    })
}
