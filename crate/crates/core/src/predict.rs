//! Downstream products of fitted models: log-RSS values and curves, RSF
//! maps, steady-state utilization from simulated SSF paths, and HMM state
//! probability curves and maps.

use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{Covariates, FitResult, TermKind};
use crate::geodata::{CovariateStack, Point, RasterGrid};
use crate::hmm::{stationary_distribution, HmmFit};
use crate::io::fmt_f64;
use crate::numcore::{wrap_angle, Rng};
use crate::ssf::{update_movement_kernel_with, KernelUpdate, MovementKernel};
use crate::track::{StepSeries, Track};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub series: String,
    pub x: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveTable {
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn series(&self, name: &str) -> Vec<&CurveRow> {
        self.rows.iter().filter(|r| r.series == name).collect()
    }

    pub fn series_names(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.series) {
                v.push(r.series.clone());
            }
        }
        v
    }

    pub fn extend(&mut self, other: CurveTable) {
        self.rows.extend(other.rows);
    }

    /// `series,x,value,se`
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("series,x,value,se\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.series,
                fmt_f64(r.x),
                fmt_f64(r.value),
                fmt_f64(r.se)
            ));
        }
        s
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<CurveTable> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some("series,x,value,se") {
            return Err(Error::parse(origin, 1, "expected header `series,x,value,se`"));
        }
        let rows = lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let line = i + 1;
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(Error::parse(origin, line, "expected 4 fields"));
                }
                let num = |s: &str| -> Result<f64> {
                    if s == "NA" {
                        return Ok(f64::NAN);
                    }
                    s.parse()
                        .map_err(|_| Error::parse(origin, line, format!("bad number `{s}`")))
                };
                Ok(CurveRow {
                    series: f[0].to_string(),
                    x: num(f[1])?,
                    value: num(f[2])?,
                    se: num(f[3])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CurveTable { rows })
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("curve grid is empty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "curve grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Step length (and turn) at which interaction terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovementContext {
    pub l: f64,
    pub cos_theta: f64,
}

impl MovementContext {
    pub fn at_length(l: f64) -> Self {
        MovementContext { l, cos_theta: 1.0 }
    }
}

/// `d(eta(x1) - eta(x2)) / d beta`, aligned with `fit.terms`.
fn rss_gradient(
    fit: &FitResult,
    x1: &Covariates,
    x2: &Covariates,
    ctx: Option<MovementContext>,
) -> Result<Vec<f64>> {
    let get = |x: &Covariates, c: &String| {
        x.get(c)
            .copied()
            .ok_or_else(|| Error::MissingCovariate(c.clone()))
    };
    fit.terms
        .iter()
        .map(|t| {
            Ok(match &t.kind {
                // excluded from the RSF; cancels within SSF strata
                TermKind::Intercept => 0.0,
                TermKind::Covariate(c) => get(x1, c)? - get(x2, c)?,
                // identical movement context on both sides
                TermKind::StepLength | TermKind::LogStepLength | TermKind::CosTurn => 0.0,
                TermKind::CovariateXLogStep(c) => {
                    let ctx = ctx.ok_or(Error::MissingMovementContext)?;
                    (get(x1, c)? - get(x2, c)?) * ctx.l.ln()
                }
            })
        })
        .collect()
}

/// `eta(x1) - eta(x2)` with a delta-method standard error. The se is NaN
/// when the fit carries no covariance.
pub fn log_rss(
    fit: &FitResult,
    x1: &Covariates,
    x2: &Covariates,
    ctx: Option<MovementContext>,
) -> Result<(f64, f64)> {
    let d = rss_gradient(fit, x1, x2, ctx)?;
    let value: f64 = d.iter().zip(&fit.terms).map(|(d, t)| d * t.estimate).sum();
    let se = match &fit.covariance {
        _ if d.iter().all(|v| *v == 0.0) => 0.0,
        Some(cov) => {
            let dv = DVector::from_vec(d);
            (dv.transpose() * cov * &dv)[(0, 0)].max(0.0).sqrt()
        }
        None => f64::NAN,
    };
    Ok((value, se))
}

/// log-RSS of each grid value of `covariate` against `reference`, other
/// covariates held at `others`.
pub fn logrss_curve(
    fit: &FitResult,
    covariate: &str,
    grid: &[f64],
    reference: f64,
    others: &Covariates,
    ctx: Option<MovementContext>,
    series: &str,
) -> Result<CurveTable> {
    check_grid(grid)?;
    let mut base = others.clone();
    base.insert(covariate.to_string(), reference);
    let rows = grid
        .iter()
        .map(|&x| {
            let mut x1 = base.clone();
            x1.insert(covariate.to_string(), x);
            let (value, se) = log_rss(fit, &x1, &base, ctx)?;
            Ok(CurveRow {
                series: series.to_string(),
                x,
                value,
                se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveTable { rows })
}

/// Empirical quantiles of floored step lengths.
pub fn step_length_quantiles(steps: &StepSeries, probs: &[f64]) -> Result<Vec<f64>> {
    let mut ls: Vec<f64> = steps.steps.iter().map(|s| s.length_floored()).collect();
    if ls.is_empty() {
        return Err(Error::TooFewSteps { needed: 1, have: 0 });
    }
    ls.sort_by(f64::total_cmp);
    probs
        .iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("quantile {p} outside [0, 1]")));
            }
            let pos = p * (ls.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            Ok(ls[lo] + (ls[hi] - ls[lo]) * (pos - lo as f64))
        })
        .collect()
}

fn output_nodata(template: &RasterGrid) -> f64 {
    if template.nodata().is_nan() {
        -9999.0
    } else {
        template.nodata()
    }
}

/// Normalize valid cells of `score` (log scale, `None` = nodata) into a
/// probability map.
fn normalized_map(template: &RasterGrid, score: &[Option<f64>]) -> Result<RasterGrid> {
    let m = score.iter().flatten().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if !m.is_finite() {
        return Err(Error::ExtentExhausted("no valid cells to map".into()));
    }
    let w: Vec<Option<f64>> = score.iter().map(|s| s.map(|v| (v - m).exp())).collect();
    let total: f64 = w.iter().flatten().sum();
    let nd = output_nodata(template);
    let values: Vec<f64> = w.iter().map(|v| v.map_or(nd, |v| v / total)).collect();
    RasterGrid::new(
        template.ncols(),
        template.nrows(),
        template.xll(),
        template.yll(),
        template.cellsize(),
        nd,
        values,
    )
}

fn selection_columns(fit: &FitResult, grids: &CovariateStack) -> Result<Vec<(usize, f64)>> {
    fit.terms
        .iter()
        .filter_map(|t| match &t.kind {
            TermKind::Covariate(c) => Some(
                grids
                    .index_of(c)
                    .map(|i| (i, t.estimate))
                    .ok_or_else(|| Error::MissingCovariate(c.clone())),
            ),
            _ => None,
        })
        .collect()
}

/// `exp(sum beta_k x_k)` per cell, normalized over cells with data.
pub fn rsf_map(fit: &FitResult, grids: &CovariateStack) -> Result<RasterGrid> {
    let template = grids
        .template()
        .ok_or_else(|| Error::InvalidParameter("no rasters supplied".into()))?;
    let cols = selection_columns(fit, grids)?;
    let score: Vec<Option<f64>> = (0..template.len())
        .into_par_iter()
        .map(|idx| {
            let mut eta = 0.0;
            for &(c, b) in &cols {
                let g = &grids.grids()[c];
                let v = g.values()[idx];
                if g.is_nodata(v) {
                    return None;
                }
                eta += b * v;
            }
            Some(eta)
        })
        .collect();
    normalized_map(template, &score)
}

#[derive(Debug, Clone)]
pub struct SsudConfig {
    /// Recorded locations across all chains.
    pub n_locations: usize,
    pub burn_in: usize,
    pub n_candidates: usize,
    pub chains: usize,
    /// Defaults to the valid cell nearest the centre of the extent.
    pub start: Option<Point>,
    pub kernel_update: KernelUpdate,
}

impl Default for SsudConfig {
    fn default() -> Self {
        SsudConfig {
            n_locations: 100_000,
            burn_in: 1000,
            n_candidates: 50,
            chains: 1,
            start: None,
            kernel_update: KernelUpdate::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SsudResult {
    pub map: RasterGrid,
    /// Visit counts per cell for each chain.
    pub chain_counts: Vec<Vec<u64>>,
}

const MAX_CONSECUTIVE_REJECTS: usize = 1000;

fn default_start(template: &RasterGrid, grids: &CovariateStack) -> Result<Point> {
    let c = Point::new(
        0.5 * (template.xll() + template.xmax()),
        0.5 * (template.yll() + template.ymax()),
    );
    let mut best: Option<(f64, Point)> = None;
    for r in 0..template.nrows() {
        for col in 0..template.ncols() {
            let p = template.cell_center(r, col);
            if grids.extract_complete(p).is_some() {
                let d = p.dist(c);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, p));
                }
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::ExtentExhausted("no cell with data to start from".into()))
}

fn covariates_of(names: &[String], v: &[f64]) -> Covariates {
    names.iter().cloned().zip(v.iter().copied()).collect()
}

struct Chain<'a> {
    fit: &'a FitResult,
    kernel: &'a MovementKernel,
    grids: &'a CovariateStack,
    cols: &'a [(usize, f64)],
    update: Option<KernelUpdate>,
    interactions: bool,
    n_candidates: usize,
}

impl<'a> Chain<'a> {
    fn eta(&self, x: &[f64]) -> f64 {
        self.cols.iter().map(|&(c, b)| b * x[c]).sum()
    }

    fn kernel_at(&self, x: &[f64]) -> Result<MovementKernel> {
        match self.update {
            Some(which) => update_movement_kernel_with(
                self.kernel,
                self.fit,
                &covariates_of(self.grids.names(), x),
                which,
            ),
            None => Ok(*self.kernel),
        }
    }

    /// Runs `burn_in + record` steps and hands every recorded location to
    /// `visit`.
    fn run(
        &self,
        start: Point,
        burn_in: usize,
        record: usize,
        rng: &mut Rng,
        mut visit: impl FnMut(Point),
    ) -> Result<()> {
        let mut pos = start;
        let mut heading = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
        let mut here = self.grids.extract_complete(pos).ok_or(Error::OutOfExtent {
            x: pos.x,
            y: pos.y,
            step: None,
        })?;
        let mut kernel = self.kernel_at(&here)?;
        let mut cands: Vec<(Point, f64, Vec<f64>, f64)> = Vec::with_capacity(self.n_candidates);
        let mut w = vec![0.0; self.n_candidates];
        for step in 0..burn_in + record {
            cands.clear();
            let mut rejects = 0;
            while cands.len() < self.n_candidates {
                let (l, turn) = kernel.sample(rng);
                let h = wrap_angle(heading + turn);
                let p = pos.step(l, h);
                match self.grids.extract_complete(p) {
                    Some(x) => {
                        let eta = self.eta(&x);
                        cands.push((p, h, x, eta));
                        rejects = 0;
                    }
                    None => {
                        rejects += 1;
                        if rejects >= MAX_CONSECUTIVE_REJECTS {
                            return Err(Error::ExtentExhausted(format!(
                                "{MAX_CONSECUTIVE_REJECTS} consecutive proposals left the rasters at step {step}"
                            )));
                        }
                    }
                }
            }
            let m = cands.iter().fold(f64::NEG_INFINITY, |a, c| a.max(c.3));
            let mut total = 0.0;
            for (wi, c) in w.iter_mut().zip(&cands) {
                *wi = (c.3 - m).exp();
                total += *wi;
            }
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = cands.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let (p, h, x, _) = cands.swap_remove(pick);
            pos = p;
            heading = h;
            here = x;
            if self.interactions {
                kernel = self.kernel_at(&here)?;
            }
            if step >= burn_in {
                visit(pos);
            }
        }
        Ok(())
    }

    fn new(
        fit: &'a FitResult,
        kernel: &'a MovementKernel,
        grids: &'a CovariateStack,
        cols: &'a [(usize, f64)],
        n_candidates: usize,
        kernel_update: KernelUpdate,
    ) -> Self {
        let has_movement = fit.terms.iter().any(|t| t.kind.is_movement());
        let interactions = fit
            .terms
            .iter()
            .any(|t| matches!(t.kind, TermKind::CovariateXLogStep(_)));
        Chain {
            fit,
            kernel,
            grids,
            cols,
            update: has_movement.then_some(kernel_update),
            interactions,
            n_candidates,
        }
    }
}

/// Steady-state utilization from long simulated paths. At each step the
/// (covariate-corrected) kernel proposes `n_candidates` end points and one
/// is chosen with probability proportional to `exp(eta)` over the habitat
/// terms.
pub fn ssud_map(
    fit: &FitResult,
    kernel: &MovementKernel,
    grids: &CovariateStack,
    cfg: &SsudConfig,
    rng: &Rng,
) -> Result<SsudResult> {
    let template = grids
        .template()
        .ok_or_else(|| Error::InvalidParameter("no rasters supplied".into()))?;
    if cfg.n_candidates == 0 || cfg.chains == 0 || cfg.n_locations < cfg.chains {
        return Err(Error::InvalidParameter(
            "need >= 1 candidate, >= 1 chain and at least one location per chain".into(),
        ));
    }
    let cols = selection_columns(fit, grids)?;
    let chain = Chain::new(fit, kernel, grids, &cols, cfg.n_candidates, cfg.kernel_update);
    let start = match cfg.start {
        Some(p) => p,
        None => default_start(template, grids)?,
    };
    let per = cfg.n_locations / cfg.chains;
    let extra = cfg.n_locations % cfg.chains;
    let chain_counts: Vec<Vec<u64>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut r = rng.child_indexed(c as u64);
            let mut counts = vec![0u64; template.len()];
            chain.run(start, cfg.burn_in, per + usize::from(c < extra), &mut r, |p| {
                let (row, col) = template.cell_of(p).expect("accepted points are in extent");
                counts[row * template.ncols() + col] += 1;
            })?;
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; template.len()];
    for cc in &chain_counts {
        for (t, v) in total.iter_mut().zip(cc) {
            *t += v;
        }
    }
    let n: u64 = total.iter().sum();
    let nd = output_nodata(template);
    let values: Vec<f64> = total
        .iter()
        .zip(template.values())
        .enumerate()
        .map(|(i, (&c, _))| {
            let p = template.cell_center(i / template.ncols(), i % template.ncols());
            if grids.extract_complete(p).is_some() {
                c as f64 / n as f64
            } else {
                nd
            }
        })
        .collect();
    let map = RasterGrid::new(
        template.ncols(),
        template.nrows(),
        template.xll(),
        template.yll(),
        template.cellsize(),
        nd,
        values,
    )?;
    Ok(SsudResult { map, chain_counts })
}

/// One simulated path of the SSUD chain: `n_steps` recorded locations after
/// `cfg.burn_in`, spaced `interval_s` seconds apart. `cfg.n_locations` and
/// `cfg.chains` are ignored.
pub fn simulate_ssf_path(
    fit: &FitResult,
    kernel: &MovementKernel,
    grids: &CovariateStack,
    cfg: &SsudConfig,
    n_steps: usize,
    interval_s: i64,
    rng: &mut Rng,
) -> Result<Track> {
    let template = grids
        .template()
        .ok_or_else(|| Error::InvalidParameter("no rasters supplied".into()))?;
    if cfg.n_candidates == 0 || n_steps < 1 || interval_s <= 0 {
        return Err(Error::InvalidParameter(
            "need >= 1 candidate, >= 1 step and a positive interval".into(),
        ));
    }
    let cols = selection_columns(fit, grids)?;
    let chain = Chain::new(fit, kernel, grids, &cols, cfg.n_candidates, cfg.kernel_update);
    let start = match cfg.start {
        Some(p) => p,
        None => default_start(template, grids)?,
    };
    let mut coords = Vec::with_capacity(n_steps + 1);
    chain.run(start, cfg.burn_in, n_steps + 1, rng, |p| coords.push(p))?;
    let times = (0..coords.len() as i64).map(|i| i * interval_s).collect();
    Track::new("ssf", times, coords)
}

fn stationary_at(fit: &HmmFit, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let m = fit.layout.unpack(w)?;
    stationary_distribution(&m.transition_matrix_at(x))
}

fn transition_values(fit: &HmmFit, covariate: &str, value: f64, others: &Covariates) -> Result<Vec<f64>> {
    fit.model
        .transition_covariates()
        .iter()
        .map(|n| {
            if n == covariate {
                Ok(value)
            } else {
                others
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::MissingCovariate(n.clone()))
            }
        })
        .collect()
}

/// Stationary state probabilities across a grid of one transition
/// covariate (others held at `others`), one series per state. Standard
/// errors by the delta method with a finite-difference Jacobian.
pub fn state_prob_curve(
    fit: &HmmFit,
    covariate: &str,
    grid: &[f64],
    others: &Covariates,
) -> Result<CurveTable> {
    check_grid(grid)?;
    let tc = fit.model.transition_covariates();
    if !tc.is_empty() && !tc.iter().any(|c| c == covariate) {
        return Err(Error::MissingCovariate(covariate.to_string()));
    }
    let n = fit.model.n_states();
    let mut per_state: Vec<Vec<CurveRow>> = vec![Vec::new(); n];
    for &g in grid {
        let x = transition_values(fit, covariate, g, others)?;
        let pi = stationary_distribution(&fit.model.transition_matrix_at(&x))?;
        let se = match &fit.covariance {
            Some(cov) => {
                let d = fit.working.len();
                let mut jac = nalgebra::DMatrix::<f64>::zeros(n, d);
                for k in 0..d {
                    let h = 1e-5 * fit.working[k].abs().max(1.0);
                    let mut wp = fit.working.clone();
                    let mut wm = fit.working.clone();
                    wp[k] += h;
                    wm[k] -= h;
                    let (pp, pm) = (stationary_at(fit, &wp, &x)?, stationary_at(fit, &wm, &x)?);
                    for s in 0..n {
                        jac[(s, k)] = (pp[s] - pm[s]) / (2.0 * h);
                    }
                }
                let v = &jac * cov * jac.transpose();
                (0..n).map(|s| v[(s, s)].max(0.0).sqrt()).collect()
            }
            None => vec![f64::NAN; n],
        };
        for s in 0..n {
            per_state[s].push(CurveRow {
                series: format!("state{}", s + 1),
                x: g,
                value: pi[s],
                se: se[s],
            });
        }
    }
    Ok(CurveTable {
        rows: per_state.into_iter().flatten().collect(),
    })
}

/// One map per state: the stationary probability of that state under the
/// transition matrix at each cell's covariates.
pub fn hmm_state_maps(fit: &HmmFit, grids: &CovariateStack) -> Result<Vec<RasterGrid>> {
    let template = grids
        .template()
        .ok_or_else(|| Error::InvalidParameter("no rasters supplied".into()))?;
    let cols: Vec<usize> = fit
        .model
        .transition_covariates()
        .iter()
        .map(|c| {
            grids
                .index_of(c)
                .ok_or_else(|| Error::MissingCovariate(c.clone()))
        })
        .collect::<Result<_>>()?;
    let n = fit.model.n_states();
    let cells: Vec<Result<Option<Vec<f64>>>> = (0..template.len())
        .into_par_iter()
        .map(|idx| {
            let mut x = Vec::with_capacity(cols.len());
            for &c in &cols {
                let g = &grids.grids()[c];
                let v = g.values()[idx];
                if g.is_nodata(v) {
                    return Ok(None);
                }
                x.push(v);
            }
            // a covariate-free model still maps only cells with data
            if cols.is_empty() {
                let p = template.cell_center(idx / template.ncols(), idx % template.ncols());
                if grids.extract_complete(p).is_none() {
                    return Ok(None);
                }
            }
            stationary_distribution(&fit.model.transition_matrix_at(&x)).map(Some)
        })
        .collect();
    let nd = output_nodata(template);
    let mut values = vec![Vec::with_capacity(template.len()); n];
    for c in cells {
        match c? {
            Some(pi) => {
                for (s, v) in pi.into_iter().enumerate() {
                    values[s].push(v);
                }
            }
            None => {
                for v in &mut values {
                    v.push(nd);
                }
            }
        }
    }
    values
        .into_iter()
        .map(|v| {
            RasterGrid::new(
                template.ncols(),
                template.nrows(),
                template.xll(),
                template.yll(),
                template.cellsize(),
                nd,
                v,
            )
        })
        .collect()
}
