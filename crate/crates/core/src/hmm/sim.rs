use nalgebra::DMatrix;

use super::{stationary_distribution, HmmModel, InitialPolicy};
use crate::error::{Error, Result};
use crate::fit::Covariates;
use crate::geodata::{CovariateStack, Point};
use crate::numcore::{wrap_angle, Rng};
use crate::track::Track;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub id: String,
    pub start: Point,
    /// Heading (radians from east) that the first turn is applied to.
    pub initial_heading: f64,
    pub t0: i64,
    pub interval_s: i64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            id: "sim".into(),
            start: Point::new(0.0, 0.0),
            initial_heading: 0.0,
            t0: 0,
            interval_s: 3600,
        }
    }
}

fn categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn first_state(model: &HmmModel, gamma1: &DMatrix<f64>, rng: &mut Rng) -> Result<usize> {
    let d = match model.initial {
        InitialPolicy::Free => model.delta().to_vec(),
        InitialPolicy::Stationary => stationary_distribution(gamma1)?,
    };
    Ok(categorical(&d, rng))
}

fn aligned(names: &[String], x: &Covariates) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            x.get(n)
                .copied()
                .ok_or_else(|| Error::MissingCovariate(n.clone()))
        })
        .collect()
}

/// Simulate `t_steps` steps (so `t_steps + 1` locations). `covariates` holds
/// one entry per step, or is empty for a covariate-free model. Returns the
/// track and the 0-based state of each step.
pub fn simulate_hmm(
    model: &HmmModel,
    t_steps: usize,
    covariates: &[Covariates],
    rng: &mut Rng,
    cfg: &SimConfig,
) -> Result<(Track, Vec<usize>)> {
    if t_steps < 2 {
        return Err(Error::InvalidParameter("simulate at least 2 steps".into()));
    }
    if !covariates.is_empty() && covariates.len() != t_steps {
        return Err(Error::InvalidParameter(format!(
            "covariate series has {} entries for {t_steps} steps",
            covariates.len()
        )));
    }
    let needs = !model.transition_covariates().is_empty() || !model.obs_covariates().is_empty();
    if needs && covariates.is_empty() {
        return Err(Error::MissingCovariate(
            model
                .transition_covariates()
                .iter()
                .chain(model.obs_covariates())
                .next()
                .cloned()
                .unwrap_or_default(),
        ));
    }
    let empty = Covariates::new();
    let x_at = |t: usize| covariates.get(t).unwrap_or(&empty);

    let mut coords = Vec::with_capacity(t_steps + 1);
    let mut states = Vec::with_capacity(t_steps);
    let mut pos = cfg.start;
    let mut heading = cfg.initial_heading;
    coords.push(pos);
    let gamma_first = model.transition_matrix(x_at(0))?;
    let mut z = first_state(model, &gamma_first, rng)?;
    for t in 0..t_steps {
        let x = x_at(t);
        let (g, a) = model.obs_at(z, &aligned(model.obs_covariates(), x)?)?;
        let l = g.sample(rng);
        heading = wrap_angle(heading + a.sample(rng));
        pos = pos.step(l, heading);
        coords.push(pos);
        states.push(z);
        let gamma = model.transition_matrix(x)?;
        let row: Vec<f64> = gamma.row(z).iter().copied().collect();
        z = categorical(&row, rng);
    }
    let times = (0..=t_steps as i64)
        .map(|i| cfg.t0 + i * cfg.interval_s)
        .collect();
    Ok((Track::new(cfg.id.clone(), times, coords)?, states))
}

/// Simulate over rasters: transition covariates are read at the end point
/// of each step. Steps leaving the rasters or landing on nodata are redrawn
/// from the same state.
pub fn simulate_hmm_landscape(
    model: &HmmModel,
    t_steps: usize,
    grids: &CovariateStack,
    rng: &mut Rng,
    cfg: &SimConfig,
) -> Result<(Track, Vec<usize>)> {
    if t_steps < 2 {
        return Err(Error::InvalidParameter("simulate at least 2 steps".into()));
    }
    if !model.obs_covariates().is_empty() {
        return Err(Error::InvalidParameter(
            "landscape simulation supports transition covariates only".into(),
        ));
    }
    let cols: Vec<usize> = model
        .transition_covariates()
        .iter()
        .map(|n| {
            grids
                .index_of(n)
                .ok_or_else(|| Error::MissingCovariate(n.clone()))
        })
        .collect::<Result<_>>()?;
    let at = |p: Point| -> Option<Vec<f64>> {
        let v = grids.extract_complete(p)?;
        Some(cols.iter().map(|&c| v[c]).collect())
    };
    let x0 = at(cfg.start).ok_or(Error::OutOfExtent {
        x: cfg.start.x,
        y: cfg.start.y,
        step: None,
    })?;
    let mut pos = cfg.start;
    let mut heading = cfg.initial_heading;
    let mut coords = vec![pos];
    let mut states = Vec::with_capacity(t_steps);
    let mut z = first_state(model, &model.transition_matrix_at(&x0), rng)?;
    for _ in 0..t_steps {
        let (g, a) = model.obs_at(z, &[])?;
        let mut tries = 0;
        let (next, h, x) = loop {
            tries += 1;
            if tries > 1000 {
                return Err(Error::ExtentExhausted(
                    "1000 consecutive simulated steps left the rasters".into(),
                ));
            }
            let l = g.sample(rng);
            let h = wrap_angle(heading + a.sample(rng));
            let p = pos.step(l, h);
            if let Some(x) = at(p) {
                break (p, h, x);
            }
        };
        pos = next;
        heading = h;
        coords.push(pos);
        states.push(z);
        let gamma = model.transition_matrix_at(&x);
        let row: Vec<f64> = gamma.row(z).iter().copied().collect();
        z = categorical(&row, rng);
    }
    let times = (0..=t_steps as i64)
        .map(|i| cfg.t0 + i * cfg.interval_s)
        .collect();
    Ok((Track::new(cfg.id.clone(), times, coords)?, states))
}
