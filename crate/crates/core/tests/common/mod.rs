//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use movesel::fit::{FitResult, ModelKind, Term, TermKind};
use movesel::geodata::{CovariateStack, Point, RasterGrid};
use movesel::hmm::HmmModel;
use movesel::numcore::{Rng, StdErr};
use movesel::predict::{simulate_ssf_path, SsudConfig};
use movesel::ssf::MovementKernel;
use movesel::track::{Step, StepSeries, Track};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Pearson goodness-of-fit p-value of `observed` counts against expected
/// probabilities `p`.
pub fn chi_square_p(observed: &[f64], p: &[f64]) -> f64 {
    let n: f64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(p)
        .map(|(o, p)| (o - n * p).powi(2) / (n * p))
        .sum();
    let df = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Joint log-probability of every state sequence of one burst, enumerated.
/// Returns (sequence, log p(z, y)).
pub fn enumerate_sequences(model: &HmmModel, steps: &StepSeries) -> Vec<(Vec<usize>, f64)> {
    let n = model.n_states();
    let t = steps.steps.len();
    let tcols: Vec<usize> = model
        .transition_covariates()
        .iter()
        .map(|c| steps.covariate_index(c).unwrap())
        .collect();
    let ocols: Vec<usize> = model
        .obs_covariates()
        .iter()
        .map(|c| steps.covariate_index(c).unwrap())
        .collect();
    let emis: Vec<Vec<f64>> = steps
        .steps
        .iter()
        .map(|s| {
            let xo: Vec<f64> = ocols.iter().map(|&c| s.covariates[c].unwrap()).collect();
            (0..n)
                .map(|i| {
                    let (g, a) = model.obs_at(i, &xo).unwrap();
                    g.logpdf(s.length.max(1e-3)).unwrap() + s.turn.map_or(0.0, |th| a.logpdf(th))
                })
                .collect()
        })
        .collect();
    let gammas: Vec<_> = steps
        .steps
        .iter()
        .map(|s| {
            let xt: Vec<f64> = tcols.iter().map(|&c| s.covariates[c].unwrap()).collect();
            model.transition_matrix_at(&xt)
        })
        .collect();
    let total = n.pow(t as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut z = vec![0usize; t];
        let mut c = code;
        for k in (0..t).rev() {
            z[k] = c % n;
            c /= n;
        }
        let mut lp = model.delta()[z[0]].ln() + emis[0][z[0]];
        for k in 1..t {
            lp += gammas[k - 1][(z[k - 1], z[k])].ln() + emis[k][z[k]];
        }
        out.push((z, lp));
    }
    out
}

pub fn brute_force_loglik(model: &HmmModel, steps: &StepSeries) -> f64 {
    let lps: Vec<f64> = enumerate_sequences(model, steps)
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    logsumexp(&lps)
}

/// Single-burst series with the given lengths, turns and one covariate `x`.
pub fn step_series(ls: &[f64], turns: &[Option<f64>], xs: &[f64]) -> StepSeries {
    StepSeries {
        covariate_names: vec!["x".into()],
        burst_ids: vec!["a".into()],
        steps: (0..ls.len())
            .map(|i| Step {
                burst: 0,
                t_start: i as i64,
                t_end: i as i64 + 1,
                start: Point::default(),
                end: Point::default(),
                length: ls[i],
                heading: Some(0.0),
                prev_heading: turns[i].map(|_| 0.0),
                turn: turns[i],
                covariates: vec![Some(xs[i])],
            })
            .collect(),
    }
}

/// Random single-burst observations with the first turn missing.
pub fn random_series(t: usize, rng: &mut Rng) -> StepSeries {
    let ls: Vec<f64> = (0..t).map(|_| rng.uniform_range(0.2, 12.0)).collect();
    let turns: Vec<Option<f64>> = (0..t)
        .map(|i| (i > 0).then(|| rng.uniform_range(-3.1, 3.1)))
        .collect();
    let xs: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
    step_series(&ls, &turns, &xs)
}

/// Smooth random landscape: sum of a few Gaussian bumps, values in ~[0, 1].
pub fn bumpy_grid(ncols: usize, nrows: usize, cellsize: f64, seed: u64) -> RasterGrid {
    let mut rng = Rng::new(seed);
    let w = ncols as f64 * cellsize;
    let h = nrows as f64 * cellsize;
    let bumps: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.uniform_range(0.0, w),
                rng.uniform_range(0.0, h),
                rng.uniform_range(0.05, 0.2) * w,
            )
        })
        .collect();
    let base = RasterGrid::new(
        ncols,
        nrows,
        0.0,
        0.0,
        cellsize,
        -9999.0,
        vec![0.0; ncols * nrows],
    )
    .unwrap();
    base.map_cells(|r, c| {
        let p = base.cell_center(r, c);
        bumps
            .iter()
            .map(|(x, y, s)| (-((p.x - x).powi(2) + (p.y - y).powi(2)) / (2.0 * s * s)).exp())
            .sum::<f64>()
            .min(1.5)
    })
}

pub fn stack(name: &str, g: RasterGrid) -> CovariateStack {
    CovariateStack::new(vec![(name.to_string(), g)]).unwrap()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `n` used locations from the exponential RSF `exp(beta * x)` over the
/// whole grid, by rejection from uniform cell-space draws.
pub fn exp_rsf_track(grid: &RasterGrid, beta: f64, n: usize, rng: &mut Rng) -> Track {
    let top = grid
        .values()
        .iter()
        .filter(|v| !grid.is_nodata(**v))
        .map(|v| beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut coords = Vec::with_capacity(n);
    while coords.len() < n {
        let p = Point::new(
            rng.uniform_range(grid.xll(), grid.xmax()),
            rng.uniform_range(grid.yll(), grid.ymax()),
        );
        if let Ok(Some(x)) = grid.value_at(p) {
            if rng.uniform() < (beta * x - top).exp() {
                coords.push(p);
            }
        }
    }
    Track::new("rsf", (0..n as i64).collect(), coords).unwrap()
}

/// Used locations drawn uniformly, ignoring the covariate.
pub fn uniform_track(grid: &RasterGrid, n: usize, rng: &mut Rng) -> Track {
    exp_rsf_track(grid, 0.0, n, rng)
}

/// Selection fit with the given coefficients and no covariance.
pub fn selection_fit(kind: ModelKind, terms: &[(TermKind, f64)]) -> FitResult {
    FitResult {
        terms: terms
            .iter()
            .map(|(k, b)| Term {
                kind: k.clone(),
                estimate: *b,
                se: StdErr {
                    value: 0.0,
                    valid: false,
                },
            })
            .collect(),
        covariance: None,
        loglik: 0.0,
        n_obs: 0,
        converged: true,
        model_kind: kind,
        seed: None,
    }
}

/// Path of `n_steps` steps simulated from habitat selection `beta` on the
/// single layer of `grids`.
pub fn ssf_path(
    grids: &CovariateStack,
    beta: f64,
    kernel: &MovementKernel,
    n_steps: usize,
    rng: &mut Rng,
) -> Track {
    let name = grids.names()[0].clone();
    let fit = selection_fit(ModelKind::Ssf, &[(TermKind::Covariate(name), beta)]);
    let cfg = SsudConfig {
        burn_in: 100,
        ..SsudConfig::default()
    };
    simulate_ssf_path(&fit, kernel, grids, &cfg, n_steps, 3600, rng).unwrap()
}
