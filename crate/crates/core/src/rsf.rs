//! Use-available resource selection: availability sampling inside the
//! minimum convex polygon, logistic fitting and the availability-size
//! stability scan.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{Covariates, FitResult, ModelKind, Term, TermKind};
use crate::geodata::{convex_hull, sample_uniform_in_polygon, CovariateStack, Point, Polygon};
use crate::numcore::{optimize_mle, OptConfig, Rng, Uncertainty};
use crate::track::Track;

/// Coefficient magnitude beyond which a fit is declared separated.
pub const SEPARATION_LIMIT: f64 = 50.0;

const MAX_REDRAWS: usize = 10_000;

/// Remaining log-likelihood gain below which a fit counts as converged.
const NEWTON_DECREMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct UseAvailRow {
    pub case: bool,
    pub location: Point,
    /// Aligned with [`UseAvailTable::covariate_names`].
    pub x: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UseAvailTable {
    pub covariate_names: Vec<String>,
    pub rows: Vec<UseAvailRow>,
    pub n_used: usize,
    pub n_available: usize,
    pub polygon: Polygon,
    pub seed: u64,
    /// Used locations skipped because a covariate was nodata there.
    pub used_dropped: usize,
}

impl UseAvailTable {
    /// Mean of a covariate over used rows.
    pub fn used_mean(&self, name: &str) -> Option<f64> {
        let j = self.covariate_names.iter().position(|n| n == name)?;
        let (s, n) = self
            .rows
            .iter()
            .filter(|r| r.case)
            .fold((0.0, 0usize), |(s, n), r| (s + r.x[j], n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Pair every used location with `n_avail_per_used` points drawn uniformly
/// inside the (optionally buffered) convex hull of the track. Available
/// points outside the rasters or on nodata are redrawn.
pub fn build_use_avail(
    track: &Track,
    grids: &CovariateStack,
    n_avail_per_used: usize,
    rng: &mut Rng,
    buffer_m: f64,
) -> Result<UseAvailTable> {
    if n_avail_per_used == 0 {
        return Err(Error::InvalidParameter(
            "need at least one available point per used".into(),
        ));
    }
    let polygon = convex_hull(track.coords())?.buffered(buffer_m)?;
    let seed = rng.seed();
    let mut rows = Vec::new();
    let mut used_dropped = 0;
    for &p in track.coords() {
        let vals = grids.extract(p)?;
        match vals.into_iter().collect::<Option<Vec<f64>>>() {
            Some(x) => rows.push(UseAvailRow {
                case: true,
                location: p,
                x,
                weight: 1.0,
            }),
            None => used_dropped += 1,
        }
    }
    let n_used = rows.len();
    let n_available = n_used * n_avail_per_used;
    for _ in 0..n_available {
        let mut tries = 0;
        let (location, x) = loop {
            tries += 1;
            if tries > MAX_REDRAWS {
                return Err(Error::ExtentExhausted(format!(
                    "{MAX_REDRAWS} availability draws fell outside the rasters or on nodata"
                )));
            }
            let p = sample_uniform_in_polygon(&polygon, 1, rng)[0];
            if let Some(x) = grids.extract_complete(p) {
                break (p, x);
            }
        };
        rows.push(UseAvailRow {
            case: false,
            location,
            x,
            weight: 1.0,
        });
    }
    Ok(UseAvailTable {
        covariate_names: grids.names().to_vec(),
        rows,
        n_used,
        n_available,
        polygon,
        seed,
        used_dropped,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Design matrix view over a table.
struct Design<'a> {
    table: &'a UseAvailTable,
    intercept: bool,
}

impl Design<'_> {
    fn ncols(&self) -> usize {
        self.table.covariate_names.len() + usize::from(self.intercept)
    }

    fn row(&self, r: &UseAvailRow, out: &mut [f64]) {
        let off = usize::from(self.intercept);
        if self.intercept {
            out[0] = 1.0;
        }
        out[off..].copy_from_slice(&r.x);
    }

    fn eta(&self, r: &UseAvailRow, beta: &[f64]) -> f64 {
        let off = usize::from(self.intercept);
        let base = if self.intercept { beta[0] } else { 0.0 };
        base + r.x.iter().zip(&beta[off..]).map(|(x, b)| x * b).sum::<f64>()
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        self.table
            .rows
            .iter()
            .map(|r| {
                let eta = self.eta(r, beta);
                let y = if r.case { eta } else { 0.0 };
                r.weight * (y - softplus(eta))
            })
            .sum()
    }

    /// Score vector and observed information.
    fn score_info(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.ncols();
        let mut g = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        let mut x = vec![0.0; k];
        for r in &self.table.rows {
            self.row(r, &mut x);
            let p = sigmoid(self.eta(r, beta));
            let resid = r.weight * (f64::from(u8::from(r.case)) - p);
            let w = r.weight * p * (1.0 - p);
            for i in 0..k {
                g[i] += resid * x[i];
                for j in 0..=i {
                    info[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                info[(j, i)] = info[(i, j)];
            }
        }
        (g, info)
    }

    /// Newton decrement below tolerance: the log-likelihood still to gain
    /// is negligible. Unlike the raw score it does not grow with the number
    /// of rows.
    fn settled(&self, beta: &[f64]) -> bool {
        let (g, info) = self.score_info(beta);
        info.cholesky()
            .is_some_and(|c| g.dot(&c.solve(&g)) < NEWTON_DECREMENT_TOL)
    }

    fn check_rank(&self) -> Result<()> {
        let names = &self.table.covariate_names;
        if self.intercept {
            for (j, name) in names.iter().enumerate() {
                let first = self.table.rows[0].x[j];
                if self.table.rows.iter().all(|r| r.x[j] == first) {
                    return Err(Error::SingularDesign(format!(
                        "covariate `{name}` is constant (collinear with the intercept)"
                    )));
                }
            }
        }
        let k = self.ncols();
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut x = vec![0.0; k];
        for r in &self.table.rows {
            self.row(r, &mut x);
            for i in 0..k {
                for j in 0..k {
                    xtx[(i, j)] += x[i] * x[j];
                }
            }
        }
        let d: Vec<f64> = (0..k).map(|i| xtx[(i, i)].sqrt()).collect();
        if d.iter().any(|v| *v == 0.0) {
            return Err(Error::SingularDesign("a covariate is identically zero".into()));
        }
        let corr = DMatrix::from_fn(k, k, |i, j| xtx[(i, j)] / (d[i] * d[j]));
        let min_eig = corr.symmetric_eigenvalues().min();
        if min_eig < 1e-10 {
            return Err(Error::SingularDesign(
                "covariates are collinear (rank-deficient cross-product)".into(),
            ));
        }
        Ok(())
    }
}

fn term_kinds(names: &[String], intercept: bool) -> Vec<TermKind> {
    let mut kinds = Vec::with_capacity(names.len() + 1);
    if intercept {
        kinds.push(TermKind::Intercept);
    }
    kinds.extend(names.iter().cloned().map(TermKind::Covariate));
    kinds
}

fn check_separation(kinds: &[TermKind], beta: &[f64]) -> Result<()> {
    if let Some(i) = beta.iter().position(|b| !(b.abs() <= SEPARATION_LIMIT)) {
        return Err(Error::SeparationDetected {
            term: kinds[i].name(),
            limit: SEPARATION_LIMIT,
        });
    }
    Ok(())
}

/// Maximum-likelihood logistic regression of case on covariates.
///
/// Newton-Raphson (IRLS) with step halving; falls back to the generic
/// optimizer when Newton fails to converge. The intercept, when included, is
/// reported first and carries no selection meaning.
pub fn fit_logistic(table: &UseAvailTable, include_intercept: bool) -> Result<FitResult> {
    if table.covariate_names.is_empty() {
        return Err(Error::InvalidParameter(
            "logistic RSF needs >= 1 covariate".into(),
        ));
    }
    let n_case = table.rows.iter().filter(|r| r.case).count();
    if n_case == 0 || n_case == table.rows.len() {
        return Err(Error::InvalidParameter(
            "both used and available rows are required".into(),
        ));
    }
    let design = Design {
        table,
        intercept: include_intercept,
    };
    design.check_rank()?;
    let kinds = term_kinds(&table.covariate_names, include_intercept);
    let k = design.ncols();

    let mut beta = vec![0.0; k];
    let mut ll = design.loglik(&beta);
    let mut converged = false;
    for _ in 0..100 {
        // Stop on the step size only: under separation the score vanishes
        // while the coefficients keep drifting outward.
        let (g, info) = design.score_info(&beta);
        // The design has full rank, so a collapsed information matrix means
        // the fitted probabilities have saturated at 0 or 1.
        let Some(chol) = info.clone().cholesky() else {
            let i = (0..k)
                .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
                .unwrap_or(0);
            return Err(Error::SeparationDetected {
                term: kinds[i].name(),
                limit: SEPARATION_LIMIT,
            });
        };
        let delta = chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let lc = design.loglik(&cand);
            if lc.is_finite() && lc >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = lc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        check_separation(&kinds, &beta)?;
        if !accepted {
            // roundoff can stall the line search right at the optimum
            converged = design.settled(&beta);
            break;
        }
        let scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if delta.amax() * step < 1e-10 * scale {
            converged = design.settled(&beta);
            break;
        }
    }
    if !converged {
        let cfg = OptConfig {
            grad_tol: 1e-7,
            skip_hessian: true,
            ..OptConfig::default()
        };
        let r = optimize_mle(|b| design.loglik(b), &beta, &cfg)?;
        check_separation(&kinds, &r.argmax)?;
        if r.loglik >= ll {
            beta = r.argmax;
            ll = r.loglik;
        }
        converged = design.settled(&beta);
    }

    let (_, info) = design.score_info(&beta);
    let unc = Uncertainty::from_information(&info);
    let terms = kinds
        .into_iter()
        .zip(&beta)
        .zip(&unc.se)
        .map(|((kind, &estimate), &se)| Term { kind, estimate, se })
        .collect();
    Ok(FitResult {
        terms,
        covariance: unc.covariance,
        loglik: ll,
        n_obs: table.rows.len(),
        converged,
        model_kind: ModelKind::Rsf,
        seed: Some(table.seed),
    })
}

/// Bernoulli log-likelihood of a table at `beta` (intercept first when
/// `include_intercept`).
pub fn logistic_loglik(table: &UseAvailTable, include_intercept: bool, beta: &[f64]) -> f64 {
    Design {
        table,
        intercept: include_intercept,
    }
    .loglik(beta)
}

/// Analytic score of [`logistic_loglik`].
pub fn logistic_score(table: &UseAvailTable, include_intercept: bool, beta: &[f64]) -> Vec<f64> {
    Design {
        table,
        intercept: include_intercept,
    }
    .score_info(beta)
    .0
    .iter()
    .copied()
    .collect()
}

/// `sum_k beta_k x_k` over the non-intercept terms: the log of the
/// exponential RSF.
pub fn rsf_linear_predictor(fit: &FitResult, x: &Covariates) -> Result<f64> {
    fit.terms
        .iter()
        .filter_map(|t| match &t.kind {
            TermKind::Covariate(name) => Some(
                x.get(name)
                    .map(|v| t.estimate * v)
                    .ok_or_else(|| Error::MissingCovariate(name.clone())),
            ),
            _ => None,
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct ScanRow {
    pub ratio: usize,
    pub seed: u64,
    pub fit: std::result::Result<FitResult, String>,
}

/// One RSF per availability ratio, each on its own derived seed. A failed
/// fit is recorded in its row rather than aborting the scan.
pub fn availability_stability_scan(
    track: &Track,
    grids: &CovariateStack,
    sizes: &[usize],
    rng: &Rng,
    buffer_m: f64,
) -> Result<Vec<ScanRow>> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(Error::InvalidParameter(
            "scan sizes must be non-empty, positive and strictly increasing".into(),
        ));
    }
    // Surface hull errors once instead of per row.
    convex_hull(track.coords())?;
    Ok(sizes
        .par_iter()
        .map(|&ratio| {
            let mut r = rng.child(&format!("ratio-{ratio}"));
            let seed = r.seed();
            let fit = build_use_avail(track, grids, ratio, &mut r, buffer_m)
                .and_then(|t| fit_logistic(&t, true))
                .map_err(|e| format!("{}: {e}", e.name()));
            ScanRow { ratio, seed, fit }
        })
        .collect())
}

pub fn scan_csv_string(rows: &[ScanRow]) -> String {
    use crate::io::fmt_f64;
    let mut s = String::from("ratio,seed,term,estimate,se,se_valid,status\n");
    for row in rows {
        match &row.fit {
            Ok(f) => {
                for t in &f.terms {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},ok\n",
                        row.ratio,
                        row.seed,
                        t.name(),
                        fmt_f64(t.estimate),
                        fmt_f64(t.se.value),
                        t.se.valid
                    ));
                }
            }
            Err(e) => s.push_str(&format!(
                "{},{},NA,NA,NA,false,failed: {}\n",
                row.ratio,
                row.seed,
                e.replace(',', ";")
            )),
        }
    }
    s
}
