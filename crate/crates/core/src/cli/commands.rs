use std::path::Path;

use super::model::{covariance_csv, hmm_layout_meta, kernel_meta, load_model, Meta, SavedModel};
use super::{Command, Outputs, RasterOpts, RegularityOpts, Report, RunConfig, TrackOpts};
use crate::error::{Error, Result};
use crate::fit::{parse_metadata, FitResult, TermKind};
use crate::geodata::{read_ascii_grid, CovariateStack, Point, RasterGrid};
use crate::hmm::{
    decoded_states_csv, fit_hmm, simulate_hmm_landscape, stationary_distribution, HmmConfig, HmmFit,
    HmmModel, InitialPolicy, SimConfig, StateObs,
};
use crate::io::fmt_f64;
use crate::numcore::{GammaParams, Rng, VonMisesParams};
use crate::predict::{
    hmm_state_maps, logrss_curve, rsf_map, simulate_ssf_path, ssud_map, state_prob_curve,
    step_length_quantiles, CurveTable, MovementContext, SsudConfig,
};
use crate::rsf::{availability_stability_scan, build_use_avail, fit_logistic, scan_csv_string};
use crate::ssf::{
    fit_conditional_logistic, fit_tentative_kernel_with, generate_controls, make_ssf_spec, MovementKernel,
};
use crate::track::{read_track_csv, thin, to_steps, track_csv_string, validate_regular, StepSeries, Track};

pub(super) fn execute(config: &RunConfig, report: &mut Report) -> Result<Outputs> {
    let root = Rng::new(config.seed);
    match &config.command {
        Command::Thin { track, id, k } => cmd_thin(track, id.as_deref(), *k, report),
        Command::Steps {
            track,
            regular,
            rasters,
        } => cmd_steps(track, regular, rasters, report),
        Command::FitRsf {
            track,
            rasters,
            ratio,
            buffer,
            scan,
        } => cmd_fit_rsf(track, rasters, *ratio, *buffer, scan, &root, report),
        Command::FitSsf {
            track,
            regular,
            rasters,
            covariate,
            interaction,
            controls,
            free_mu,
        } => {
            let o = SsfOpts {
                covariate: covariate.as_deref(),
                interaction: *interaction,
                controls: *controls,
                free_mu: *free_mu,
            };
            cmd_fit_ssf(track, regular, rasters, &o, &root, report)
        }
        Command::FitHmm {
            track,
            regular,
            rasters,
            states,
            restarts,
            transition_covariates,
            obs_covariates,
            estimate_mu,
            stationary_start,
        } => {
            let grids = load_rasters(rasters)?;
            let tc = transition_covariates
                .clone()
                .unwrap_or_else(|| grids.names().to_vec());
            let cfg = HmmConfig {
                restarts: *restarts,
                estimate_mu: *estimate_mu,
                initial: if *stationary_start {
                    InitialPolicy::Stationary
                } else {
                    InitialPolicy::Free
                },
                ..HmmConfig::default()
            };
            cmd_fit_hmm(
                track,
                regular,
                &grids,
                *states,
                &tc,
                obs_covariates,
                &cfg,
                &root,
                report,
            )
        }
        Command::Decode {
            model,
            track,
            regular,
            rasters,
        } => cmd_decode(model, track, regular, rasters, report),
        Command::Logrss {
            model,
            covariate,
            grid,
            reference,
            at,
            step_length,
            speeds,
        } => {
            let o = CurveOpts {
                covariate: covariate.as_deref(),
                grid: grid.as_deref(),
                reference,
                at,
                step_length: *step_length,
                speeds: *speeds,
            };
            cmd_logrss(model, &o, report)
        }
        Command::PredictMap { model, rasters } => cmd_predict_map(model, rasters, report),
        Command::Ssud {
            model,
            rasters,
            locations,
            burn_in,
            candidates,
            chains,
            start,
        } => {
            let cfg = SsudConfig {
                n_locations: *locations,
                burn_in: *burn_in,
                n_candidates: *candidates,
                chains: *chains,
                start: start.as_deref().map(parse_point).transpose()?,
                ..SsudConfig::default()
            };
            cmd_ssud(model, rasters, &cfg, &root, report)
        }
        Command::Simulate {
            model,
            rasters,
            steps,
            interval,
            ncols,
            nrows,
            cellsize,
        } => {
            let o = SimOpts {
                model: model.as_deref(),
                steps: *steps,
                interval: *interval,
                ncols: *ncols,
                nrows: *nrows,
                cellsize: *cellsize,
            };
            cmd_simulate(&o, rasters, &root, report)
        }
    }
}

fn parse_point(s: &str) -> Result<Point> {
    let bad = || Error::Usage(format!("expected `x,y`, got `{s}`"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok(Point::new(
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ))
}

fn read_tracks(path: &Path, id: Option<&str>) -> Result<Vec<Track>> {
    let mut tracks = read_track_csv(path)?;
    if let Some(id) = id {
        tracks.retain(|t| t.id == id);
        if tracks.is_empty() {
            return Err(Error::InvalidParameter(format!("no track with id `{id}`")));
        }
    }
    Ok(tracks)
}

fn load_tracks(o: &TrackOpts, report: &mut Report) -> Result<Vec<Track>> {
    let tracks = read_tracks(&o.track, o.id.as_deref())?;
    report.section("data");
    report.kv("tracks", tracks.len());
    report.kv("locations", tracks.iter().map(Track::len).sum::<usize>());
    let tracks: Vec<Track> = tracks.iter().map(|t| thin(t, o.thin)).collect::<Result<_>>()?;
    if o.thin > 1 {
        report.kv(
            "locations after thinning",
            tracks.iter().map(Track::len).sum::<usize>(),
        );
    }
    Ok(tracks)
}

fn load_rasters(o: &RasterOpts) -> Result<CovariateStack> {
    if o.rasters.is_empty() {
        return Ok(CovariateStack::empty());
    }
    let layers = o
        .rasters
        .iter()
        .map(|(n, p)| Ok((n.clone(), read_ascii_grid(p)?)))
        .collect::<Result<Vec<_>>>()?;
    CovariateStack::new(layers)
}

/// Median positive gap over all tracks.
fn median_interval(tracks: &[Track]) -> Result<i64> {
    let mut gaps: Vec<i64> = tracks
        .iter()
        .flat_map(|t| t.times().windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .collect();
    if gaps.is_empty() {
        return Err(Error::TooFewSteps { needed: 1, have: 0 });
    }
    gaps.sort_unstable();
    Ok(gaps[gaps.len() / 2])
}

fn make_steps(
    tracks: &[Track],
    regular: &RegularityOpts,
    grids: &CovariateStack,
    report: &mut Report,
) -> Result<StepSeries> {
    let interval = match regular.interval {
        Some(i) => i,
        None => median_interval(tracks)?,
    };
    let mut bursts = Vec::new();
    let mut dropped = 0;
    for t in tracks {
        let b = validate_regular(t, interval, regular.tol)?;
        dropped += b.dropped_singletons;
        bursts.extend(b.bursts);
    }
    report.kv("interval_s", interval);
    report.kv("bursts", bursts.len());
    if bursts.len() > tracks.len() {
        report.warn(format!(
            "irregular gaps split {} track(s) into {} bursts",
            tracks.len(),
            bursts.len()
        ));
    }
    if dropped > 0 {
        report.warn(format!("{dropped} isolated location(s) belong to no burst"));
    }
    let steps = to_steps(&bursts, grids)?;
    report.kv("steps", steps.len());
    Ok(steps)
}

fn fit_rows(fit: &FitResult) -> Vec<(String, f64, f64, bool)> {
    fit.terms
        .iter()
        .map(|t| (t.name(), t.estimate, t.se.value, t.se.valid))
        .collect()
}

fn fit_report(report: &mut Report, fit: &FitResult) {
    report.section("fit");
    report.kv("model", fit.model_kind);
    report.kv("n", fit.n_obs);
    report.kv("loglik", fmt_f64(fit.loglik));
    report.kv("converged", fit.converged);
    report.line("");
    report.coefficients(&fit_rows(fit));
}

fn save_selection(out: &mut Outputs, fit: &FitResult, extra: Meta) {
    let mut meta = Meta(parse_metadata(&fit.metadata()));
    meta.0.extend(extra.0);
    out.add("coefficients.csv", fit.coefficients_csv());
    out.add("coefficients.meta", meta.render());
    if let Some(cov) = &fit.covariance {
        let names: Vec<String> = fit.terms.iter().map(|t| t.name()).collect();
        out.add("covariance.csv", covariance_csv(&names, cov));
    }
}

fn cmd_thin(path: &Path, id: Option<&str>, k: usize, report: &mut Report) -> Result<Outputs> {
    let tracks = read_tracks(path, id)?;
    let thinned: Vec<Track> = tracks.iter().map(|t| thin(t, k)).collect::<Result<_>>()?;
    report.section("data");
    for (a, b) in tracks.iter().zip(&thinned) {
        report.kv(
            &format!("track {}", a.id),
            format!("{} -> {} locations", a.len(), b.len()),
        );
        if !b.is_usable() {
            report.warn(format!(
                "track {} has fewer than 2 locations after thinning",
                b.id
            ));
        }
    }
    let mut out = Outputs::default();
    out.add("track.csv", track_csv_string(&thinned));
    Ok(out)
}

fn cmd_steps(
    track: &TrackOpts,
    regular: &RegularityOpts,
    rasters: &RasterOpts,
    report: &mut Report,
) -> Result<Outputs> {
    let grids = load_rasters(rasters)?;
    let tracks = load_tracks(track, report)?;
    let steps = make_steps(&tracks, regular, &grids, report)?;
    let mut out = Outputs::default();
    out.add("steps.csv", steps.to_csv_string());
    Ok(out)
}

fn cmd_fit_rsf(
    track: &TrackOpts,
    rasters: &RasterOpts,
    ratio: usize,
    buffer: f64,
    scan: &[usize],
    root: &Rng,
    report: &mut Report,
) -> Result<Outputs> {
    let grids = load_rasters(rasters)?;
    let tracks = load_tracks(track, report)?;
    let [tr] = tracks.as_slice() else {
        return Err(Error::InvalidParameter(format!(
            "fit-rsf takes one track, found {}; select one with --id",
            tracks.len()
        )));
    };
    let table = build_use_avail(tr, &grids, ratio, &mut root.child("availability"), buffer)?;
    report.kv("used", table.n_used);
    report.kv("available", table.n_available);
    report.kv("availability area", fmt_f64(table.polygon.area()));
    if table.used_dropped > 0 {
        report.warn(format!(
            "{} used location(s) on nodata were dropped",
            table.used_dropped
        ));
    }
    let fit = fit_logistic(&table, true)?;
    fit_report(report, &fit);
    let mut extra = Meta::default();
    for (j, name) in table.covariate_names.iter().enumerate() {
        extra.summarize(name, table.rows.iter().filter(|r| r.case).map(|r| r.x[j]));
    }
    let mut out = Outputs::default();
    save_selection(&mut out, &fit, extra);
    if !scan.is_empty() {
        let rows = availability_stability_scan(tr, &grids, scan, &root.child("scan"), buffer)?;
        for r in &rows {
            if let Err(e) = &r.fit {
                report.warn(format!("scan ratio {}: {e}", r.ratio));
            }
        }
        out.add("scan.csv", scan_csv_string(&rows));
    }
    Ok(out)
}

struct SsfOpts<'a> {
    covariate: Option<&'a str>,
    interaction: bool,
    controls: usize,
    free_mu: bool,
}

fn cmd_fit_ssf(
    track: &TrackOpts,
    regular: &RegularityOpts,
    rasters: &RasterOpts,
    o: &SsfOpts,
    root: &Rng,
    report: &mut Report,
) -> Result<Outputs> {
    let grids = load_rasters(rasters)?;
    let covariate = match o.covariate {
        Some(c) => c.to_string(),
        None => grids
            .names()
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("fit-ssf needs at least one --raster".into()))?,
    };
    let tracks = load_tracks(track, report)?;
    let steps = make_steps(&tracks, regular, &grids, report)?;
    let tentative = fit_tentative_kernel_with(&steps, o.free_mu)?;
    let k = &tentative.kernel;
    report.section("tentative kernel");
    report.kv("step mean", fmt_f64(k.step.mean()));
    report.kv("step sd", fmt_f64(k.step.sd()));
    report.kv("turn mu", fmt_f64(k.angle.mu()));
    report.kv("turn kappa", fmt_f64(k.angle.kappa()));
    if tentative.sd_at_floor {
        report.warn("step-length sd estimate sits at its floor");
    }
    let table = generate_controls(&steps, k, o.controls, &grids, &root.child("controls"))?;
    report.section("strata");
    report.kv("strata", table.strata.len());
    report.kv("rows", table.n_rows());
    if table.dropped_controls > 0 {
        report.warn(format!(
            "{} control(s) dropped after repeated redraws",
            table.dropped_controls
        ));
    }
    if table.skipped_no_turn > 0 {
        report.warn(format!(
            "{} step(s) without a turn angle skipped",
            table.skipped_no_turn
        ));
    }
    if table.skipped_nodata > 0 {
        report.warn(format!(
            "{} step(s) ending on nodata skipped",
            table.skipped_nodata
        ));
    }
    let spec = make_ssf_spec(&table.covariate_names, &covariate, o.interaction)?;
    let fit = fit_conditional_logistic(&table, &spec)?;
    fit_report(report, &fit);

    let mut extra = Meta::default();
    kernel_meta(&mut extra, k);
    let q = step_length_quantiles(&steps, &[0.25, 0.5, 0.75])?;
    for (name, v) in ["l_q25", "l_q50", "l_q75"].iter().zip(q) {
        extra.set_f64(*name, v);
    }
    for (j, name) in table.covariate_names.iter().enumerate() {
        extra.summarize(name, table.strata.iter().map(|s| s.rows[0].x[j]));
    }
    let mut out = Outputs::default();
    save_selection(&mut out, &fit, extra);
    out.add("strata.csv", table.to_csv_string());
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit_hmm(
    track: &TrackOpts,
    regular: &RegularityOpts,
    grids: &CovariateStack,
    n_states: usize,
    tc: &[String],
    oc: &[String],
    cfg: &HmmConfig,
    root: &Rng,
    report: &mut Report,
) -> Result<Outputs> {
    let tracks = load_tracks(track, report)?;
    let steps = make_steps(&tracks, regular, grids, report)?;
    let rng = root.child("hmm");
    let fit = fit_hmm(&steps, n_states, tc, oc, cfg, &rng)?;
    for w in &fit.warnings {
        report.warn(w.clone());
    }
    let failed = fit.restarts.iter().filter(|r| r.loglik.is_none()).count();
    if failed > 0 {
        report.warn(format!("{failed} of {} restarts failed", fit.restarts.len()));
    }
    if !fit.converged {
        report.warn("best restart did not meet the gradient tolerance");
    }

    let mut meta = Meta::default();
    meta.set("model", "hmm");
    meta.set_f64("loglik", fit.loglik);
    meta.set("n", fit.n_obs);
    meta.set("converged", fit.converged);
    meta.set("seed", rng.seed());
    meta.set("best_restart", fit.best_restart);
    hmm_layout_meta(&mut meta, &fit.layout);
    for name in tc {
        let j = steps
            .covariate_index(name)
            .ok_or_else(|| Error::MissingCovariate(name.clone()))?;
        meta.summarize(name, steps.steps.iter().filter_map(|s| s.covariates[j]));
    }

    hmm_report(report, &fit, &meta)?;
    let mut out = Outputs::default();
    out.add("coefficients.csv", fit.coefficients_csv());
    out.add("coefficients.meta", meta.render());
    if let Some(cov) = &fit.covariance {
        out.add("covariance.csv", covariance_csv(&fit.layout.names(), cov));
    }
    Ok(out)
}

fn hmm_report(report: &mut Report, fit: &HmmFit, meta: &Meta) -> Result<()> {
    report.section("fit");
    report.kv("model", format!("hmm, {} states", fit.model.n_states()));
    report.kv("n", fit.n_obs);
    report.kv("loglik", fmt_f64(fit.loglik));
    report.kv("converged", fit.converged);
    report.kv("best restart", fit.best_restart);
    report.kv("states ordered by step mean", fit.ordering.is_ascending());
    report.line("");
    for (i, s) in fit.model.states().iter().enumerate() {
        report.line(format!(
            "state {}: step mean {} sd {}, turn mu {} kappa {}",
            i + 1,
            fmt_f64(s.step.mean()),
            fmt_f64(s.step.sd()),
            fmt_f64(s.angle.mu()),
            fmt_f64(s.angle.kappa())
        ));
    }
    let x: Vec<f64> = fit
        .model
        .transition_covariates()
        .iter()
        .map(|c| meta.f64(&format!("mean.{c}")))
        .collect::<Result<_>>()?;
    let gamma = fit.model.transition_matrix_at(&x);
    report.line("transition matrix at mean covariates:");
    for r in 0..gamma.nrows() {
        let row: Vec<String> = gamma.row(r).iter().map(|v| format!("{v:.6}")).collect();
        report.line(format!("  {}", row.join(" ")));
    }
    let pi = stationary_distribution(&gamma)?;
    report.line(format!(
        "stationary distribution: {}",
        pi.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
    ));
    report.line("");
    let rows: Vec<(String, f64, f64, bool)> = fit
        .layout
        .names()
        .into_iter()
        .zip(&fit.working)
        .zip(&fit.se)
        .map(|((n, w), se)| (n, *w, se.value, se.valid))
        .collect();
    report.coefficients(&rows);
    report.section("restarts");
    report.line("index seed init_loglik loglik converged evals error");
    for r in &fit.restarts {
        report.line(format!(
            "{} {} {} {} {} {} {}",
            r.index,
            r.seed,
            fmt_f64(r.init_loglik),
            r.loglik.map_or("NA".into(), fmt_f64),
            r.converged,
            r.n_evals,
            r.error.as_deref().unwrap_or("-")
        ));
    }
    Ok(())
}

fn load_hmm(dir: &Path) -> Result<(Box<HmmFit>, Meta)> {
    match load_model(dir)? {
        SavedModel::Hmm { fit, meta } => Ok((fit, meta)),
        SavedModel::Selection { .. } => Err(Error::InvalidParameter(format!(
            "{} does not hold an HMM fit",
            dir.display()
        ))),
    }
}

fn cmd_decode(
    model: &Path,
    track: &TrackOpts,
    regular: &RegularityOpts,
    rasters: &RasterOpts,
    report: &mut Report,
) -> Result<Outputs> {
    let (fit, _) = load_hmm(model)?;
    let grids = load_rasters(rasters)?;
    let tracks = load_tracks(track, report)?;
    let steps = make_steps(&tracks, regular, &grids, report)?;
    let csv = decoded_states_csv(&fit.model, &steps)?;
    let mut counts = vec![0usize; fit.model.n_states()];
    for line in csv.lines().skip(1) {
        if let Some(s) = line.split(',').nth(4).and_then(|s| s.parse::<usize>().ok()) {
            counts[s - 1] += 1;
        }
    }
    report.section("decoded states");
    for (i, c) in counts.iter().enumerate() {
        report.kv(&format!("state {}", i + 1), c);
    }
    let mut out = Outputs::default();
    out.add("states.csv", csv);
    Ok(out)
}

struct CurveOpts<'a> {
    covariate: Option<&'a str>,
    grid: Option<&'a str>,
    reference: &'a str,
    at: &'a [(String, f64)],
    step_length: Option<f64>,
    speeds: bool,
}

fn linspace(from: f64, to: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(from < to) {
        return Err(Error::Usage(format!(
            "grid needs from < to and n >= 2 (got {from}:{to}:{n})"
        )));
    }
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                to
            } else {
                from + (to - from) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

fn curve_grid(spec: Option<&str>, meta: &Meta, covariate: &str) -> Result<Vec<f64>> {
    match spec {
        Some(s) => {
            let bad = || Error::Usage(format!("expected --grid from:to:n, got `{s}`"));
            let f: Vec<&str> = s.split(':').collect();
            let [a, b, n] = f.as_slice() else {
                return Err(bad());
            };
            linspace(
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                n.parse().map_err(|_| bad())?,
            )
        }
        None => linspace(
            meta.f64(&format!("min.{covariate}"))?,
            meta.f64(&format!("max.{covariate}"))?,
            50,
        ),
    }
}

/// Values of `names` other than `varied`, from `--at` or the saved means.
fn held_values(
    names: &[String],
    varied: &str,
    at: &[(String, f64)],
    meta: &Meta,
) -> Result<crate::fit::Covariates> {
    names
        .iter()
        .filter(|n| *n != varied)
        .map(|n| {
            let v = match at.iter().rev().find(|(k, _)| k == n) {
                Some((_, v)) => *v,
                None => meta.f64(&format!("mean.{n}"))?,
            };
            Ok((n.clone(), v))
        })
        .collect()
}

fn cmd_logrss(model: &Path, o: &CurveOpts, report: &mut Report) -> Result<Outputs> {
    let saved = load_model(model)?;
    let curve = match &saved {
        SavedModel::Hmm { fit, meta } => {
            let names = fit.model.transition_covariates();
            let covariate = match o.covariate {
                Some(c) => c.to_string(),
                None => names.first().cloned().ok_or_else(|| {
                    Error::InvalidParameter("HMM has no transition covariate to vary".into())
                })?,
            };
            let grid = curve_grid(o.grid, meta, &covariate)?;
            let others = held_values(names, &covariate, o.at, meta)?;
            report.section("curve");
            report.kv("kind", "stationary state probability");
            report.kv("covariate", &covariate);
            state_prob_curve(fit, &covariate, &grid, &others)?
        }
        SavedModel::Selection { fit, meta, .. } => {
            let names: Vec<String> = fit
                .terms
                .iter()
                .filter_map(|t| match &t.kind {
                    TermKind::Covariate(c) => Some(c.clone()),
                    _ => None,
                })
                .collect();
            let covariate = match o.covariate {
                Some(c) => c.to_string(),
                None => names
                    .first()
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter("model has no habitat covariate".into()))?,
            };
            let grid = curve_grid(o.grid, meta, &covariate)?;
            let reference = match o.reference {
                "mean" => meta.f64(&format!("mean.{covariate}"))?,
                v => v.parse().map_err(|_| {
                    Error::Usage(format!("--reference must be a number or `mean`, got `{v}`"))
                })?,
            };
            let others = held_values(&names, &covariate, o.at, meta)?;
            let interaction = fit
                .terms
                .iter()
                .any(|t| matches!(t.kind, TermKind::CovariateXLogStep(_)));
            let contexts: Vec<(String, Option<MovementContext>)> = match o.step_length {
                Some(l) => vec![("logrss".into(), Some(MovementContext::at_length(l)))],
                None if interaction || o.speeds => ["q25", "q50", "q75"]
                    .iter()
                    .map(|q| {
                        let l = meta.f64(&format!("l_{q}"))?;
                        Ok((q.to_string(), Some(MovementContext::at_length(l))))
                    })
                    .collect::<Result<_>>()?,
                None => vec![("logrss".into(), None)],
            };
            report.section("curve");
            report.kv("kind", "log-RSS");
            report.kv("covariate", &covariate);
            report.kv("reference", fmt_f64(reference));
            let mut table = CurveTable::default();
            for (series, ctx) in contexts {
                if let Some(c) = ctx {
                    report.kv(&format!("step length {series}"), fmt_f64(c.l));
                }
                table.extend(logrss_curve(
                    fit, &covariate, &grid, reference, &others, ctx, &series,
                )?);
            }
            table
        }
    };
    report.kv("series", curve.series_names().join(", "));
    report.kv("points", curve.rows.len());
    let mut out = Outputs::default();
    out.add("curve.csv", curve.to_csv_string());
    Ok(out)
}

fn map_summary(report: &mut Report, name: &str, g: &RasterGrid) {
    report.kv(
        name,
        format!(
            "{} cells with data, sum {}",
            g.valid_count(),
            fmt_f64(g.valid_sum())
        ),
    );
}

fn cmd_predict_map(model: &Path, rasters: &RasterOpts, report: &mut Report) -> Result<Outputs> {
    let grids = load_rasters(rasters)?;
    let mut out = Outputs::default();
    report.section("maps");
    match load_model(model)? {
        SavedModel::Selection { fit, .. } => {
            let m = rsf_map(&fit, &grids)?;
            let name = format!("map_{}.asc", fit.model_kind);
            map_summary(report, &name, &m);
            out.add(name, m.to_ascii_string());
        }
        SavedModel::Hmm { fit, .. } => {
            for (i, m) in hmm_state_maps(&fit, &grids)?.into_iter().enumerate() {
                let name = format!("map_state{}.asc", i + 1);
                map_summary(report, &name, &m);
                out.add(name, m.to_ascii_string());
            }
        }
    }
    Ok(out)
}

fn cmd_ssud(
    model: &Path,
    rasters: &RasterOpts,
    cfg: &SsudConfig,
    root: &Rng,
    report: &mut Report,
) -> Result<Outputs> {
    let (fit, kernel) = match load_model(model)? {
        SavedModel::Selection {
            fit, kernel: Some(k), ..
        } => (fit, k),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{} does not hold an SSF fit",
                model.display()
            )))
        }
    };
    let grids = load_rasters(rasters)?;
    let res = ssud_map(&fit, &kernel, &grids, cfg, &root.child("ssud"))?;
    report.section("ssud");
    report.kv("locations", cfg.n_locations);
    report.kv("burn-in", cfg.burn_in);
    report.kv("candidates", cfg.n_candidates);
    report.kv("chains", cfg.chains);
    map_summary(report, "map_ssud.asc", &res.map);
    let mut out = Outputs::default();
    out.add("map_ssud.asc", res.map.to_ascii_string());
    Ok(out)
}

/// Three states from slow and tortuous to fast and directed. High values of
/// `preydiv` draw the animal into, and hold it in, the slow state.
pub fn builtin_hmm() -> Result<HmmModel> {
    let states = vec![
        StateObs::new(GammaParams::new(300.0, 200.0)?, VonMisesParams::new(0.0, 0.3)?),
        StateObs::new(GammaParams::new(1500.0, 900.0)?, VonMisesParams::new(0.0, 1.0)?),
        StateObs::new(GammaParams::new(4000.0, 1500.0)?, VonMisesParams::new(0.0, 3.0)?),
    ];
    let mut m = HmmModel::new(states, vec!["preydiv".into()], vec![])?;
    for i in 0..3 {
        for j in (0..3).filter(|j| *j != i) {
            m.set_transition_coef(i, j, 0, -2.0)?;
            let slope = match (i, j) {
                (_, 0) => 2.5,
                (0, _) => -2.5,
                _ => 0.0,
            };
            m.set_transition_coef(i, j, 1, slope)?;
        }
    }
    m.set_delta(vec![1.0 / 3.0; 3])?;
    Ok(m)
}

/// Smooth field in [0, 1]: a normalized sum of Gaussian bumps.
pub fn synthetic_landscape(ncols: usize, nrows: usize, cellsize: f64, rng: &mut Rng) -> Result<RasterGrid> {
    let base = RasterGrid::new(
        ncols,
        nrows,
        0.0,
        0.0,
        cellsize,
        -9999.0,
        vec![0.0; ncols * nrows],
    )?;
    let (w, h) = (ncols as f64 * cellsize, nrows as f64 * cellsize);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..15)
        .map(|_| {
            (
                rng.uniform_range(0.0, w),
                rng.uniform_range(0.0, h),
                rng.uniform_range(0.04, 0.15) * w.max(h),
                rng.uniform_range(0.5, 1.0),
            )
        })
        .collect();
    let raw = base.map_cells(|r, c| {
        let p = base.cell_center(r, c);
        bumps
            .iter()
            .map(|(x, y, s, a)| a * (-((p.x - x).powi(2) + (p.y - y).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    });
    let (lo, hi) = raw
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    Ok(raw.map_cells(|r, c| {
        let v = (raw.get(r, c) - lo) / (hi - lo).max(f64::MIN_POSITIVE);
        (v * 1e6).round() / 1e6
    }))
}

struct SimOpts<'a> {
    model: Option<&'a Path>,
    steps: usize,
    interval: i64,
    ncols: usize,
    nrows: usize,
    cellsize: f64,
}

enum SimModel {
    Hmm(HmmModel),
    Ssf(Box<FitResult>, MovementKernel),
}

fn cmd_simulate(o: &SimOpts, rasters: &RasterOpts, root: &Rng, report: &mut Report) -> Result<Outputs> {
    let rng = root.child("simulate");
    let mut out = Outputs::default();
    let model = match o.model {
        Some(dir) => match load_model(dir)? {
            SavedModel::Hmm { fit, .. } => SimModel::Hmm(fit.model),
            SavedModel::Selection {
                fit, kernel: Some(k), ..
            } => SimModel::Ssf(Box::new(fit), k),
            SavedModel::Selection { .. } => {
                return Err(Error::InvalidParameter(format!(
                    "{} holds neither an HMM nor an SSF fit",
                    dir.display()
                )))
            }
        },
        None => SimModel::Hmm(builtin_hmm()?),
    };
    let grids = if rasters.rasters.is_empty() {
        let g = synthetic_landscape(o.ncols, o.nrows, o.cellsize, &mut rng.child("landscape"))?;
        out.add("preydiv.asc", g.to_ascii_string());
        CovariateStack::new(vec![("preydiv".into(), g)])?
    } else {
        load_rasters(rasters)?
    };
    let t = grids
        .template()
        .ok_or_else(|| Error::InvalidParameter("no landscape".into()))?;
    let start = Point::new(0.5 * (t.xll() + t.xmax()), 0.5 * (t.yll() + t.ymax()));
    report.section("simulation");
    let model = match model {
        SimModel::Hmm(m) => m,
        SimModel::Ssf(fit, kernel) => {
            let cfg = SsudConfig {
                burn_in: 0,
                start: Some(start),
                ..SsudConfig::default()
            };
            let track = simulate_ssf_path(
                &fit,
                &kernel,
                &grids,
                &cfg,
                o.steps,
                o.interval,
                &mut rng.child("path"),
            )?;
            report.kv("model", "ssf");
            report.kv("steps", o.steps);
            report.kv("candidates", cfg.n_candidates);
            out.add("track.csv", track_csv_string(std::slice::from_ref(&track)));
            return Ok(out);
        }
    };
    let cfg = SimConfig {
        id: "sim".into(),
        start,
        initial_heading: 0.0,
        t0: 0,
        interval_s: o.interval,
    };
    let (track, states) = simulate_hmm_landscape(&model, o.steps, &grids, &mut rng.child("path"), &cfg)?;
    report.kv("model", "hmm");
    report.kv("states", model.n_states());
    report.kv("steps", states.len());
    for i in 0..model.n_states() {
        report.kv(
            &format!("steps in state {}", i + 1),
            states.iter().filter(|s| **s == i).count(),
        );
    }
    let mut s = String::from("id,t,state\n");
    for (t, z) in track.times().iter().zip(&states) {
        s.push_str(&format!("{},{},{}\n", track.id, t, z + 1));
    }
    out.add("track.csv", track_csv_string(std::slice::from_ref(&track)));
    out.add("true_states.csv", s);
    Ok(out)
}
