//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use movesel::fit::{Covariates, ModelKind, TermKind};
use movesel::geodata::{CovariateStack, Point, RasterGrid};
use movesel::hmm::*;
use movesel::numcore::{numerical_gradient, GammaParams, Rng, VonMisesParams};
use movesel::predict::*;
use movesel::rsf::*;
use movesel::ssf::*;
use movesel::track::{thin, to_steps, validate_regular};
use nalgebra::DMatrix;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Outcome {
    if ok {
        Ok(String::new())
    } else {
        Err(what.into())
    }
}

fn state(mean: f64, sd: f64, kappa: f64) -> StateObs {
    StateObs::new(
        GammaParams::new(mean, sd).unwrap(),
        VonMisesParams::new(0.0, kappa).unwrap(),
    )
}

fn random_model(n: usize, rng: &mut Rng) -> HmmModel {
    let states = (0..n)
        .map(|i| state(1.0 + 3.0 * i as f64, 0.5 + i as f64, 0.3 + i as f64))
        .collect();
    let mut m = HmmModel::new(states, vec!["x".into()], vec![]).unwrap();
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            m.set_transition_coef(i, j, 0, rng.uniform_range(-2.5, 0.0))
                .unwrap();
            m.set_transition_coef(i, j, 1, rng.uniform_range(-1.0, 1.0))
                .unwrap();
        }
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut d: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let rest: f64 = d[1..].iter().sum();
    d[0] = 1.0 - rest;
    m.set_delta(d).unwrap();
    m
}

fn small_instances() -> Vec<(HmmModel, movesel::track::StepSeries)> {
    let mut rng = Rng::new(1001);
    let mut out = Vec::new();
    for (n, max_t) in [(2, 8), (3, 6)] {
        for t in 1..=max_t {
            for _ in 0..3 {
                let m = random_model(n, &mut rng);
                out.push((m, random_series(t, &mut rng)));
            }
        }
    }
    out
}

fn c1_forward_vs_enumeration() -> Outcome {
    let cases = small_instances();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (m, st) in &cases {
        let f = hmm_loglik(m, st).map_err(|e| e.to_string())?;
        let b = brute_force_loglik(m, st);
        worst = worst.max(((f - b) / b).abs());
    }
    let el = start.elapsed();
    check(worst < 1e-10, format!("max relative error {worst:e}"))?;
    check(el < Duration::from_secs(1), format!("took {el:?}"))?;
    Ok(format!(
        "{} instances, max relative error {worst:.1e}, {el:.2?}",
        cases.len()
    ))
}

fn c2_viterbi_vs_exhaustive() -> Outcome {
    let cases = small_instances();
    for (k, (m, st)) in cases.iter().enumerate() {
        let seqs = enumerate_sequences(m, st);
        let mut best = &seqs[0];
        for s in &seqs {
            if s.1 > best.1 {
                best = s;
            }
        }
        let z = viterbi_decode(m, st).map_err(|e| e.to_string())?;
        check(
            z[0] == best.0,
            format!("instance {k}: {:?} vs {:?}", z[0], best.0),
        )?;
    }
    Ok(format!("{} instances identical", cases.len()))
}

fn c3_hmm_recovery() -> Outcome {
    let means = [1.0, 6.0, 25.0];
    let mut truth = HmmModel::new(
        vec![
            state(means[0], 0.5, 0.5),
            state(means[1], 2.0, 2.0),
            state(means[2], 6.0, 5.0),
        ],
        vec![],
        vec![],
    )
    .unwrap();
    let intercepts = [[0.0, -2.5, -3.0], [-2.0, 0.0, -2.5], [-3.0, -2.0, 0.0]];
    for i in 0..3 {
        for j in (0..3).filter(|j| *j != i) {
            truth.set_transition_coef(i, j, 0, intercepts[i][j]).unwrap();
        }
    }
    let (tr, _) = simulate_hmm(&truth, 5000, &[], &mut Rng::new(1003), &SimConfig::default())
        .map_err(|e| e.to_string())?;
    let steps = to_steps(&[tr], &CovariateStack::empty()).map_err(|e| e.to_string())?;
    let cfg = HmmConfig {
        restarts: 25,
        ..HmmConfig::default()
    };
    let start = Instant::now();
    let fit = fit_hmm(&steps, 3, &[], &[], &cfg, &Rng::new(1004)).map_err(|e| e.to_string())?;
    let el = start.elapsed();
    let mut worst_mean = 0.0f64;
    for (s, want) in fit.model.states().iter().zip(means) {
        worst_mean = worst_mean.max((s.step.mean() - want).abs() / want);
    }
    let mut worst_logit = 0.0f64;
    for i in 0..3 {
        for j in (0..3).filter(|j| *j != i) {
            worst_logit = worst_logit.max((fit.model.transition_coef(i, j, 0) - intercepts[i][j]).abs());
        }
    }
    check(
        worst_mean < 0.1,
        format!("step mean off by {:.1}%", 100.0 * worst_mean),
    )?;
    check(
        worst_logit < 0.3,
        format!("transition intercept off by {worst_logit:.3}"),
    )?;
    check(el < Duration::from_secs(120), format!("took {el:?}"))?;
    Ok(format!(
        "worst step mean error {:.2}%, worst intercept error {worst_logit:.3}, {el:.1?}",
        100.0 * worst_mean
    ))
}

fn two_by_two(n11: usize, n10: usize, n01: usize, n00: usize) -> UseAvailTable {
    let mut rows = Vec::new();
    for (case, x, n) in [
        (true, 1.0, n11),
        (true, 0.0, n10),
        (false, 1.0, n01),
        (false, 0.0, n00),
    ] {
        rows.extend((0..n).map(|_| UseAvailRow {
            case,
            location: Point::default(),
            x: vec![x],
            weight: 1.0,
        }));
    }
    UseAvailTable {
        covariate_names: vec!["x".into()],
        n_used: n11 + n10,
        n_available: n01 + n00,
        rows,
        polygon: movesel::geodata::Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap(),
        seed: 0,
        used_dropped: 0,
    }
}

fn c4_logistic_rsf() -> Outcome {
    let mut rng = Rng::new(1005);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n: Vec<usize> = (0..4).map(|_| 1 + rng.index(60)).collect();
        let f = fit_logistic(&two_by_two(n[0], n[1], n[2], n[3]), true).map_err(|e| e.to_string())?;
        let closed = ((n[0] * n[3]) as f64 / (n[1] * n[2]) as f64).ln();
        worst = worst.max((f.terms[1].estimate - closed).abs());
    }
    check(worst < 1e-8, format!("2x2 log odds ratio off by {worst:e}"))?;

    let grid = bumpy_grid(80, 80, 100.0, 1006);
    let grids = stack("v", grid.clone());
    let truth = 1.5;
    let root = Rng::new(1007);
    let mut covered = 0;
    for r in 0..100 {
        let mut rep = root.child_indexed(r);
        let track = exp_rsf_track(&grid, truth, 500, &mut rep);
        let t = build_use_avail(&track, &grids, 10, &mut rep, 0.0).map_err(|e| e.to_string())?;
        let f = fit_logistic(&t, true).map_err(|e| e.to_string())?;
        let b = f.term(&TermKind::Covariate("v".into())).unwrap();
        covered += usize::from((b.estimate - truth).abs() < 3.0 * b.se.value);
    }
    check(covered >= 99, format!("coverage {covered}/100"))?;
    Ok(format!("2x2 max error {worst:.1e}; coverage {covered}/100"))
}

fn ssf_landscape() -> CovariateStack {
    stack("v", bumpy_grid(200, 200, 50.0, 1008))
}

fn ssf_kernel() -> MovementKernel {
    MovementKernel {
        step: GammaParams::new(150.0, 100.0).unwrap(),
        angle: VonMisesParams::new(0.0, 0.5).unwrap(),
    }
}

fn ssf_spec() -> Vec<TermKind> {
    vec![
        TermKind::Covariate("v".into()),
        TermKind::StepLength,
        TermKind::LogStepLength,
        TermKind::CosTurn,
    ]
}

fn ssf_table(grids: &CovariateStack, beta: f64, n_steps: usize, rng: &Rng) -> Result<StepTable, String> {
    let track = ssf_path(grids, beta, &ssf_kernel(), n_steps, &mut rng.child("path"));
    let steps = to_steps(
        &validate_regular(&track, 3600, 0.1)
            .map_err(|e| e.to_string())?
            .bursts,
        grids,
    )
    .map_err(|e| e.to_string())?;
    let tk = fit_tentative_kernel(&steps).map_err(|e| e.to_string())?;
    generate_controls(&steps, &tk.kernel, 10, grids, &rng.child("controls")).map_err(|e| e.to_string())
}

fn c5_conditional_logistic() -> Outcome {
    let grids = ssf_landscape();
    let spec = ssf_spec();
    let mut rng = Rng::new(1009);
    let table = ssf_table(&grids, 1.0, 400, &Rng::new(1010))?;
    let mut shifted = table.clone();
    for st in &mut shifted.strata {
        let c = rng.normal() * 5.0;
        for r in &mut st.rows {
            r.x[0] += c;
        }
    }
    let mut worst_shift = 0.0f64;
    for _ in 0..10 {
        let b: Vec<f64> = (0..4).map(|_| rng.normal() * 0.01).collect();
        let a = clogit_loglik(&table, &spec, &b).map_err(|e| e.to_string())?;
        let s = clogit_loglik(&shifted, &spec, &b).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max(((a - s) / a).abs());
    }
    check(
        worst_shift < 1e-12,
        format!("stratum shift changed loglik by {worst_shift:e}"),
    )?;

    let fit = fit_conditional_logistic(&table, &spec).map_err(|e| e.to_string())?;
    let b = fit.estimates();
    let score = clogit_score(&table, &spec, &b).map_err(|e| e.to_string())?;
    let fd = numerical_gradient(|x| clogit_loglik(&table, &spec, x).unwrap(), &b);
    // Both sides vanish at the optimum, so near it the comparison is taken
    // at unit scale; the log-likelihood itself is in the thousands.
    let mut worst_score = 0.0f64;
    for (a, f) in score.iter().zip(&fd) {
        worst_score = worst_score.max((a - f).abs() / f.abs().max(1.0));
    }
    for _ in 0..10 {
        let p: Vec<f64> = b
            .iter()
            .map(|v| v + rng.normal() * 0.05 * v.abs().max(0.01))
            .collect();
        let a = clogit_score(&table, &spec, &p).map_err(|e| e.to_string())?;
        let f = numerical_gradient(|x| clogit_loglik(&table, &spec, x).unwrap(), &p);
        for (a, f) in a.iter().zip(&f) {
            worst_score = worst_score.max((a - f).abs() / f.abs().max(1.0));
        }
    }
    check(
        worst_score < 1e-4,
        format!("score vs finite differences {worst_score:e}"),
    )?;

    let truth = 1.5;
    let root = Rng::new(1011);
    let mut covered = 0;
    for r in 0..50 {
        let t = ssf_table(&grids, truth, 2001, &root.child_indexed(r))?;
        let f = fit_conditional_logistic(&t, &spec).map_err(|e| e.to_string())?;
        let b = f.term(&TermKind::Covariate("v".into())).unwrap();
        covered += usize::from((b.estimate - truth).abs() < 3.0 * b.se.value);
    }
    check(covered >= 45, format!("coverage {covered}/50"))?;
    Ok(format!(
        "shift invariance {worst_shift:.1e}, score error {worst_score:.1e}, coverage {covered}/50"
    ))
}

fn c6_availability_stability() -> Outcome {
    let grid = bumpy_grid(80, 80, 100.0, 1012);
    let grids = stack("v", grid.clone());
    let root = Rng::new(1013);
    let mut dist = vec![Vec::new(); 3];
    for r in 0..50 {
        let rep = root.child_indexed(r);
        let track = exp_rsf_track(&grid, 2.0, 100, &mut rep.child("track"));
        let rows = availability_stability_scan(&track, &grids, &[1, 10, 100, 1000], &rep, 0.0)
            .map_err(|e| e.to_string())?;
        let b: Vec<f64> = rows
            .iter()
            .map(|r| {
                r.fit
                    .as_ref()
                    .map(|f| f.estimate("v").unwrap())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        for k in 0..3 {
            dist[k].push((b[k] - b[3]).abs());
        }
    }
    let med: Vec<f64> = dist.iter_mut().map(|d| median(d)).collect();
    check(med[0] > med[1] && med[1] > med[2], format!("medians {med:?}"))?;
    Ok(format!(
        "median |b(r) - b(1000)| at r = 1, 10, 100: {:.4}, {:.4}, {:.4}",
        med[0], med[1], med[2]
    ))
}

fn c7_structural_numbers() -> Outcome {
    let grid = bumpy_grid(60, 60, 50.0, 1014);
    let grids = stack("v", grid.clone());
    let track = uniform_track(&grid, 140, &mut Rng::new(1015));
    let thinned = thin(&track, 10).map_err(|e| e.to_string())?;
    check(thinned.len() == 14, format!("thinned to {}", thinned.len()))?;
    let t = build_use_avail(&track, &grids, 10, &mut Rng::new(1016), 0.0).map_err(|e| e.to_string())?;
    let avail = t.rows.iter().filter(|r| !r.case).count();
    check(avail == 1400, format!("{avail} availability rows"))?;

    let sgrids = ssf_landscape();
    let table = ssf_table(&sgrids, 1.0, 139, &Rng::new(1017))?;
    let widest = table.strata.iter().map(|s| s.rows.len()).max().unwrap_or(0);
    check(widest <= 11, format!("stratum of {widest} rows"))?;

    let mut m = HmmModel::new(
        vec![state(1.0, 0.5, 0.5), state(5.0, 2.0, 1.0), state(20.0, 5.0, 3.0)],
        vec!["v".into()],
        vec![],
    )
    .unwrap();
    m.set_transition_coef(0, 1, 1, 1.0).unwrap();
    let maps = hmm_state_maps(&wrap_hmm(m), &grids).map_err(|e| e.to_string())?;
    check(maps.len() == 3, format!("{} state maps", maps.len()))?;
    let n = SsudConfig::default().n_locations;
    check(n == 100_000, format!("SSUD default {n}"))?;
    Ok(format!(
        "140 -> {}, {avail} available, strata <= {widest} rows, {} state maps, {n} SSUD locations",
        thinned.len(),
        maps.len()
    ))
}

fn wrap_hmm(model: HmmModel) -> HmmFit {
    let layout = WorkingLayout {
        n_states: model.n_states(),
        transition_covariates: model.transition_covariates().to_vec(),
        obs_covariates: vec![],
        estimate_mu: false,
        initial: InitialPolicy::Free,
    };
    let working = layout.pack(&model);
    HmmFit {
        ordering: OrderingCertificate {
            permutation: (0..model.n_states()).collect(),
            base_means: model.states().iter().map(|s| s.step.mean()).collect(),
        },
        model,
        loglik: 0.0,
        se: vec![],
        covariance: None,
        working,
        layout,
        restarts: vec![],
        best_restart: 0,
        converged: true,
        n_obs: 0,
        warnings: vec![],
    }
}

fn map_total(g: &RasterGrid) -> f64 {
    g.values().iter().filter(|v| !g.is_nodata(**v)).sum()
}

fn c8_normalization() -> Outcome {
    let mut worst = 0.0f64;
    for (mean, sd) in [(1.0, 1.0), (5.0, 2.0), (300.0, 200.0), (2.0, 4.0), (0.01, 0.001)] {
        let g = GammaParams::new(mean, sd).unwrap();
        let (lo, hi) = (mean.ln() - 300.0, (50.0 * mean + 100.0 * sd).ln());
        let total = simpson(|u| (g.logpdf(u.exp()).unwrap() + u).exp(), lo, hi, 200_000);
        worst = worst.max((total - 1.0).abs());
    }
    for kappa in [0.0, 0.5, 5.0, 100.0, 700.0] {
        let v = VonMisesParams::new(0.7, kappa).unwrap();
        worst = worst.max((simpson(|t| v.logpdf(t).exp(), -PI, PI, 200_000) - 1.0).abs());
    }
    check(worst < 1e-6, format!("density integrates to 1 +- {worst:e}"))?;

    let mut rng = Rng::new(1018);
    let mut worst_pi = 0.0f64;
    for _ in 0..50 {
        let n = 2 + rng.index(4);
        let mut g = DMatrix::from_fn(n, n, |_, _| rng.uniform_range(0.05, 1.0));
        for i in 0..n {
            let s: f64 = g.row(i).sum();
            for j in 0..n {
                g[(i, j)] /= s;
            }
        }
        let pi = stationary_distribution(&g).map_err(|e| e.to_string())?;
        let mut p = g.clone();
        for _ in 0..99 {
            p = &p * &g;
        }
        for j in 0..n {
            worst_pi = worst_pi.max((pi[j] - p[(0, j)]).abs());
        }
    }
    check(
        worst_pi < 1e-10,
        format!("stationary vs matrix power {worst_pi:e}"),
    )?;

    let grids = stack("v", bumpy_grid(60, 60, 50.0, 1019));
    let rsf = selection_fit(
        ModelKind::Rsf,
        &[
            (TermKind::Intercept, -1.0),
            (TermKind::Covariate("v".into()), 2.0),
        ],
    );
    let ssf = selection_fit(ModelKind::Ssf, &[(TermKind::Covariate("v".into()), 2.0)]);
    let kernel = MovementKernel {
        step: GammaParams::new(120.0, 80.0).unwrap(),
        angle: VonMisesParams::new(0.0, 0.5).unwrap(),
    };
    let cfg = SsudConfig {
        n_locations: 20_000,
        ..SsudConfig::default()
    };
    let rmap = rsf_map(&rsf, &grids).map_err(|e| e.to_string())?;
    let smap = ssud_map(&ssf, &kernel, &grids, &cfg, &Rng::new(1020))
        .map_err(|e| e.to_string())?
        .map;
    let worst_map = (map_total(&rmap) - 1.0).abs().max((map_total(&smap) - 1.0).abs());
    check(worst_map < 1e-9, format!("map total off by {worst_map:e}"))?;

    let m = random_model(3, &mut rng);
    let xgrids = stack("x", bumpy_grid(60, 60, 50.0, 1022));
    let maps = hmm_state_maps(&wrap_hmm(m), &xgrids).map_err(|e| e.to_string())?;
    let mut worst_cell = 0.0f64;
    for i in 0..maps[0].len() {
        let s: f64 = maps.iter().map(|g| g.values()[i]).sum();
        worst_cell = worst_cell.max((s - 1.0).abs());
    }
    check(
        worst_cell < 1e-10,
        format!("state maps per-cell sum off by {worst_cell:e}"),
    )?;
    Ok(format!(
        "densities {worst:.1e}, stationary {worst_pi:.1e}, maps {worst_map:.1e}, state cells {worst_cell:.1e}"
    ))
}

fn c9_log_rss() -> Outcome {
    let mut fit = selection_fit(
        ModelKind::Ssf,
        &[
            (TermKind::Covariate("v".into()), 0.8),
            (TermKind::StepLength, -0.004),
            (TermKind::LogStepLength, 0.3),
            (TermKind::CosTurn, 0.2),
            (TermKind::CovariateXLogStep("v".into()), 0.0),
        ],
    );
    fit.covariance = Some(DMatrix::from_fn(5, 5, |i, j| if i == j { 0.04 } else { 0.01 }));
    let ctx = Some(MovementContext::at_length(200.0));
    let mut rng = Rng::new(1021);
    for _ in 0..200 {
        let a = Covariates::from([("v".to_string(), rng.normal())]);
        let b = Covariates::from([("v".to_string(), rng.normal())]);
        let same = log_rss(&fit, &a, &a, ctx).map_err(|e| e.to_string())?;
        check(same == (0.0, 0.0), format!("log_rss(x, x) = {same:?}"))?;
        let (f, sf) = log_rss(&fit, &a, &b, ctx).map_err(|e| e.to_string())?;
        let (r, sr) = log_rss(&fit, &b, &a, ctx).map_err(|e| e.to_string())?;
        check(f == -r && sf == sr, format!("antisymmetry: {f} vs {r}"))?;
    }

    let grids = ssf_landscape();
    let track = ssf_path(&grids, 1.0, &ssf_kernel(), 500, &mut rng);
    let steps = to_steps(
        &validate_regular(&track, 3600, 0.1)
            .map_err(|e| e.to_string())?
            .bursts,
        &grids,
    )
    .map_err(|e| e.to_string())?;
    let speeds = step_length_quantiles(&steps, &[0.25, 0.5, 0.75]).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..25).map(|i| i as f64 * 0.04).collect();
    let curves = |f: &movesel::fit::FitResult| -> Result<Vec<CurveTable>, String> {
        speeds
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let ctx = Some(MovementContext::at_length(*l));
                logrss_curve(f, "v", &grid, 0.5, &Covariates::new(), ctx, &format!("q{k}"))
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let flat = curves(&fit)?;
    check(flat.len() == 3, "three curves")?;
    for c in &flat[1..] {
        // only the values: the interaction's own variance still enters the se
        let same = c.rows.iter().zip(&flat[0].rows).all(|(a, b)| a.value == b.value);
        check(same, "curves differ with a zero interaction")?;
    }
    let bent_fit = {
        let mut f = fit.clone();
        f.terms[4].estimate = 0.3;
        f
    };
    let bent = curves(&bent_fit)?;
    let ends: Vec<f64> = bent.iter().map(|c| c.rows.last().unwrap().value).collect();
    check(
        ends[0] != ends[1] && ends[1] != ends[2],
        "curves coincide with a non-zero interaction",
    )?;
    Ok(format!(
        "identity and antisymmetry exact; speeds {:.1}, {:.1}, {:.1} coincide at zero interaction",
        speeds[0], speeds[1], speeds[2]
    ))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// All three fits and every map on the bundled synthetic dataset, defaults
/// throughout.
fn full_pipeline(dir: &Path) -> Result<Duration, String> {
    let track = fixture("track.csv").display().to_string();
    let raster = format!("preydiv={}", fixture("preydiv.asc").display());
    let (t, r) = (track.as_str(), raster.as_str());
    let runs: [&[&str]; 8] = [
        &["fit-rsf", "--track", t, "--raster", r, "--out", "rsf"],
        &["fit-ssf", "--track", t, "--raster", r, "--out", "ssf"],
        &["fit-hmm", "--track", t, "--raster", r, "--out", "hmm"],
        &[
            "decode", "--model", "hmm", "--track", t, "--raster", r, "--out", "decode",
        ],
        &["predict-map", "--model", "rsf", "--raster", r, "--out", "map_rsf"],
        &["predict-map", "--model", "ssf", "--raster", r, "--out", "map_ssf"],
        &["predict-map", "--model", "hmm", "--raster", r, "--out", "map_hmm"],
        &["ssud", "--model", "ssf", "--raster", r, "--out", "ssud"],
    ];
    let start = Instant::now();
    for args in runs {
        let status = Command::new(env!("CARGO_BIN_EXE_movesel"))
            .current_dir(dir)
            .args(args)
            .args(["--seed", "2024"])
            .output()
            .map_err(|e| e.to_string())?
            .status;
        check(status.success(), format!("{} exited with {status}", args[0]))?;
    }
    Ok(start.elapsed())
}

fn c10_end_to_end() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = full_pipeline(a.path())?;
    let tb = full_pipeline(b.path())?;
    let (fa, fb) = (tree(a.path()), tree(b.path()));
    check(fa.keys().eq(fb.keys()), "output file sets differ")?;
    for (k, v) in &fa {
        check(*v == fb[k], format!("{} differs between runs", k.display()))?;
    }
    let slowest = ta.max(tb);
    check(
        slowest < Duration::from_secs(60),
        format!("pipeline took {slowest:?}"),
    )?;
    Ok(format!(
        "{} files byte-identical; pipeline {ta:.1?} and {tb:.1?}",
        fa.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        (
            "HMM forward likelihood equals enumeration",
            c1_forward_vs_enumeration,
        ),
        ("Viterbi equals exhaustive argmax", c2_viterbi_vs_exhaustive),
        ("3-state HMM parameter recovery", c3_hmm_recovery),
        ("logistic RSF closed form and coverage", c4_logistic_rsf),
        ("conditional logistic SSF", c5_conditional_logistic),
        ("availability stability", c6_availability_stability),
        ("structural numbers", c7_structural_numbers),
        ("normalization", c8_normalization),
        ("log-RSS contracts", c9_log_rss),
        ("end-to-end determinism and runtime", c10_end_to_end),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = f();
        let el = start.elapsed();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{el:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{el:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
