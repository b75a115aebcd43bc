mod common;

use std::f64::consts::PI;

use common::*;
use movesel::error::Error;
use movesel::fit::{Covariates, ModelKind, TermKind};
use movesel::geodata::Point;
use movesel::numcore::{numerical_gradient, GammaParams, Rng, VonMisesParams};
use movesel::ssf::*;
use movesel::track::{to_steps, validate_regular};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn row(case: bool, l: f64, turn: f64, x: Vec<f64>) -> StepRow {
    StepRow {
        case,
        end: Point::default(),
        l,
        ln_l: l.ln(),
        cos_theta: turn.cos(),
        x,
    }
}

/// Random strata whose case row leans toward high `v` and short steps.
fn random_table(n_strata: usize, n_controls: usize, rng: &mut Rng) -> StepTable {
    let strata = (0..n_strata)
        .map(|id| {
            let mut rows: Vec<StepRow> = (0..=n_controls)
                .map(|_| {
                    row(
                        false,
                        rng.uniform_range(0.5, 20.0),
                        rng.uniform_range(-PI, PI),
                        vec![rng.normal(), rng.uniform()],
                    )
                })
                .collect();
            let pick = (0..rows.len())
                .max_by(|&a, &b| {
                    let s = |r: &StepRow| r.x[0] - 0.05 * r.l + 0.8 * jitter(id, r.l);
                    s(&rows[a]).total_cmp(&s(&rows[b]))
                })
                .unwrap();
            rows[pick].case = true;
            rows.swap(0, pick);
            Stratum { id, rows }
        })
        .collect();
    StepTable {
        covariate_names: vec!["v".into(), "w".into()],
        strata,
        dropped_controls: 0,
        skipped_no_turn: 0,
        skipped_nodata: 0,
        seed: None,
    }
}

/// Deterministic pseudo-noise in [0, 1).
fn jitter(id: usize, l: f64) -> f64 {
    ((id as f64 * 12.9898 + l * 78.233).sin() * 43758.5453).fract()
}

fn full_spec() -> Vec<TermKind> {
    vec![
        TermKind::Covariate("v".into()),
        TermKind::StepLength,
        TermKind::LogStepLength,
        TermKind::CosTurn,
    ]
}

#[test]
fn stratum_constants_cancel_exactly() {
    let mut rng = Rng::new(30);
    let t = random_table(200, 10, &mut rng);
    let spec = full_spec();
    let mut shifted = t.clone();
    for st in &mut shifted.strata {
        let c = rng.normal() * 5.0;
        for r in &mut st.rows {
            r.x[0] += c;
        }
    }
    for _ in 0..10 {
        let b: Vec<f64> = (0..4).map(|_| rng.normal() * 0.3).collect();
        let a = clogit_loglik(&t, &spec, &b).unwrap();
        let s = clogit_loglik(&shifted, &spec, &b).unwrap();
        assert!((a - s).abs() <= 1e-12 * a.abs(), "{a} vs {s}");
    }
}

#[test]
fn score_matches_finite_differences() {
    let mut rng = Rng::new(31);
    let t = random_table(150, 10, &mut rng);
    let spec = full_spec();
    let fit = fit_conditional_logistic(&t, &spec).unwrap();
    let at_hat = clogit_score(&t, &spec, &fit.estimates()).unwrap();
    let fd = numerical_gradient(|b| clogit_loglik(&t, &spec, b).unwrap(), &fit.estimates());
    for (a, f) in at_hat.iter().zip(&fd) {
        assert!(
            a.abs() < 1e-6 && (a - f).abs() < 1e-4 * f.abs().max(1e-3),
            "{a} vs {f}"
        );
    }
    for _ in 0..20 {
        let b: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0) * 0.5).collect();
        let a = clogit_score(&t, &spec, &b).unwrap();
        let f = numerical_gradient(|x| clogit_loglik(&t, &spec, x).unwrap(), &b);
        for (a, f) in a.iter().zip(&f) {
            assert!((a - f).abs() < 1e-4 * f.abs().max(1e-2), "{a} vs {f}");
        }
    }
}

#[test]
fn three_category_softmax_matches_grid_search() {
    let (x0, x1, x2) = (0.4, -0.3, 1.1);
    let one = Stratum {
        id: 0,
        rows: vec![
            row(true, 1.0, 0.0, vec![x0]),
            row(false, 2.0, 1.0, vec![x1]),
            row(false, 3.0, 2.0, vec![x2]),
        ],
    };
    let mut table = StepTable {
        covariate_names: vec!["v".into()],
        strata: vec![one.clone()],
        dropped_controls: 0,
        skipped_no_turn: 0,
        skipped_nodata: 0,
        seed: None,
    };
    let spec = [TermKind::Covariate("v".into())];
    assert!(matches!(
        fit_conditional_logistic(&table, &spec),
        Err(Error::InvalidParameter(_))
    ));
    // a duplicated stratum doubles the likelihood and keeps its argmax
    table.strata.push(Stratum { id: 1, ..one });
    let fit = fit_conditional_logistic(&table, &spec).unwrap();
    let ll = |b: f64| b * x0 - ((b * x0).exp() + (b * x1).exp() + (b * x2).exp()).ln();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=20_000 {
        let b = -10.0 + i as f64 * 1e-3;
        if ll(b) > best.0 {
            best = (ll(b), b);
        }
    }
    assert!(
        (fit.terms[0].estimate - best.1).abs() < 1e-3,
        "{} vs {}",
        fit.terms[0].estimate,
        best.1
    );
}

#[test]
fn fixed_zero_interaction_equals_plain_fit() {
    let mut rng = Rng::new(32);
    let t = random_table(300, 10, &mut rng);
    let plain = fit_conditional_logistic(&t, &full_spec()).unwrap();
    let mut spec = full_spec();
    spec.push(TermKind::CovariateXLogStep("v".into()));
    let fixed =
        fit_conditional_logistic_fixed(&t, &spec, &[(TermKind::CovariateXLogStep("v".into()), 0.0)]).unwrap();
    for term in &plain.terms {
        let other = fixed.term(&term.kind).unwrap();
        assert!((term.estimate - other.estimate).abs() < 1e-6);
    }
    let inter = fixed.term(&TermKind::CovariateXLogStep("v".into())).unwrap();
    assert_eq!(inter.estimate, 0.0);
    assert!(!inter.se.valid);
}

#[test]
fn spec_shapes() {
    let names = vec!["preydiv".to_string()];
    assert_eq!(make_ssf_spec(&names, "preydiv", false).unwrap().len(), 4);
    assert_eq!(make_ssf_spec(&names, "preydiv", true).unwrap().len(), 5);
    assert!(matches!(
        make_ssf_spec(&names, "depth", true),
        Err(Error::UnknownCovariate(_))
    ));
}

#[test]
fn tentative_kernel_recovery() {
    let mut rng = Rng::new(33);
    let g = GammaParams::new(5.0, 2.0).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
    let (fit, floor) = fit_gamma(&xs).unwrap();
    assert!(!floor);
    assert!(
        (fit.mean() - 5.0).abs() < 0.1 && (fit.sd() - 2.0).abs() < 0.1,
        "{fit:?}"
    );
    let th: Vec<f64> = (0..10_000).map(|_| rng.uniform_range(-PI, PI)).collect();
    assert!(fit_vonmises(&th, false).unwrap().kappa() < 0.05);
    let (_, floor) = fit_gamma(&[3.0; 50]).unwrap();
    assert!(floor);
}

fn landscape() -> movesel::geodata::CovariateStack {
    stack("v", bumpy_grid(200, 200, 50.0, 34))
}

fn kernel() -> MovementKernel {
    MovementKernel {
        step: GammaParams::new(150.0, 100.0).unwrap(),
        angle: VonMisesParams::new(0.0, 0.5).unwrap(),
    }
}

#[test]
fn controls_follow_the_kernel() {
    let grids = landscape();
    let k = kernel();
    let mut rng = Rng::new(35);
    let track = ssf_path(&grids, 0.0, &k, 1500, &mut rng);
    let steps = to_steps(&validate_regular(&track, 3600, 0.1).unwrap().bursts, &grids).unwrap();
    let table = generate_controls(&steps, &k, 10, &grids, &Rng::new(36)).unwrap();
    let controls: Vec<f64> = table
        .strata
        .iter()
        .flat_map(|s| s.rows.iter().filter(|r| !r.case).map(|r| r.l))
        .collect();
    let direct: Vec<f64> = (0..100_000).map(|_| k.step.sample(&mut rng)).collect();
    let (d, p) = ks_two_sample(&controls, &direct);
    assert!(p > 0.01, "D = {d}, p = {p}");
    let again = generate_controls(&steps, &k, 10, &grids, &Rng::new(36)).unwrap();
    assert_eq!(table, again);
}

#[test]
fn strata_per_observed_step() {
    let grids = landscape();
    let track = ssf_path(&grids, 1.0, &kernel(), 139, &mut Rng::new(37));
    assert_eq!(track.len(), 140);
    let steps = to_steps(&validate_regular(&track, 3600, 0.1).unwrap().bursts, &grids).unwrap();
    assert_eq!(steps.len(), 139);
    let table = generate_controls(&steps, &kernel(), 10, &grids, &Rng::new(38)).unwrap();
    assert!(table.strata.len() <= 139);
    assert!(table
        .strata
        .iter()
        .all(|s| s.rows.len() <= 11 && s.rows.iter().filter(|r| r.case).count() == 1));
}

#[test]
fn kernel_update_examples() {
    let k = MovementKernel {
        step: GammaParams::from_shape_rate(2.0, 0.4).unwrap(),
        angle: VonMisesParams::new(0.0, 1.0).unwrap(),
    };
    let fit = |b_l: f64, b_ln: f64| {
        selection_fit(
            ModelKind::Ssf,
            &[
                (TermKind::Covariate("v".into()), 1.0),
                (TermKind::StepLength, b_l),
                (TermKind::LogStepLength, b_ln),
                (TermKind::CosTurn, 0.0),
            ],
        )
    };
    let x = Covariates::new();
    let same = update_movement_kernel(&k, &fit(0.0, 0.0), &x).unwrap();
    assert!((same.step.mean() / k.step.mean() - 1.0).abs() < 1e-12);
    assert!((same.step.sd() / k.step.sd() - 1.0).abs() < 1e-12);
    assert_eq!(same.angle, k.angle);
    let up = update_movement_kernel(&k, &fit(0.0, 0.5), &x).unwrap();
    assert!((up.step.shape() - 2.5).abs() < 1e-12);
    assert!(matches!(
        update_movement_kernel(&k, &fit(0.5, 0.0), &x),
        Err(Error::InvalidUpdatedKernel { .. })
    ));
}

/// Integrated SSF on paths simulated with known habitat selection.
#[test]
fn selection_recovery() {
    let grids = landscape();
    let truth = 1.5;
    let root = Rng::new(39);
    let mut covered = 0;
    let reps = 50;
    for r in 0..reps {
        let rep = root.child_indexed(r);
        let track = ssf_path(&grids, truth, &kernel(), 2001, &mut rep.child("path"));
        let steps = to_steps(&validate_regular(&track, 3600, 0.1).unwrap().bursts, &grids).unwrap();
        let tk = fit_tentative_kernel(&steps).unwrap();
        let table = generate_controls(&steps, &tk.kernel, 10, &grids, &rep.child("controls")).unwrap();
        let fit = fit_conditional_logistic(&table, &full_spec()).unwrap();
        let b = fit.term(&TermKind::Covariate("v".into())).unwrap();
        covered += usize::from((b.estimate - truth).abs() < 3.0 * b.se.value);
    }
    assert!(covered >= 45, "{covered}/{reps}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn within_stratum_order_is_irrelevant(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let t = random_table(120, 6, &mut rng);
        let mut p = t.clone();
        for st in &mut p.strata {
            for i in (1..st.rows.len()).rev() {
                let j = rng.index(i + 1);
                st.rows.swap(i, j);
            }
        }
        let a = fit_conditional_logistic(&t, &full_spec()).unwrap();
        let b = fit_conditional_logistic(&p, &full_spec()).unwrap();
        for (x, y) in a.estimates().iter().zip(b.estimates()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn step_table_csv_round_trip(seed in 0u64..1000) {
        let t = random_table(5, 3, &mut Rng::new(seed));
        let back = StepTable::parse_csv(&t.to_csv_string(), std::path::Path::new("t.csv")).unwrap();
        prop_assert!(back.strata == t.strata);
    }
}
