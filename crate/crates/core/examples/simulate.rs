//! Simulate a covariate-driven three-state HMM on the bundled landscape and
//! write the track as CSV to stdout.

use std::path::Path;

use movesel::geodata::{read_ascii_grid, CovariateStack, Point};
use movesel::hmm::{simulate_hmm_landscape, HmmModel, SimConfig, StateObs};
use movesel::numcore::{GammaParams, Rng, VonMisesParams};
use movesel::track::track_csv_string;

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let grids = CovariateStack::new(vec![(
        "preydiv".into(),
        read_ascii_grid(data.join("preydiv.asc"))?,
    )])?;

    let state = |mean: f64, sd: f64, kappa: f64| -> movesel::Result<StateObs> {
        Ok(StateObs::new(
            GammaParams::new(mean, sd)?,
            VonMisesParams::new(0.0, kappa)?,
        ))
    };
    let mut model = HmmModel::new(
        vec![
            state(500.0, 400.0, 0.3)?,
            state(3000.0, 1500.0, 1.0)?,
            state(12_000.0, 4000.0, 4.0)?,
        ],
        vec!["preydiv".into()],
        vec![],
    )?;
    // richer prey keeps the animal in the slow, tortuous state
    for (i, j, a, b) in [
        (0, 1, -2.0, -3.0),
        (0, 2, -3.0, -3.0),
        (1, 0, -1.5, 3.0),
        (1, 2, -2.0, 0.0),
        (2, 0, -2.5, 2.0),
        (2, 1, -1.5, 0.0),
    ] {
        model.set_transition_coef(i, j, 0, a)?;
        model.set_transition_coef(i, j, 1, b)?;
    }
    let cfg = SimConfig {
        start: Point::new(100_000.0, 100_000.0),
        interval_s: 86_400,
        ..SimConfig::default()
    };
    let (track, states) = simulate_hmm_landscape(&model, 200, &grids, &mut Rng::new(6), &cfg)?;
    for k in 0..3 {
        eprintln!(
            "state {}: {} steps",
            k + 1,
            states.iter().filter(|s| **s == k).count()
        );
    }
    print!("{}", track_csv_string(std::slice::from_ref(&track)));
    Ok(())
}
