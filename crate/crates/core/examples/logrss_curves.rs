//! log-RSS curves for an SSF with a covariate-by-log-step interaction,
//! evaluated at the 25th, 50th and 75th percentile step lengths.

use std::path::Path;

use movesel::fit::Covariates;
use movesel::geodata::{read_ascii_grid, CovariateStack};
use movesel::numcore::Rng;
use movesel::predict::{logrss_curve, step_length_quantiles, MovementContext};
use movesel::ssf::{fit_conditional_logistic, fit_tentative_kernel, generate_controls, make_ssf_spec};
use movesel::track::{read_track_csv, to_steps, validate_regular};

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let track = read_track_csv(data.join("track.csv"))?.remove(0);
    let grids = CovariateStack::new(vec![(
        "preydiv".into(),
        read_ascii_grid(data.join("preydiv.asc"))?,
    )])?;
    let steps = to_steps(&validate_regular(&track, 86_400, 0.1)?.bursts, &grids)?;
    let tentative = fit_tentative_kernel(&steps)?;
    let table = generate_controls(&steps, &tentative.kernel, 10, &grids, &Rng::new(5))?;
    let fit = fit_conditional_logistic(&table, &make_ssf_spec(grids.names(), "preydiv", true)?)?;

    let speeds = step_length_quantiles(&steps, &[0.25, 0.5, 0.75])?;
    let grid: Vec<f64> = (0..=6).map(|i| 0.1 * i as f64).collect();
    let reference = 0.3;
    for (name, l) in ["slow", "medium", "fast"].iter().zip(&speeds) {
        let ctx = Some(MovementContext::at_length(*l));
        let curve = logrss_curve(&fit, "preydiv", &grid, reference, &Covariates::new(), ctx, name)?;
        let cells: Vec<String> = curve.rows.iter().map(|r| format!("{:+.2}", r.value)).collect();
        println!("{name:>6} ({l:>6.0} m): {}", cells.join(" "));
    }
    println!("(log-RSS of preydiv = 0.0, 0.1, ..., 0.6 against {reference})");
    Ok(())
}
