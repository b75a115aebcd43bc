//! Integrated step selection: tentative kernel, control steps, conditional
//! logistic fit with a covariate-by-log-step interaction, and the movement
//! kernel implied at low and high covariate values.

use std::path::Path;

use movesel::fit::Covariates;
use movesel::geodata::{read_ascii_grid, CovariateStack};
use movesel::numcore::Rng;
use movesel::ssf::{
    fit_conditional_logistic, fit_tentative_kernel, generate_controls, make_ssf_spec, update_movement_kernel,
};
use movesel::track::{read_track_csv, to_steps, validate_regular};

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let track = read_track_csv(data.join("track.csv"))?.remove(0);
    let grids = CovariateStack::new(vec![(
        "preydiv".into(),
        read_ascii_grid(data.join("preydiv.asc"))?,
    )])?;

    let bursts = validate_regular(&track, 86_400, 0.1)?;
    let steps = to_steps(&bursts.bursts, &grids)?;
    let tentative = fit_tentative_kernel(&steps)?;
    println!(
        "tentative kernel: step mean {:.0} sd {:.0}, turn kappa {:.3}",
        tentative.kernel.step.mean(),
        tentative.kernel.step.sd(),
        tentative.kernel.angle.kappa()
    );

    let table = generate_controls(&steps, &tentative.kernel, 10, &grids, &Rng::new(2))?;
    println!("{} strata", table.strata.len());
    let spec = make_ssf_spec(grids.names(), "preydiv", true)?;
    let fit = fit_conditional_logistic(&table, &spec)?;
    for t in &fit.terms {
        println!("{:<20} {:>10.5} (se {:.5})", t.name(), t.estimate, t.se.value);
    }

    for v in [0.1, 0.6] {
        let x = Covariates::from([("preydiv".to_string(), v)]);
        let k = update_movement_kernel(&tentative.kernel, &fit, &x)?;
        println!(
            "preydiv {v}: mean step {:.0}, turn kappa {:.3}",
            k.step.mean(),
            k.angle.kappa()
        );
    }
    Ok(())
}
