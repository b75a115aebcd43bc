//! Steady-state utilization distribution from a fitted SSF, set beside the
//! RSF map of the same track.

use std::path::Path;

use movesel::geodata::{read_ascii_grid, CovariateStack, RasterGrid};
use movesel::numcore::Rng;
use movesel::predict::{rsf_map, ssud_map, SsudConfig};
use movesel::rsf::{build_use_avail, fit_logistic};
use movesel::ssf::{fit_conditional_logistic, fit_tentative_kernel, generate_controls, make_ssf_spec};
use movesel::track::{read_track_csv, to_steps, validate_regular};

/// Share of the map's mass in the cells with the top tenth of `cov`.
fn top_decile_share(map: &RasterGrid, cov: &RasterGrid) -> f64 {
    let mut v: Vec<f64> = cov.values().to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v[v.len() * 9 / 10];
    map.values()
        .iter()
        .zip(cov.values())
        .filter(|(_, c)| **c >= cut)
        .map(|(m, _)| m)
        .sum()
}

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let track = read_track_csv(data.join("track.csv"))?.remove(0);
    let preydiv = read_ascii_grid(data.join("preydiv.asc"))?;
    let grids = CovariateStack::new(vec![("preydiv".into(), preydiv.clone())])?;
    let root = Rng::new(4);

    let steps = to_steps(&validate_regular(&track, 86_400, 0.1)?.bursts, &grids)?;
    let tentative = fit_tentative_kernel(&steps)?;
    let table = generate_controls(&steps, &tentative.kernel, 10, &grids, &root.child("controls"))?;
    let ssf = fit_conditional_logistic(&table, &make_ssf_spec(grids.names(), "preydiv", false)?)?;

    let cfg = SsudConfig {
        n_locations: 20_000,
        chains: 2,
        ..SsudConfig::default()
    };
    let ssud = ssud_map(&ssf, &tentative.kernel, &grids, &cfg, &root.child("ssud"))?;
    let rsf = fit_logistic(
        &build_use_avail(&track, &grids, 10, &mut root.child("availability"), 0.0)?,
        true,
    )?;
    let rmap = rsf_map(&rsf, &grids)?;

    let b = |f: &movesel::fit::FitResult| {
        let t = f.terms.iter().find(|t| t.name() == "preydiv").unwrap();
        format!("preydiv {:+.2} (se {:.2})", t.estimate, t.se.value)
    };
    // The bundled track comes from an HMM whose states, not its steps,
    // respond to prey: the two models can disagree.
    println!("share of predicted use in the top prey-diversity decile (10% of cells):");
    println!(
        "  RSF  {}: {:.1}%",
        b(&rsf),
        100.0 * top_decile_share(&rmap, &preydiv)
    );
    println!(
        "  SSUD {}: {:.1}%",
        b(&ssf),
        100.0 * top_decile_share(&ssud.map, &preydiv)
    );
    Ok(())
}
