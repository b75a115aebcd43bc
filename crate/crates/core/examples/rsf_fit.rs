//! Use-available RSF on the bundled track, with an availability scan and a
//! relative-use map.

use std::path::Path;

use movesel::geodata::{read_ascii_grid, CovariateStack};
use movesel::numcore::Rng;
use movesel::predict::rsf_map;
use movesel::rsf::{availability_stability_scan, build_use_avail, fit_logistic};
use movesel::track::read_track_csv;

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let track = read_track_csv(data.join("track.csv"))?.remove(0);
    let grids = CovariateStack::new(vec![(
        "preydiv".into(),
        read_ascii_grid(data.join("preydiv.asc"))?,
    )])?;
    let root = Rng::new(1);

    let table = build_use_avail(&track, &grids, 10, &mut root.child("availability"), 0.0)?;
    println!("{} used, {} available", table.n_used, table.n_available);
    let fit = fit_logistic(&table, true)?;
    for t in &fit.terms {
        println!("{:<12} {:>9.4} (se {:.4})", t.name(), t.estimate, t.se.value);
    }

    // coefficients should settle as the availability sample grows
    for row in availability_stability_scan(&track, &grids, &[1, 10, 100], &root.child("scan"), 0.0)? {
        match row.fit {
            Ok(f) => println!(
                "ratio {:>4}: preydiv {:.4}",
                row.ratio,
                f.estimate("preydiv").unwrap()
            ),
            Err(e) => println!("ratio {:>4}: {e}", row.ratio),
        }
    }

    let map = rsf_map(&fit, &grids)?;
    let best = map.values().iter().copied().fold(0.0, f64::max);
    println!("map: {} cells, largest cell share {best:.2e}", map.len());
    Ok(())
}
