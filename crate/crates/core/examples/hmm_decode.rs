//! Three-state HMM with prey diversity on the transitions: fit, Viterbi
//! decoding against the simulated truth, and stationary state probabilities.

use std::fs;
use std::path::Path;

use movesel::fit::Covariates;
use movesel::geodata::{read_ascii_grid, CovariateStack};
use movesel::hmm::{fit_hmm, viterbi_decode, HmmConfig};
use movesel::numcore::Rng;
use movesel::predict::state_prob_curve;
use movesel::track::{read_track_csv, to_steps, validate_regular};

fn main() -> movesel::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let track = read_track_csv(data.join("track.csv"))?.remove(0);
    let grids = CovariateStack::new(vec![(
        "preydiv".into(),
        read_ascii_grid(data.join("preydiv.asc"))?,
    )])?;
    let steps = to_steps(&validate_regular(&track, 86_400, 0.1)?.bursts, &grids)?;

    let cfg = HmmConfig {
        restarts: 8,
        ..HmmConfig::default()
    };
    let fit = fit_hmm(&steps, 3, &["preydiv".into()], &[], &cfg, &Rng::new(3))?;
    println!("loglik {:.2}, converged {}", fit.loglik, fit.converged);
    for (i, s) in fit.model.states().iter().enumerate() {
        println!(
            "state {}: step mean {:.0} sd {:.0}, kappa {:.2}",
            i + 1,
            s.step.mean(),
            s.step.sd(),
            s.angle.kappa()
        );
    }

    // true_states.csv labels location t with the state of the step leaving it
    let truth: Vec<usize> = fs::read_to_string(data.join("true_states.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap() - 1)
        .collect();
    let decoded = &viterbi_decode(&fit.model, &steps)?[0];
    let agree = decoded.iter().zip(&truth).filter(|(a, b)| a == b).count();
    println!(
        "Viterbi agrees with the simulated states on {agree}/{} steps",
        decoded.len()
    );

    let grid: Vec<f64> = (0..=5).map(|i| 0.1 * i as f64).collect();
    let curve = state_prob_curve(&fit, "preydiv", &grid, &Covariates::new())?;
    for (i, x) in grid.iter().enumerate() {
        let p: Vec<String> = (1..=3)
            .map(|k| format!("{:.3}", curve.series(&format!("state{k}"))[i].value))
            .collect();
        println!("preydiv {x:.1}: stationary {}", p.join(" "));
    }
    Ok(())
}
