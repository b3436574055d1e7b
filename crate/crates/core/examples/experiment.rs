//! Small BA / SO / ASO comparison on synthetic scenes.
//!
//! Pass a trial count as the first argument (default 4).

use shapecal::calib::ShapeConstraint;
use shapecal::pipeline::{run_experiment, ExperimentConfig};

fn main() {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = ExperimentConfig { trials, sigmas: vec![0.5, 1.5], ..ExperimentConfig::for_shape(ShapeConstraint::Barrel) };
    let report = run_experiment(&cfg).expect("experiment");
    println!("{:<4} {:>6} {:>7} {:>12} {:>12}", "", "sigma", "trials", "calib med", "valid med");
    for s in &report.summary {
        println!(
            "{:<4} {:>6.2} {:>7} {:>12.4} {:>12.4}",
            s.method.name(),
            s.sigma,
            s.trials,
            s.calib_median,
            s.valid_median
        );
    }
    for f in &report.failures {
        println!("failure: {f:?}");
    }
}
