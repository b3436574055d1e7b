//! Fits distortion models to synthetic correspondences with and without
//! shape constraints.

use shapecal::calib::{self, CalibConfig, ShapeConstraint};
use shapecal::distortion::{DistortionModel, ModelKind};

fn report(label: &str, r: &calib::CalibResult) {
    println!("{label}");
    println!("  k = {:.5?}", r.model.k());
    println!("  objective {:.3e}, status {:?}", r.objective, r.solver_status);
    if let Some(s) = &r.shape_report {
        println!("  shape {} max violation {:.2e}", s.shape.name(), s.max_violation);
    }
    if let Some(c) = r.certified {
        println!("  order {:?} certified {c} bound {:.3e}", r.relaxation_order, r.lower_bound.unwrap_or(f64::NAN));
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn main() {
    let rbar = 1.0;
    let barrel = calib::synthesize(&DistortionModel::polynomial(-0.05, -0.1, 0.02), 200, 0.9, 1e-3, 7);
    let free = calib::calibrate(&barrel, &CalibConfig::default()).expect("fit");
    report("unconstrained polynomial", &free);
    let cfg = CalibConfig { rbar, shape: ShapeConstraint::Barrel, ..CalibConfig::default() };
    report("barrel", &calib::calibrate(&barrel, &cfg).expect("fit"));

    let pin = calib::synthesize(&DistortionModel::division(-0.1, 0.0, 0.0), 200, 0.9, 1e-3, 8);
    let cfg = CalibConfig { rbar, shape: ShapeConstraint::Pincushion, ..CalibConfig::default() };
    report("pincushion", &calib::calibrate(&pin, &cfg).expect("fit"));

    let cfg = CalibConfig { rbar, shape: ShapeConstraint::Positivity, model: ModelKind::Division, ..CalibConfig::default() };
    report("positivity", &calib::calibrate(&pin, &cfg).expect("fit"));
}
