//! Distorts a ring of points, inverts them, and prints the model curve.

use shapecal::distortion::DistortionModel;
use shapecal::pipeline::curve_csv;

fn main() {
    let model = DistortionModel::rational([-0.12, 0.01, 0.0, 0.05, 0.0, 0.0]);
    let mut worst: f64 = 0.0;
    for i in 0..12 {
        let th = i as f64 * std::f64::consts::TAU / 12.0;
        let p = (0.6 * th.cos(), 0.6 * th.sin());
        let q = model.distort(p).expect("distort");
        let back = model.undistort(q, 2.0).expect("undistort");
        worst = worst.max((back.0 - p.0).hypot(back.1 - p.1));
    }
    println!("worst roundtrip error {worst:.2e}");
    print!("{}", curve_csv(&model, 1.0, 11));
}
