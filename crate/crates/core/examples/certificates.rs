//! Builds interval nonnegativity certificates from random PSD Gram matrices
//! and checks the resulting polynomials on a grid.

use nalgebra::DMatrix;
use shapecal::calib::barrel_system;
use shapecal::certs::{certificate_to_poly, layout_for_degree, GramMatrix, IntervalCertificate};
use shapecal::poly::min_on_interval;

fn main() {
    let rbar = 1.5;
    for degree in [4, 5] {
        let (parity, ns, nt) = layout_for_degree(degree);
        let gram = |n: usize, seed: f64| {
            let g = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) as f64 + seed).sin());
            GramMatrix::from_matrix(&(&g * g.transpose()))
        };
        let cert = IntervalCertificate::new(0.0, rbar, parity, gram(ns, 0.3), gram(nt, 1.1));
        let p = certificate_to_poly(&cert);
        let coeffs: Vec<f64> = (0..=degree).map(|i| p.coeff(&shapecal::poly::Monomial::new(vec![i as u32]))).collect();
        println!("degree {degree} ({parity:?}): coefficients {coeffs:.4?}");
        println!("  min on [0, {rbar}] = {:.6}", min_on_interval(&coeffs, 0.0, rbar));
    }

    let sys = barrel_system(1.0).expect("barrel system");
    println!(
        "barrel system at rbar = 1: {} variables, {} certificates, {} equalities",
        sys.nvars,
        sys.certificates.len(),
        sys.equalities.len()
    );
}
