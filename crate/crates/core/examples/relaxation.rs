//! Moment relaxation of a nonconvex univariate problem.
//!
//! minimize x^4 - 3x^2 + x over [-2, 2]

use shapecal::poly::Polynomial;
use shapecal::relax::{solve_hierarchy, PmiProgram, PolyMatrix};
use shapecal::sdp::SolverOptions;

fn main() {
    let x = Polynomial::var(1, 0);
    let x2 = &x * &x;
    let cost = &(&(&x2 * &x2) - &x2.scale(3.0)) + &x;
    let box_ = PolyMatrix::scalar(&Polynomial::constant(1, 4.0) - &x2);
    let p = PmiProgram::new(cost, box_);

    let r = solve_hierarchy(&p, 4, &SolverOptions::default()).expect("relaxation");
    println!("order {} status {:?}", r.order, r.status);
    println!("lower bound {:.8}", r.lower_bound);
    println!("flat {} certified {}", r.flat, r.certified);
    if let (Some(x), Some(c)) = (&r.extracted, r.candidate_cost) {
        println!("minimizer {:.6} with cost {:.8}", x[0], c);
    }
}
