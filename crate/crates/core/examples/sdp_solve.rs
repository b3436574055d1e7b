//! Solves a two-variable LMI with the interior-point solver.
//!
//! minimize x + y subject to [[x, 1], [1, y]] >= 0, whose optimum is 2.

use shapecal::sdp::{self, AffineBlock, AffineForm, LmiProgram, SolverOptions};

fn main() {
    let mut p = LmiProgram::new(2);
    p.cost = AffineForm::new(&[(0, 1.0), (1, 1.0)], 0.0);
    let mut b = AffineBlock::new(2);
    b.add_entry(Some(0), 0, 0, 1.0);
    b.add_entry(Some(1), 1, 1, 1.0);
    b.add_entry(None, 0, 1, 1.0);
    p.blocks.push(b);

    let sol = sdp::solve(&p, &SolverOptions::default()).expect("well-formed program");
    println!("status     {:?}", sol.status);
    println!("iterations {}", sol.iterations);
    println!("primal     {:.9}", sol.primal_objective);
    println!("dual       {:.9}", sol.dual_objective);
    println!("z          {:.6?}", sol.z);
    println!("min eig    {:.3e}", p.min_block_eigenvalue(&sol.z));
}
