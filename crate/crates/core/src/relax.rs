//! Polynomial matrix inequality programs and their moment relaxations.
//!
//! A program minimizes `p(x)` subject to `G(x) >= 0` and `q_k(x) = 0`. The
//! relaxation of order `delta` replaces monomials by moments `y_alpha` with
//! `|alpha| <= 2 delta` and imposes `M_delta(y) >= 0`, the localizing
//! constraint `M_{delta - gamma}(G, y) >= 0` and the shifted equalities.
//!
//! Besides the polynomial variables `x`, a program may carry auxiliary
//! variables `u` that enter the cost, `G` and the equalities only linearly
//! and never multiply each other (certificate Gram entries, epigraph
//! variables). They are lifted as `u_{j,alpha} = l(x^alpha u_j)` only for the
//! shifts the localizing matrix needs, which keeps calibration relaxations
//! small.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{basis, Basis, Monomial, Polynomial};
use crate::sdp::{self, AffineBlock, AffineForm, LmiProgram, SdpError, SdpSolution, SolverOptions, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error("relaxation order {delta} is below the minimum {min}")]
    OrderTooLow { delta: u32, min: u32 },
    #[error("polynomial dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// `p(x) + sum_j c_j u_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxExpr {
    pub poly: Polynomial,
    pub aux: BTreeMap<usize, f64>,
}

impl AuxExpr {
    pub fn poly(p: Polynomial) -> Self {
        AuxExpr {
            poly: p,
            aux: BTreeMap::new(),
        }
    }

    pub fn with_aux(p: Polynomial, aux: &[(usize, f64)]) -> Self {
        let mut e = AuxExpr::poly(p);
        for &(j, c) in aux {
            *e.aux.entry(j).or_insert(0.0) += c;
        }
        e
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.poly.eval(x).expect("dimension checked on construction")
            + self.aux.iter().map(|(&j, &c)| c * u[j]).sum::<f64>()
    }
}

/// Symmetric matrix `G0(x) + sum_j u_j H_j` with polynomial `G0` and
/// constant `H_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    dim: usize,
    size: usize,
    entries: Vec<Polynomial>,
    pub aux: BTreeMap<usize, DMatrix<f64>>,
}

impl PolyMatrix {
    pub fn zeros(dim: usize, size: usize) -> Self {
        PolyMatrix {
            dim,
            size,
            entries: vec![Polynomial::zero(dim); size * size],
            aux: BTreeMap::new(),
        }
    }

    pub fn scalar(p: Polynomial) -> Self {
        let mut g = PolyMatrix::zeros(p.dim(), 1);
        g.entries[0] = p;
        g
    }

    pub fn diagonal(entries: Vec<Polynomial>) -> Self {
        let blocks: Vec<_> = entries.into_iter().map(PolyMatrix::scalar).collect();
        block_diag(&blocks)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.size + j]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        assert_eq!(p.dim(), self.dim, "entry dimension");
        self.entries[i * self.size + j] = p.clone();
        self.entries[j * self.size + i] = p;
    }

    /// Adds `c u_var` at `(i, j)` and `(j, i)`.
    pub fn add_aux(&mut self, var: usize, i: usize, j: usize, c: f64) {
        let n = self.size;
        let h = self.aux.entry(var).or_insert_with(|| DMatrix::zeros(n, n));
        h[(i, j)] += c;
        if i != j {
            h[(j, i)] += c;
        }
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(self.size, self.size, |i, j| {
            self.get(i, j).eval(x).expect("dimension checked on construction")
        });
        for (&j, h) in &self.aux {
            m += h * u[j];
        }
        m
    }
}

pub fn block_diag(gs: &[PolyMatrix]) -> PolyMatrix {
    assert!(!gs.is_empty(), "block_diag needs at least one block");
    let dim = gs[0].dim;
    assert!(gs.iter().all(|g| g.dim == dim), "blocks must share the variable dimension");
    let size = gs.iter().map(|g| g.size).sum();
    let mut out = PolyMatrix::zeros(dim, size);
    let mut off = 0;
    for g in gs {
        for i in 0..g.size {
            for j in 0..g.size {
                out.entries[(off + i) * size + off + j] = g.get(i, j).clone();
            }
        }
        for (&v, h) in &g.aux {
            let target = out.aux.entry(v).or_insert_with(|| DMatrix::zeros(size, size));
            target.view_mut((off, off), (g.size, g.size)).copy_from(h);
        }
        off += g.size;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmiProgram {
    pub nvars: usize,
    pub naux: usize,
    pub cost: AuxExpr,
    pub constraint: PolyMatrix,
    pub equalities: Vec<AuxExpr>,
}

impl PmiProgram {
    pub fn new(cost: Polynomial, constraint: PolyMatrix) -> Self {
        PmiProgram {
            nvars: cost.dim(),
            naux: 0,
            cost: AuxExpr::poly(cost),
            constraint,
            equalities: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), RelaxError> {
        let check = |got: usize| {
            if got == self.nvars {
                Ok(())
            } else {
                Err(RelaxError::DimensionMismatch {
                    expected: self.nvars,
                    got,
                })
            }
        };
        check(self.cost.poly.dim())?;
        check(self.constraint.dim)?;
        for e in &self.equalities {
            check(e.poly.dim())?;
        }
        let aux_ok = self.cost.aux.keys().all(|&j| j < self.naux)
            && self.constraint.aux.keys().all(|&j| j < self.naux)
            && self.equalities.iter().all(|e| e.aux.keys().all(|&j| j < self.naux));
        if !aux_ok {
            return Err(RelaxError::DimensionMismatch {
                expected: self.naux,
                got: self.naux + 1,
            });
        }
        Ok(())
    }

    /// Localizing offset: 1 for `deg G <= 2`, otherwise `ceil(deg G / 2)`.
    pub fn gamma(&self) -> u32 {
        let d = self.constraint.degree();
        if d <= 2 {
            1
        } else {
            d.div_ceil(2)
        }
    }

    pub fn min_order(&self) -> u32 {
        let eq = self
            .equalities
            .iter()
            .map(|e| e.poly.degree().div_ceil(2))
            .max()
            .unwrap_or(0);
        self.gamma().max(self.cost.poly.degree().div_ceil(2)).max(eq)
    }

    pub fn cost_at(&self, x: &[f64], u: &[f64]) -> f64 {
        self.cost.eval(x, u)
    }

    /// `G >= -tol` and `|q_k| <= tol`.
    pub fn is_feasible(&self, x: &[f64], u: &[f64], tol: f64) -> bool {
        sdp::min_eigenvalue(&self.constraint.eval(x, u)) >= -tol
            && self.equalities.iter().all(|e| e.eval(x, u).abs() <= tol)
    }
}

/// Index map from moments `y_alpha` (`|alpha| <= 2 delta`) and lifted
/// auxiliaries `u_{j,alpha}` (`|alpha| <= 2 (delta - gamma)`) to LMI
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentIndexing {
    pub order: u32,
    pub gamma: u32,
    pub moments: Basis,
    pub naux: usize,
    pub aux_shifts: Basis,
}

impl MomentIndexing {
    pub fn new(dim: usize, order: u32, gamma: u32, naux: usize) -> Self {
        MomentIndexing {
            order,
            gamma,
            moments: basis(dim, 2 * order),
            naux,
            aux_shifts: basis(dim, 2 * order.saturating_sub(gamma)),
        }
    }

    pub fn dim(&self) -> usize {
        self.moments.dim()
    }

    pub fn nvars(&self) -> usize {
        self.moments.len() + self.naux * self.aux_shifts.len()
    }

    pub fn moment_var(&self, alpha: &Monomial) -> usize {
        self.moments.position(alpha).expect("moment within relaxation order")
    }

    pub fn aux_var(&self, j: usize, alpha: &Monomial) -> usize {
        let pos = self.aux_shifts.position(alpha).expect("aux shift within order");
        self.moments.len() + j * self.aux_shifts.len() + pos
    }

    /// Moments and lifts of the point mass at `(x, u)`.
    pub fn point_mass(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self.moments.eval(x);
        let shifts = self.aux_shifts.eval(x);
        for uj in u.iter().take(self.naux) {
            z.extend(shifts.iter().map(|s| s * uj));
        }
        z
    }
}

/// Linear form over moments and lifted auxiliaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentForm {
    pub moments: BTreeMap<Monomial, f64>,
    pub lifted: BTreeMap<(usize, Monomial), f64>,
}

impl MomentForm {
    /// `l(x^shift (p + sum c_j u_j))`.
    pub fn shifted(e: &AuxExpr, shift: &Monomial) -> Self {
        let mut f = MomentForm::default();
        for (m, c) in e.poly.terms() {
            *f.moments.entry(m.times(shift)).or_insert(0.0) += c;
        }
        for (&j, &c) in &e.aux {
            *f.lifted.entry((j, shift.clone())).or_insert(0.0) += c;
        }
        f
    }

    pub fn to_affine(&self, idx: &MomentIndexing) -> AffineForm {
        let mut terms: Vec<(usize, f64)> = self
            .moments
            .iter()
            .map(|(m, &c)| (idx.moment_var(m), c))
            .collect();
        terms.extend(self.lifted.iter().map(|((j, m), &c)| (idx.aux_var(*j, m), c)));
        AffineForm::new(&terms, 0.0)
    }

    pub fn eval(&self, y: impl Fn(&Monomial) -> f64, u: impl Fn(usize, &Monomial) -> f64) -> f64 {
        self.moments.iter().map(|(m, c)| c * y(m)).sum::<f64>()
            + self.lifted.iter().map(|((j, m), c)| c * u(*j, m)).sum::<f64>()
    }
}

/// Square matrix of moment forms, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicMatrix {
    pub size: usize,
    pub entries: Vec<MomentForm>,
}

impl SymbolicMatrix {
    pub fn get(&self, i: usize, j: usize) -> &MomentForm {
        &self.entries[i * self.size + j]
    }

    pub fn to_block(&self, idx: &MomentIndexing) -> AffineBlock {
        let mut b = AffineBlock::new(self.size);
        for i in 0..self.size {
            for j in i..self.size {
                let f = self.get(i, j).to_affine(idx);
                for (&v, &c) in &f.coeffs {
                    if c != 0.0 {
                        b.add_entry(Some(v), i, j, c);
                    }
                }
            }
        }
        b
    }

    pub fn eval_at(&self, idx: &MomentIndexing, z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| {
            self.get(i, j)
                .eval(|m| z[idx.moment_var(m)], |k, m| z[idx.aux_var(k, m)])
        })
    }
}

/// `M_delta(y)`: entry `(i, j)` is `y_{alpha_i + alpha_j}`.
pub fn moment_matrix(delta: u32, dim: usize) -> SymbolicMatrix {
    localizing_matrix(&PolyMatrix::scalar(Polynomial::constant(dim, 1.0)), delta)
}

/// `l((psi_delta psi_delta') kron G)`.
pub fn localizing_matrix(g: &PolyMatrix, delta: u32) -> SymbolicMatrix {
    let psi = basis(g.dim, delta);
    let (n, m) = (psi.len(), g.size);
    let size = n * m;
    let mut entries = vec![MomentForm::default(); size * size];
    for (i, ai) in psi.monomials().iter().enumerate() {
        for (j, aj) in psi.monomials().iter().enumerate() {
            let shift = ai.times(aj);
            for a in 0..m {
                for b in 0..m {
                    let mut aux = BTreeMap::new();
                    for (&v, h) in &g.aux {
                        if h[(a, b)] != 0.0 {
                            aux.insert(v, h[(a, b)]);
                        }
                    }
                    let e = AuxExpr {
                        poly: g.get(a, b).clone(),
                        aux,
                    };
                    entries[(i * m + a) * size + j * m + b] = MomentForm::shifted(&e, &shift);
                }
            }
        }
    }
    SymbolicMatrix { size, entries }
}

/// Assembles the order-`delta` relaxation.
pub fn relax(p: &PmiProgram, delta: u32) -> Result<(LmiProgram, MomentIndexing), RelaxError> {
    p.validate()?;
    let min = p.min_order();
    if delta < min {
        return Err(RelaxError::OrderTooLow { delta, min });
    }
    let gamma = p.gamma();
    let idx = MomentIndexing::new(p.nvars, delta, gamma, p.naux);
    let one = Monomial::one(p.nvars);
    let mut lmi = LmiProgram::new(idx.nvars());
    lmi.cost = MomentForm::shifted(&p.cost, &one).to_affine(&idx);
    lmi.blocks.push(moment_matrix(delta, p.nvars).to_block(&idx));
    lmi.blocks.push(localizing_matrix(&p.constraint, delta - gamma).to_block(&idx));
    lmi.equalities.push(AffineForm::new(&[(idx.moment_var(&one), 1.0)], -1.0));
    for q in &p.equalities {
        let mut reach = 2 * delta - q.poly.degree();
        if !q.aux.is_empty() {
            reach = reach.min(2 * (delta - gamma));
        }
        for beta in basis(p.nvars, reach).monomials() {
            let f = MomentForm::shifted(q, beta).to_affine(&idx);
            if !f.coeffs.is_empty() {
                lmi.equalities.push(f);
            }
        }
    }
    Ok((lmi, idx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationResult {
    pub order: u32,
    pub status: Status,
    pub lower_bound: f64,
    pub moments: Vec<f64>,
    /// First-order moments, read as the candidate minimizer.
    pub extracted: Option<Vec<f64>>,
    /// Auxiliary values completing the candidate, when it is feasible.
    pub aux: Option<Vec<f64>>,
    pub candidate_cost: Option<f64>,
    pub feasible: bool,
    /// `rank M_delta = rank M_{delta - gamma}`.
    pub flat: bool,
    pub certified: bool,
}

/// Numerical rank with singular values above `1e-6 * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-6 * smax).count()
}

const FEAS_TOL: f64 = 1e-6;

/// Completes `x` with auxiliary values: first the smallest shift `t` making
/// `G(x, u) + t I >= 0` under the equalities, then the cheapest `u` at that
/// shift.
fn complete_aux(p: &PmiProgram, x: &[f64], opts: &SolverOptions) -> Option<(Vec<f64>, f64)> {
    let g0 = p.constraint.eval(x, &vec![0.0; p.naux]);
    let n = p.constraint.size();
    let base = |t_var: Option<usize>, shift: f64| {
        let mut b = AffineBlock::new(n);
        b.constant = &g0 + DMatrix::identity(n, n) * shift;
        for (&j, h) in &p.constraint.aux {
            b.coeffs.insert(j, h.clone());
        }
        if let Some(t) = t_var {
            b.coeffs.insert(t, DMatrix::identity(n, n));
        }
        b
    };
    let eqs: Vec<AffineForm> = p
        .equalities
        .iter()
        .map(|e| {
            let terms: Vec<(usize, f64)> = e.aux.iter().map(|(&j, &c)| (j, c)).collect();
            AffineForm::new(&terms, e.poly.eval(x).expect("dimension checked"))
        })
        .collect();

    // Phase 1 with t >= -1 to keep the problem bounded.
    let t = p.naux;
    let mut phase1 = LmiProgram::new(p.naux + 1);
    phase1.cost = AffineForm::new(&[(t, 1.0)], 0.0);
    phase1.blocks.push(base(Some(t), 0.0));
    let mut floor = AffineBlock::new(1);
    floor.add_entry(None, 0, 0, 1.0);
    floor.add_entry(Some(t), 0, 0, 1.0);
    phase1.blocks.push(floor);
    phase1.equalities = eqs.clone();
    let s1 = sdp::solve(&phase1, opts).ok()?;
    if s1.status != Status::Optimal || s1.primal_objective > FEAS_TOL / 2.0 {
        return None;
    }
    let slack = s1.primal_objective.max(0.0) + 1e-9;

    let mut phase2 = LmiProgram::new(p.naux);
    let terms: Vec<(usize, f64)> = p.cost.aux.iter().map(|(&j, &c)| (j, c)).collect();
    phase2.cost = AffineForm::new(&terms, p.cost.poly.eval(x).expect("dimension checked"));
    phase2.blocks.push(base(None, slack));
    phase2.equalities = eqs;
    let s2 = sdp::solve(&phase2, opts).ok()?;
    let u = if s2.status == Status::Optimal {
        s2.z
    } else {
        s1.z[..p.naux].to_vec()
    };
    let cost = p.cost_at(x, &u);
    Some((u, cost))
}

/// Reads the candidate minimizer from an optimal relaxation and tests it.
pub fn extract(
    sol: &SdpSolution,
    idx: &MomentIndexing,
    p: &PmiProgram,
    opts: &SolverOptions,
) -> RelaxationResult {
    let mut res = RelaxationResult {
        order: idx.order,
        status: sol.status,
        lower_bound: sol.primal_objective,
        moments: sol.z.clone(),
        extracted: None,
        aux: None,
        candidate_cost: None,
        feasible: false,
        flat: false,
        certified: false,
    };
    // A stalled solve still bounds the optimum by the smaller objective; its
    // candidate is only accepted after the independent feasibility check.
    match sol.status {
        Status::Optimal => {}
        Status::NumericalFailure | Status::MaxIterations
            if sol.primal_objective.is_finite() && sol.dual_objective.is_finite() =>
        {
            res.lower_bound = sol.primal_objective.min(sol.dual_objective);
        }
        _ => return res,
    }
    let x: Vec<f64> = (0..p.nvars)
        .map(|i| sol.z[idx.moment_var(&Monomial::var(p.nvars, i))])
        .collect();
    let full = moment_matrix(idx.order, p.nvars).eval_at(idx, &sol.z);
    let low = moment_matrix(idx.order - idx.gamma, p.nvars).eval_at(idx, &sol.z);
    res.flat = numerical_rank(&full) == numerical_rank(&low);

    let completed = if p.naux == 0 {
        p.is_feasible(&x, &[], FEAS_TOL).then(|| (Vec::new(), p.cost_at(&x, &[])))
    } else {
        complete_aux(p, &x, opts).filter(|(u, _)| p.is_feasible(&x, u, FEAS_TOL))
    };
    if let Some((u, cost)) = completed {
        res.feasible = true;
        res.certified = (cost - res.lower_bound).abs() <= 1e-5 * (1.0 + res.lower_bound.abs());
        res.aux = Some(u);
        res.candidate_cost = Some(cost);
    }
    res.extracted = Some(x);
    res
}

/// Solves relaxations from the minimum order upward until one certifies or
/// `delta_max` is reached. Returns the last result.
pub fn solve_hierarchy(
    p: &PmiProgram,
    delta_max: u32,
    opts: &SolverOptions,
) -> Result<RelaxationResult, RelaxError> {
    let start = p.min_order();
    let mut last = None;
    for delta in start..=delta_max.max(start) {
        let res = solve_order(p, delta, opts)?;
        let stop = res.certified || matches!(res.status, Status::Infeasible | Status::Unbounded);
        last = Some(res);
        if stop {
            break;
        }
    }
    Ok(last.expect("at least one order is solved"))
}

pub fn solve_order(p: &PmiProgram, delta: u32, opts: &SolverOptions) -> Result<RelaxationResult, RelaxError> {
    let (lmi, idx) = relax(p, delta)?;
    let sol = sdp::solve(&lmi, opts)?;
    Ok(extract(&sol, &idx, p, opts))
}
