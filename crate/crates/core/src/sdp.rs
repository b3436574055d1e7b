//! Small dense LMI programs and a primal-dual interior-point solver.
//!
//! Programs have the form
//!
//! ```text
//! minimize    c'z + c0
//! subject to  A0 + sum_i z_i A_i >= 0   (one such block per constraint)
//!             e_k'z + f_k = 0
//! ```
//!
//! Equalities are removed by elimination, the remaining coefficient matrices
//! are orthonormalized, and the reduced problem is solved as the dual of a
//! standard-form SDP with Nesterov-Todd scaling and Mehrotra's
//! predictor-corrector.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::poly::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("matrix is indefinite (minimum eigenvalue {0:e})")]
    Indefinite(f64),
}

/// Affine scalar form `constant + sum coeffs[i] * z_i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineForm {
    pub coeffs: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn new(terms: &[(usize, f64)], constant: f64) -> Self {
        let mut f = AffineForm {
            coeffs: BTreeMap::new(),
            constant,
        };
        for &(v, c) in terms {
            *f.coeffs.entry(v).or_insert(0.0) += c;
        }
        f
    }

    pub fn constant(c: f64) -> Self {
        AffineForm::new(&[], c)
    }

    /// Converts a polynomial of degree at most one.
    pub fn from_polynomial(p: &Polynomial) -> Result<Self, SdpError> {
        if p.degree() > 1 {
            return Err(SdpError::InvalidProgram(format!(
                "expected an affine form, got degree {}",
                p.degree()
            )));
        }
        let mut f = AffineForm::constant(p.constant_term());
        for v in 0..p.dim() {
            let c = p.linear_coeff(v);
            if c != 0.0 {
                f.coeffs.insert(v, c);
            }
        }
        Ok(f)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&v, &c)| c * z[v]).sum::<f64>()
    }

    fn max_var(&self) -> Option<usize> {
        self.coeffs.keys().next_back().copied()
    }
}

/// Matrix-valued affine function `A0 + sum z_i A_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineBlock {
    pub fn new(size: usize) -> Self {
        AffineBlock {
            constant: DMatrix::zeros(size, size),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `v` at `(i, j)` and `(j, i)` of the coefficient matrix of `var`
    /// (`None` for the constant term).
    pub fn add_entry(&mut self, var: Option<usize>, i: usize, j: usize, v: f64) {
        let n = self.size();
        let m = match var {
            None => &mut self.constant,
            Some(k) => self.coeffs.entry(k).or_insert_with(|| DMatrix::zeros(n, n)),
        };
        m[(i, j)] += v;
        if i != j {
            m[(j, i)] += v;
        }
    }

    /// Adds an affine form at the symmetric position `(i, j)`.
    pub fn add_form(&mut self, i: usize, j: usize, f: &AffineForm) {
        if f.constant != 0.0 {
            self.add_entry(None, i, j, f.constant);
        }
        for (&v, &c) in &f.coeffs {
            self.add_entry(Some(v), i, j, c);
        }
    }

    pub fn value(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (&v, a) in &self.coeffs {
            m += a * z[v];
        }
        m
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LmiProgram {
    pub nvars: usize,
    pub cost: AffineForm,
    pub blocks: Vec<AffineBlock>,
    pub equalities: Vec<AffineForm>,
}

impl LmiProgram {
    pub fn new(nvars: usize) -> Self {
        LmiProgram {
            nvars,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.nvars == 0 {
            return Err(SdpError::InvalidProgram("no decision variables".into()));
        }
        if self.blocks.is_empty() && self.equalities.is_empty() {
            return Err(SdpError::InvalidProgram("no constraints".into()));
        }
        let out_of_range = |v: usize| v >= self.nvars;
        if self.cost.max_var().is_some_and(out_of_range)
            || self.equalities.iter().any(|e| e.max_var().is_some_and(out_of_range))
        {
            return Err(SdpError::InvalidProgram("variable index out of range".into()));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let n = block.size();
            let mats = std::iter::once((None, &block.constant))
                .chain(block.coeffs.iter().map(|(&v, m)| (Some(v), m)));
            for (var, m) in mats {
                if var.is_some_and(out_of_range) {
                    return Err(SdpError::InvalidProgram("variable index out of range".into()));
                }
                if m.nrows() != n || m.ncols() != n {
                    return Err(SdpError::InvalidProgram(format!("block {b} has mismatched sizes")));
                }
                if m != &m.transpose() {
                    return Err(SdpError::InvalidProgram(format!("block {b} is not symmetric")));
                }
            }
        }
        Ok(())
    }

    /// Debug dump with dense row-major block matrices.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Form {
            constant: f64,
            coeffs: Vec<(usize, f64)>,
        }
        #[derive(Serialize)]
        struct Coefficient {
            var: usize,
            matrix: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Block {
            size: usize,
            constant: Vec<Vec<f64>>,
            coefficients: Vec<Coefficient>,
        }
        #[derive(Serialize)]
        struct Dump {
            nvars: usize,
            cost: Form,
            blocks: Vec<Block>,
            equalities: Vec<Form>,
        }
        let form = |f: &AffineForm| Form {
            constant: f.constant,
            coeffs: f.coeffs.iter().map(|(&v, &c)| (v, c)).collect(),
        };
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        let dump = Dump {
            nvars: self.nvars,
            cost: form(&self.cost),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    size: b.size(),
                    constant: rows(&b.constant),
                    coefficients: b
                        .coeffs
                        .iter()
                        .map(|(&var, m)| Coefficient { var, matrix: rows(m) })
                        .collect(),
                })
                .collect(),
            equalities: self.equalities.iter().map(form).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("program dump serializes")
    }

    /// Smallest eigenvalue over all blocks at `z`.
    pub fn min_block_eigenvalue(&self, z: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_eigenvalue(&b.value(z)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_equality_residual(&self, z: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|e| e.eval(z).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-7,
            max_iters: 100,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

/// Objective values and residuals of one interior-point iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iterate {
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub z: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub status: Status,
    pub iterations: usize,
    pub trace: Vec<Iterate>,
}

impl SdpSolution {
    fn terminal(z: Vec<f64>, objective: f64, status: Status) -> Self {
        SdpSolution {
            z,
            primal_objective: objective,
            dual_objective: objective,
            status,
            iterations: 0,
            trace: Vec::new(),
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `z = particular + null * w` parameterizes the solutions of the equalities.
struct Reduction {
    particular: DVector<f64>,
    null: DMatrix<f64>,
}

/// Row reduction with full pivoting. `None` when inconsistent.
fn reduce_equalities(p: &LmiProgram) -> Option<Reduction> {
    let n = p.nvars;
    let rows = p.equalities.len();
    if rows == 0 {
        return Some(Reduction {
            particular: DVector::zeros(n),
            null: DMatrix::identity(n, n),
        });
    }
    let mut a = DMatrix::<f64>::zeros(rows, n);
    let mut f = DVector::<f64>::zeros(rows);
    for (i, e) in p.equalities.iter().enumerate() {
        for (&v, &c) in &e.coeffs {
            a[(i, v)] += c;
        }
        f[i] = -e.constant;
    }
    let scale = a.amax().max(1.0);
    let tol = 1e-10 * scale;
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    while rank < rows.min(n) {
        let mut best = (0.0, rank, rank);
        for i in rank..rows {
            for j in rank..n {
                let v = a[(i, col_perm[j])].abs();
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        if best.0 <= tol {
            break;
        }
        let (_, pi, pj) = best;
        a.swap_rows(rank, pi);
        f.swap_rows(rank, pi);
        col_perm.swap(rank, pj);
        let pc = col_perm[rank];
        let inv = 1.0 / a[(rank, pc)];
        for j in 0..n {
            a[(rank, j)] *= inv;
        }
        f[rank] *= inv;
        for i in 0..rows {
            if i == rank {
                continue;
            }
            let factor = a[(i, pc)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= factor * a[(rank, j)];
            }
            f[i] -= factor * f[rank];
        }
        rank += 1;
    }
    let fscale = 1.0 + f.amax();
    if (rank..rows).any(|i| f[i].abs() > 1e-8 * fscale) {
        return None;
    }
    let mut particular = DVector::zeros(n);
    for r in 0..rank {
        particular[col_perm[r]] = f[r];
    }
    let free = &col_perm[rank..];
    let mut null = DMatrix::zeros(n, free.len());
    for (k, &fc) in free.iter().enumerate() {
        null[(fc, k)] = 1.0;
        for r in 0..rank {
            null[(col_perm[r], k)] = -a[(r, fc)];
        }
    }
    Some(Reduction { particular, null })
}

type Blocks = Vec<DMatrix<f64>>;

fn inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &Blocks) -> f64 {
    inner(a, a).sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest `alpha` with `x + alpha * dx` PSD, given `l = chol(x)`.
fn max_step(l: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(y) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(s) = l.solve_lower_triangular(&y.transpose()) else {
        return 0.0;
    };
    let mut s = s;
    symmetrize(&mut s);
    let lmin = min_eigenvalue(&s);
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

/// Cholesky of the Schur complement, with a growing diagonal shift when it
/// has lost definiteness to rounding near the optimum.
fn factor_schur(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    [1e-14, 1e-12, 1e-10].iter().find_map(|&eps| {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * (eps * scale);
        shifted.cholesky()
    })
}

struct Scaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let n = x.nrows();
    let l = x.clone().cholesky()?.l();
    let mut lzl = l.transpose() * z * &l;
    symmetrize(&mut lzl);
    let eig = SymmetricEigen::new(lzl);
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let q = &eig.eigenvectors;
    let quarter = eig.eigenvalues.map(|v| v.powf(0.25));
    let g = &l * q * DMatrix::from_diagonal(&quarter.map(|v| 1.0 / v));
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    let g_inv = DMatrix::from_diagonal(&quarter) * q.transpose() * l_inv;
    let mut w = &g * g.transpose();
    symmetrize(&mut w);
    Some(Scaling {
        d: eig.eigenvalues.map(f64::sqrt),
        g,
        g_inv,
        w,
    })
}

/// Standard-form data: `min <C, X>` s.t. `<A_i, X> = b_i`, `X >= 0`, with
/// dual `max b'y` s.t. `C - sum y_i A_i = Z >= 0`.
struct Standard {
    c: Blocks,
    a: Vec<Blocks>,
    b: DVector<f64>,
}

struct Outcome {
    y: DVector<f64>,
    primal: f64,
    dual: f64,
    status: Status,
    iterations: usize,
    trace: Vec<Iterate>,
}

fn interior_point(s: &Standard, offset: f64, opts: &SolverOptions) -> Outcome {
    let m = s.a.len();
    let dim: usize = s.c.iter().map(|c| c.nrows()).sum();
    let sizes: Vec<usize> = s.c.iter().map(|c| c.nrows()).collect();
    let identity = |scale: f64| -> Blocks {
        sizes.iter().map(|&n| DMatrix::identity(n, n) * scale).collect()
    };
    let c_norm = frob(&s.c);
    let b_norm = s.b.norm();
    let root_n = (dim as f64).sqrt();
    let xi = 10f64.max(root_n).max(root_n * s.b.amax());
    let tau = 10f64.max(root_n).max(1.0 + c_norm);
    let mut x = identity(xi);
    let mut z = identity(tau);
    let mut y = DVector::zeros(m);
    let mut trace = Vec::new();
    let mut stale = 0;
    let best: std::cell::RefCell<Option<(DVector<f64>, f64, f64, f64)>> = Default::default();

    let apply_a = |x: &Blocks| DVector::from_fn(m, |i, _| inner(&s.a[i], x));
    let apply_at = |v: &DVector<f64>| -> Blocks {
        let mut out: Blocks = sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (i, ai) in s.a.iter().enumerate() {
            if v[i] != 0.0 {
                for (o, a) in out.iter_mut().zip(ai) {
                    *o += a * v[i];
                }
            }
        }
        out
    };

    // On breakdown, fall back to the best iterate that met the default
    // tolerances (or looser requested ones), reported as optimal.
    let loose = SolverOptions {
        gap_tol: opts.gap_tol.max(SolverOptions::default().gap_tol),
        feas_tol: opts.feas_tol.max(SolverOptions::default().feas_tol),
        ..opts.clone()
    };
    let finish = |y: DVector<f64>, pobj: f64, dobj: f64, status, iterations, trace: Vec<Iterate>| {
        let (y, pobj, dobj, status) = match (status, best.borrow_mut().take()) {
            (Status::NumericalFailure | Status::MaxIterations, Some((by, bp, bd, _))) => (by, bp, bd, Status::Optimal),
            _ => (y, pobj, dobj, status),
        };
        Outcome {
            y,
            primal: offset - dobj,
            dual: offset - pobj,
            status,
            iterations,
            trace,
        }
    };

    for iter in 0..=opts.max_iters {
        let ax = apply_a(&x);
        let rp = &s.b - &ax;
        let aty = apply_at(&y);
        let rd: Blocks = s
            .c
            .iter()
            .zip(&z)
            .zip(&aty)
            .map(|((c, z), a)| c - z - a)
            .collect();
        let pobj = inner(&s.c, &x);
        let dobj = s.b.dot(&y);
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = frob(&rd) / (1.0 + c_norm);
        if !(pobj.is_finite() && dobj.is_finite() && pinf.is_finite() && dinf.is_finite()) {
            return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
        }
        if opts.record_trace {
            trace.push(Iterate {
                primal_objective: offset - dobj,
                dual_objective: offset - pobj,
                primal_infeasibility: dinf,
                dual_infeasibility: pinf,
            });
        }
        let gap = (pobj - dobj).abs();
        let rel_gap = gap / (1.0 + (offset - dobj).abs());
        if rel_gap <= loose.gap_tol && pinf <= loose.feas_tol && dinf <= loose.feas_tol {
            let score = rel_gap.max(pinf).max(dinf);
            let mut b = best.borrow_mut();
            if b.as_ref().is_none_or(|(_, _, _, s)| score < 0.5 * *s) {
                *b = Some((y.clone(), pobj, dobj, score));
                stale = 0;
            }
        }
        if best.borrow().is_some() {
            stale += 1;
            if stale > 5 {
                return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
            }
        }
        if gap <= opts.gap_tol * (1.0 + (offset - dobj).abs())
            && pinf <= opts.feas_tol
            && dinf <= opts.feas_tol
        {
            return finish(y, pobj, dobj, Status::Optimal, iter, trace);
        }
        // X certifies infeasibility of the LMI side when <C, X> < 0 while
        // A(X) is negligible relative to it.
        if pobj < 0.0 && ax.norm() <= opts.feas_tol * (-pobj) && dinf > opts.feas_tol {
            return finish(y, pobj, dobj, Status::Infeasible, iter, trace);
        }
        if offset - dobj < -1e12 && dinf <= 1e-6 {
            return finish(y, pobj, dobj, Status::Unbounded, iter, trace);
        }
        if iter == opts.max_iters {
            return finish(y, pobj, dobj, Status::MaxIterations, iter, trace);
        }

        let mu = inner(&x, &z) / dim as f64;
        let Some(scal) = x
            .iter()
            .zip(&z)
            .map(|(x, z)| nt_scaling(x, z))
            .collect::<Option<Vec<_>>>()
        else {
            return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
        };

        // Schur complement M_ij = <A_i, W A_j W>.
        let waw: Vec<Blocks> = s
            .a
            .iter()
            .map(|aj| {
                aj.iter()
                    .zip(&scal)
                    .map(|(a, sc)| &sc.w * a * &sc.w)
                    .collect()
            })
            .collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = inner(&s.a[i], &waw[j]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        let Some(chol) = factor_schur(&schur) else {
            return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
        };
        let wrdw: Blocks = rd
            .iter()
            .zip(&scal)
            .map(|(r, sc)| &sc.w * r * &sc.w)
            .collect();

        let direction = |rc: &Blocks| -> (Blocks, DVector<f64>, Blocks) {
            let t: Blocks = rc.iter().zip(&wrdw).map(|(a, b)| a - b).collect();
            let rhs = &rp - apply_a(&t);
            let mut dy = chol.solve(&rhs);
            // Refine against the operator itself; the assembled Schur matrix
            // loses accuracy near the optimum.
            for _ in 0..2 {
                let w_at_w: Blocks = apply_at(&dy)
                    .iter()
                    .zip(&scal)
                    .map(|(a, sc)| &sc.w * a * &sc.w)
                    .collect();
                let res = &rhs - apply_a(&w_at_w);
                dy += chol.solve(&res);
            }
            let atdy = apply_at(&dy);
            let dz: Blocks = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Blocks = rc
                .iter()
                .zip(&dz)
                .zip(&scal)
                .map(|((r, dz), sc)| {
                    let mut d = r - &sc.w * dz * &sc.w;
                    symmetrize(&mut d);
                    d
                })
                .collect();
            (dx, dy, dz)
        };

        let lx: Option<Vec<_>> = x.iter().map(|m| m.clone().cholesky().map(|c| c.l())).collect();
        let lz: Option<Vec<_>> = z.iter().map(|m| m.clone().cholesky().map(|c| c.l())).collect();
        let (Some(lx), Some(lz)) = (lx, lz) else {
            return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
        };
        let steps = |dx: &Blocks, dz: &Blocks| {
            let ap = lx.iter().zip(dx).map(|(l, d)| max_step(l, d)).fold(f64::INFINITY, f64::min);
            let ad = lz.iter().zip(dz).map(|(l, d)| max_step(l, d)).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor.
        let rc_aff: Blocks = x.iter().map(|m| -m).collect();
        let (dx_a, _, dz_a) = direction(&rc_aff);
        let (ap, ad) = steps(&dx_a, &dz_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let x_aff: Blocks = x.iter().zip(&dx_a).map(|(x, d)| x + d * ap).collect();
        let z_aff: Blocks = z.iter().zip(&dz_a).map(|(z, d)| z + d * ad).collect();
        let mu_aff = inner(&x_aff, &z_aff) / dim as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector in the scaled space where X and Z both equal D.
        let rc: Blocks = scal
            .iter()
            .zip(&dx_a)
            .zip(&dz_a)
            .map(|((sc, dx), dz)| {
                let n = sc.d.len();
                let dxt = &sc.g_inv * dx * sc.g_inv.transpose();
                let dzt = sc.g.transpose() * dz * &sc.g;
                let mut prod = &dxt * &dzt;
                symmetrize(&mut prod);
                let k = DMatrix::from_fn(n, n, |i, j| {
                    let mut v = -prod[(i, j)];
                    if i == j {
                        v += sigma * mu - sc.d[i] * sc.d[i];
                    }
                    v * 2.0 / (sc.d[i] + sc.d[j])
                });
                &sc.g * k * sc.g.transpose()
            })
            .collect();
        let (dx, dy, dz) = direction(&rc);
        let (ap, ad) = steps(&dx, &dz);
        let (ap, ad) = ((0.98 * ap).min(1.0), (0.98 * ad).min(1.0));
        if ap < 1e-12 && ad < 1e-12 {
            return finish(y, pobj, dobj, Status::NumericalFailure, iter, trace);
        }
        for (x, d) in x.iter_mut().zip(&dx) {
            *x += d * ap;
            symmetrize(x);
        }
        for (z, d) in z.iter_mut().zip(&dz) {
            *z += d * ad;
            symmetrize(z);
        }
        y += dy * ad;
    }
    unreachable!("loop returns on the final iteration")
}

/// Solves the program. Malformed programs are errors; infeasibility,
/// unboundedness and solver trouble are reported through [`Status`].
pub fn solve(p: &LmiProgram, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let n = p.nvars;
    let Some(red) = reduce_equalities(p) else {
        return Ok(SdpSolution::terminal(vec![0.0; n], f64::NAN, Status::Infeasible));
    };
    let cost = DVector::from_fn(n, |i, _| p.cost.coeffs.get(&i).copied().unwrap_or(0.0));
    let zp: Vec<f64> = red.particular.iter().copied().collect();
    let offset = p.cost.constant + cost.dot(&red.particular);
    let reduced_cost = red.null.transpose() * &cost;
    let q = red.null.ncols();

    // Blocks in terms of w.
    let f0: Blocks = p.blocks.iter().map(|b| b.value(&zp)).collect();
    let fk: Vec<Blocks> = (0..q)
        .map(|k| {
            p.blocks
                .iter()
                .map(|b| {
                    let mut m = DMatrix::zeros(b.size(), b.size());
                    for (&v, a) in &b.coeffs {
                        let c = red.null[(v, k)];
                        if c != 0.0 {
                            m += a * c;
                        }
                    }
                    m
                })
                .collect()
        })
        .collect();

    let feasible_at = |blocks: &Blocks| {
        blocks
            .iter()
            .all(|m| min_eigenvalue(m) >= -opts.feas_tol * (1.0 + m.amax()))
    };

    // Orthonormalize the coefficient matrices; directions that do not move
    // any block either leave the cost unchanged or make it unbounded.
    let mut gram = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let v = inner(&fk[i], &fk[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cnorm = reduced_cost.norm();
    let mut keep = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let costly = v.dot(&reduced_cost).abs() > 1e-9 * (1.0 + cnorm);
        // Weak directions that carry cost are ill-conditioned, not free.
        if (lam > 1e-12 * lmax || (costly && lam > 1e-26 * lmax)) && lam > 0.0 {
            keep.push(i);
        } else if costly {
            return Ok(SdpSolution::terminal(zp, f64::NEG_INFINITY, Status::Unbounded));
        }
    }
    let t = DMatrix::from_fn(q, keep.len(), |r, c| {
        let i = keep[c];
        eig.eigenvectors[(r, i)] / eig.eigenvalues[i].sqrt()
    });
    let m = keep.len();
    if m == 0 {
        let status = if feasible_at(&f0) { Status::Optimal } else { Status::Infeasible };
        return Ok(SdpSolution::terminal(zp, offset, status));
    }
    let a: Vec<Blocks> = (0..m)
        .map(|j| {
            let mut out: Blocks = f0.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect();
            for k in 0..q {
                let c = t[(k, j)];
                if c != 0.0 {
                    for (o, f) in out.iter_mut().zip(&fk[k]) {
                        *o -= f * c;
                    }
                }
            }
            out
        })
        .collect();
    let b = -(t.transpose() * &reduced_cost);
    let standard = Standard { c: f0, a, b };
    let out = interior_point(&standard, offset, opts);
    let w = &t * &out.y;
    let z = &red.particular + &red.null * w;
    Ok(SdpSolution {
        z: z.iter().copied().collect(),
        primal_objective: out.primal,
        dual_objective: out.dual,
        status: out.status,
        iterations: out.iterations,
        trace: out.trace,
    })
}

/// `M = L'L` via the spectral decomposition; rows for zero eigenvalues are
/// dropped, so `L` may be rectangular.
pub fn factor_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SdpError> {
    let n = m.nrows();
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -1e-10 * lmax.max(1.0) {
        return Err(SdpError::Indefinite(lmin));
    }
    let cutoff = lmax * n as f64 * f64::EPSILON;
    let kept: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    Ok(DMatrix::from_fn(kept.len(), n, |r, c| {
        let i = kept[r];
        eig.eigenvalues[i].sqrt() * eig.eigenvectors[(c, i)]
    }))
}

/// Epigraph block `[[I, Lk], [k'L', gamma - m'k - c]]`, PSD exactly when
/// `k'Mk + m'k + c <= gamma`. `k_vars[j]` is the variable index of `k_j`.
pub fn quadratic_to_epigraph(
    m: &DMatrix<f64>,
    lin: &DVector<f64>,
    c: f64,
    k_vars: &[usize],
    gamma_var: usize,
) -> Result<AffineBlock, SdpError> {
    assert_eq!(m.nrows(), k_vars.len());
    assert_eq!(lin.len(), k_vars.len());
    let l = factor_psd(m)?;
    let r = l.nrows();
    let mut block = AffineBlock::new(r + 1);
    for i in 0..r {
        block.add_entry(None, i, i, 1.0);
    }
    block.add_entry(None, r, r, -c);
    block.add_entry(Some(gamma_var), r, r, 1.0);
    for (j, &v) in k_vars.iter().enumerate() {
        for i in 0..r {
            if l[(i, j)] != 0.0 {
                block.add_entry(Some(v), i, r, l[(i, j)]);
            }
        }
        if lin[j] != 0.0 {
            block.add_entry(Some(v), r, r, -lin[j]);
        }
    }
    Ok(block)
}
