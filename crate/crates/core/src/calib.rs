//! Least-squares fitting of the radial distortion coefficients, with or
//! without shape constraints.
//!
//! Each correspondence gives two rows of `A k = b` with
//! `A_i = [[-rx, -r^2 x, -r^3 x, xh r, xh r^2, xh r^3], [.. y ..]]` and
//! `b_i = (x - xh, y - yh)`, so the residual is `g(r) xh - f(r) x`. The
//! quadratic cost is turned into an LMI through the epigraph block, and shape
//! requirements on `[0, rbar]` become interval certificates whose Gram
//! matrices are constrained PSD and tied to `k` by coefficient matching.

use nalgebra::{DMatrix, DVector, SMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certs::{match_coefficients, CertError, CertificateLayout};
use crate::distortion::{shape_check, DistortionModel, ModelKind, Shape, ShapeReport, DEFAULT_SAMPLES};
use crate::poly::{Monomial, ParamPoly, Polynomial};
use crate::relax::{self, AuxExpr, PmiProgram, PolyMatrix, RelaxError};
use crate::sdp::{self, quadratic_to_epigraph, AffineBlock, AffineForm, LmiProgram, SdpError, SolverOptions, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("no correspondences")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver finished with status {0:?}")]
    Solver(Status),
    #[error("relaxation not certified up to order {order} (lower bound {lower_bound})")]
    Uncertified {
        order: u32,
        lower_bound: f64,
        best: Option<Box<CalibResult>>,
    },
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub ideal: (f64, f64),
    pub observed: (f64, f64),
}

impl Correspondence {
    pub fn new(ideal: (f64, f64), observed: (f64, f64)) -> Self {
        Correspondence { ideal, observed }
    }

    pub fn radius(&self) -> f64 {
        self.ideal.0.hypot(self.ideal.1)
    }
}

pub fn build_rows(c: &Correspondence) -> (SMatrix<f64, 2, 6>, Vector2<f64>) {
    let r = c.radius();
    let (x, y) = c.ideal;
    let (xh, yh) = c.observed;
    let (r2, r3) = (r * r, r * r * r);
    let a = SMatrix::<f64, 2, 6>::from_row_slice(&[
        -r * x, -r2 * x, -r3 * x, xh * r, xh * r2, xh * r3, //
        -r * y, -r2 * y, -r3 * y, yh * r, yh * r2, yh * r3,
    ]);
    (a, Vector2::new(x - xh, y - yh))
}

/// `k'Mk + m'k + c = sum ||A_i k - b_i||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostData {
    pub m: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub c: f64,
    pub count: usize,
}

impl CostData {
    pub fn eval(&self, k: &[f64; 6]) -> f64 {
        let kv = DVector::from_column_slice(k);
        kv.dot(&(&self.m * &kv)) + self.lin.dot(&kv) + self.c
    }

    /// Cost restricted to the coefficients in `idx`, the others held at 0.
    fn restricted(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let n = idx.len();
        (
            DMatrix::from_fn(n, n, |i, j| self.m[(idx[i], idx[j])]),
            DVector::from_fn(n, |i, _| self.lin[idx[i]]),
        )
    }

    fn degenerate(&self) -> bool {
        self.count < 3 || self.m.amax() == 0.0
    }
}

pub fn assemble_cost(cs: &[Correspondence]) -> Result<CostData, CalibError> {
    if cs.is_empty() {
        return Err(CalibError::Empty);
    }
    let mut m = SMatrix::<f64, 6, 6>::zeros();
    let mut lin = SMatrix::<f64, 6, 1>::zeros();
    let mut c = 0.0;
    for corr in cs {
        let (a, b) = build_rows(corr);
        m += a.transpose() * a;
        lin -= 2.0 * a.transpose() * b;
        c += b.norm_squared();
    }
    Ok(CostData {
        m: DMatrix::from_iterator(6, 6, m.iter().copied()),
        lin: DVector::from_iterator(6, lin.iter().copied()),
        c,
        count: cs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeConstraint {
    None,
    Barrel,
    Pincushion,
    Positivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub rbar: f64,
    pub margin_p: f64,
    pub delta_max: u32,
    pub shape: ShapeConstraint,
    /// Model family for unconstrained fits; shape-constrained fits imply it.
    pub model: ModelKind,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            rbar: 1.0,
            margin_p: 0.1,
            delta_max: 3,
            shape: ShapeConstraint::None,
            model: ModelKind::Polynomial,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.rbar > 0.0 && self.rbar.is_finite()) {
            return Err(CalibError::Config(format!("rbar must be positive, got {}", self.rbar)));
        }
        if !(self.margin_p > 0.0 && self.margin_p < 1.0) {
            return Err(CalibError::Config(format!("margin p must lie in (0, 1), got {}", self.margin_p)));
        }
        Ok(())
    }

    pub fn shape(&self) -> Option<Shape> {
        match self.shape {
            ShapeConstraint::None => None,
            ShapeConstraint::Barrel => Some(Shape::Barrel),
            ShapeConstraint::Pincushion => Some(Shape::Pincushion),
            ShapeConstraint::Positivity => Some(Shape::Positivity { margin: self.margin_p }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibResult {
    pub model: DistortionModel,
    /// `||Ak - b||^2` at the returned coefficients.
    pub objective: f64,
    /// Root-mean-square distance between distorted ideal and observed points.
    pub reprojection_rms: Option<f64>,
    pub shape_report: Option<ShapeReport>,
    pub solver_status: Status,
    pub relaxation_order: Option<u32>,
    pub certified: Option<bool>,
    pub lower_bound: Option<f64>,
    pub warnings: Vec<String>,
}

impl CalibResult {
    fn new(model: DistortionModel, cost: &CostData, status: Status) -> Self {
        let objective = cost.eval(model.k()).max(0.0);
        let mut warnings = Vec::new();
        if cost.degenerate() {
            warnings.push(format!(
                "degenerate data ({} correspondences{}); returning a regularized optimum",
                cost.count,
                if cost.m.amax() == 0.0 { ", all at r = 0" } else { "" }
            ));
        }
        CalibResult {
            model,
            objective,
            reprojection_rms: None,
            shape_report: None,
            solver_status: status,
            relaxation_order: None,
            certified: None,
            lower_bound: None,
            warnings,
        }
    }
}

/// Tight tolerances first; a run that stalls is repeated at the defaults.
fn calib_solve(p: &LmiProgram) -> Result<sdp::SdpSolution, CalibError> {
    let tight = SolverOptions {
        gap_tol: 1e-10,
        feas_tol: 1e-9,
        ..SolverOptions::default()
    };
    let sol = sdp::solve(p, &tight)?;
    let sol = match sol.status {
        Status::MaxIterations | Status::NumericalFailure => sdp::solve(p, &SolverOptions::default())?,
        _ => sol,
    };
    if sol.status != Status::Optimal {
        return Err(CalibError::Solver(sol.status));
    }
    Ok(sol)
}

fn kind_indices(kind: ModelKind) -> Vec<usize> {
    match kind {
        ModelKind::Polynomial => vec![0, 1, 2],
        ModelKind::Division => vec![3, 4, 5],
        ModelKind::Rational => (0..6).collect(),
    }
}

fn model_from(kind: ModelKind, idx: &[usize], values: &[f64]) -> DistortionModel {
    let mut k = [0.0; 6];
    for (&i, &v) in idx.iter().zip(values) {
        k[i] = v;
    }
    DistortionModel::new(kind, k).expect("solver returns finite coefficients")
}

/// Shape-constrained problems need a bounded feasible set; a rank-deficient
/// cost gets a tiny ridge so the optimum is the small-norm one.
fn regularized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigenvalues();
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    let lmin = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin > 1e-9 * lmax.max(1e-300) {
        return m.clone();
    }
    let ridge = 1e-10 * m.trace().max(1.0);
    m + DMatrix::identity(m.nrows(), m.ncols()) * ridge
}

/// Minimizes `gamma` over the epigraph block alone.
pub fn solve_unconstrained(cost: &CostData, kind: ModelKind) -> Result<CalibResult, CalibError> {
    let idx = kind_indices(kind);
    let (m, lin) = cost.restricted(&idx);
    let n = idx.len();
    let vars: Vec<usize> = (0..n).collect();
    let mut p = LmiProgram::new(n + 1);
    p.cost = AffineForm::new(&[(n, 1.0)], 0.0);
    p.blocks.push(quadratic_to_epigraph(&m, &lin, cost.c, &vars, n)?);
    let sol = calib_solve(&p)?;
    let model = model_from(kind, &idx, &sol.z[..n]);
    Ok(CalibResult::new(model, cost, sol.status))
}

/// Variables and coefficient-matching equalities of a shape program.
#[derive(Debug, Clone)]
pub struct ShapeSystem {
    pub nvars: usize,
    /// Variable index of each free distortion coefficient, paired with its
    /// position in `k` (0-based).
    pub k_vars: Vec<(usize, usize)>,
    pub gamma: usize,
    pub certificates: Vec<CertificateLayout>,
    pub equalities: Vec<Polynomial>,
}

fn k_param(nvars: usize, k_vars: &[(usize, usize)], kind_start: usize, constant: f64) -> ParamPoly {
    // 1 + k_a r + k_b r^2 + k_c r^3 in the decision variables
    let mut c = vec![Polynomial::constant(nvars, constant)];
    for pos in kind_start..kind_start + 3 {
        let var = k_vars.iter().find(|(_, p)| *p == pos).map(|(v, _)| *v);
        c.push(match var {
            Some(v) => Polynomial::var(nvars, v),
            None => Polynomial::zero(nvars),
        });
    }
    ParamPoly::new(nvars, c)
}

/// `-f' >= 0` and `-f'' >= 0` on `[0, rbar]` for `f = 1 + k1 r + k2 r^2 + k3 r^3`.
/// Variables: `k1..k3`, `gamma`, then the two certificates.
pub fn barrel_system(rbar: f64) -> Result<ShapeSystem, CalibError> {
    let k_vars = vec![(0, 0), (1, 1), (2, 2)];
    let gamma = 3;
    let mut next = 4;
    let c1 = CertificateLayout::for_degree(2, 0.0, rbar, &mut next);
    let c2 = CertificateLayout::for_degree(1, 0.0, rbar, &mut next);
    let n = next;
    let f = k_param(n, &k_vars, 0, 1.0);
    let f1 = f.derivative().scale(-1.0);
    let f2 = f.derivative().derivative().scale(-1.0);
    let mut equalities = match_coefficients(&f1, &c1.symbolic(n))?;
    equalities.extend(match_coefficients(&f2, &c2.symbolic(n))?);
    Ok(ShapeSystem {
        nvars: n,
        k_vars,
        gamma,
        certificates: vec![c1, c2],
        equalities,
    })
}

/// `g - p >= 0` on `[0, rbar]` with all six coefficients free.
/// Variables: `k1..k6`, `gamma`, then the certificate.
pub fn zero_crossing_system(rbar: f64, margin_p: f64) -> Result<ShapeSystem, CalibError> {
    let k_vars: Vec<(usize, usize)> = (0..6).map(|i| (i, i)).collect();
    let gamma = 6;
    let mut next = 7;
    let c = CertificateLayout::for_degree(3, 0.0, rbar, &mut next);
    let n = next;
    let g = k_param(n, &k_vars, 3, 1.0 - margin_p);
    let equalities = match_coefficients(&g, &c.symbolic(n))?;
    Ok(ShapeSystem {
        nvars: n,
        k_vars,
        gamma,
        certificates: vec![c],
        equalities,
    })
}

fn gram_blocks(layout: &CertificateLayout) -> Vec<AffineBlock> {
    [(layout.s_size, &layout.s_vars), (layout.t_size, &layout.t_vars)]
        .into_iter()
        .filter(|(size, _)| *size > 0)
        .map(|(size, vars)| {
            let mut b = AffineBlock::new(size);
            let mut it = vars.iter();
            for i in 0..size {
                for j in i..size {
                    b.add_entry(Some(*it.next().expect("upper triangle")), i, j, 1.0);
                }
            }
            b
        })
        .collect()
}

/// Polynomials (ascending coefficients in `r`) whose nonnegativity on
/// `[0, rbar]` is what the certificates of each shape encode.
fn shape_conditions(shape: Shape, k: &[f64; 6]) -> Vec<Vec<f64>> {
    let [k1, k2, k3, k4, k5, k6] = *k;
    match shape {
        Shape::Barrel => vec![vec![-k1, -2.0 * k2, -3.0 * k3], vec![-2.0 * k2, -6.0 * k3]],
        Shape::Pincushion => vec![
            vec![1.0, k4, k5, k6],
            vec![-k4, -2.0 * k5, -3.0 * k6],
            vec![
                2.0 * k4 * k4 - 2.0 * k5,
                6.0 * k4 * k5 - 6.0 * k6,
                6.0 * k5 * k5 + 6.0 * k4 * k6,
                16.0 * k5 * k6,
                12.0 * k6 * k6,
            ],
        ],
        Shape::Positivity { margin } => vec![vec![1.0 - margin, k4, k5, k6]],
    }
}

/// When the least-squares minimizer already meets the shape conditions it
/// is the constrained optimum, and is returned exactly.
fn feasible_least_squares(
    cost: &CostData,
    kind: ModelKind,
    shape: Shape,
    rbar: f64,
) -> Option<CalibResult> {
    let idx = kind_indices(kind);
    let (m, lin) = cost.restricted(&idx);
    // Pseudo-inverse through the eigendecomposition; nalgebra's SVD can
    // return an invalid factorization for exactly rank-deficient input.
    let eig = m.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return None;
    }
    let proj = eig.eigenvectors.transpose() * (-0.5 * lin);
    let scaled = DVector::from_fn(proj.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l > 1e-14 * lmax { proj[i] / l } else { 0.0 }
    });
    let k = &eig.eigenvectors * scaled;
    let model = DistortionModel::new(kind, {
        let mut full = [0.0; 6];
        for (&i, &v) in idx.iter().zip(k.iter()) {
            full[i] = v;
        }
        full
    })
    .ok()?;
    let ok = shape_conditions(shape, model.k())
        .iter()
        .all(|c| crate::poly::min_on_interval(c, 0.0, rbar) >= 0.0);
    if !ok {
        return None;
    }
    let mut res = CalibResult::new(model, cost, Status::Optimal);
    res.shape_report = Some(shape_check(&res.model, shape, rbar, DEFAULT_SAMPLES));
    Some(res)
}

fn solve_shape_lmi(
    cost: &CostData,
    sys: &ShapeSystem,
    kind: ModelKind,
    shape: Shape,
    rbar: f64,
) -> Result<CalibResult, CalibError> {
    if let Some(res) = feasible_least_squares(cost, kind, shape, rbar) {
        return Ok(res);
    }
    let idx: Vec<usize> = sys.k_vars.iter().map(|(_, pos)| *pos).collect();
    let vars: Vec<usize> = sys.k_vars.iter().map(|(v, _)| *v).collect();
    let (m, lin) = cost.restricted(&idx);
    let mut p = LmiProgram::new(sys.nvars);
    p.cost = AffineForm::new(&[(sys.gamma, 1.0)], 0.0);
    p.blocks.push(quadratic_to_epigraph(&regularized(&m), &lin, cost.c, &vars, sys.gamma)?);
    for c in &sys.certificates {
        p.blocks.extend(gram_blocks(c));
    }
    for e in &sys.equalities {
        p.equalities.push(AffineForm::from_polynomial(e)?);
    }
    let sol = calib_solve(&p)?;
    let values: Vec<f64> = vars.iter().map(|&v| sol.z[v]).collect();
    let model = model_from(kind, &idx, &values);
    let mut res = CalibResult::new(model, cost, sol.status);
    res.shape_report = Some(shape_check(&res.model, shape, rbar, DEFAULT_SAMPLES));
    Ok(res)
}

/// Polynomial model with `L' <= 0` and `L'' <= 0` on `[0, rbar]`.
pub fn solve_barrel(cost: &CostData, cfg: &CalibConfig) -> Result<CalibResult, CalibError> {
    cfg.validate()?;
    let sys = barrel_system(cfg.rbar)?;
    solve_shape_lmi(cost, &sys, ModelKind::Polynomial, Shape::Barrel, cfg.rbar)
}

/// Rational model with `g >= p` on `[0, rbar]`.
pub fn solve_zero_crossing(cost: &CostData, cfg: &CalibConfig) -> Result<CalibResult, CalibError> {
    cfg.validate()?;
    let sys = zero_crossing_system(cfg.rbar, cfg.margin_p)?;
    solve_shape_lmi(
        cost,
        &sys,
        ModelKind::Rational,
        Shape::Positivity { margin: cfg.margin_p },
        cfg.rbar,
    )
}

/// Splits a polynomial over `[x | u]` into its `x` part and linear `u` part.
fn split_aux(p: &Polynomial, nx: usize) -> AuxExpr {
    let mut poly_terms = Vec::new();
    let mut aux = Vec::new();
    for (m, c) in p.terms() {
        let e = m.exponents();
        match e[nx..].iter().position(|&a| a > 0) {
            None => poly_terms.push((Monomial::new(e[..nx].to_vec()), c)),
            Some(j) => {
                assert!(m.degree() == 1, "auxiliary variables must enter linearly");
                aux.push((j, c));
            }
        }
    }
    AuxExpr::with_aux(Polynomial::from_terms(nx, poly_terms), &aux)
}

/// Pincushion program over `x = (k4, k5, k6)` with auxiliary `gamma` and
/// certificate entries: `g >= 0`, `-g' >= 0` and `h = 2 g'^2 - g g'' >= 0`.
pub fn pincushion_program(cost: &CostData, rbar: f64) -> Result<PmiProgram, CalibError> {
    const NX: usize = 3;
    let gamma = NX;
    let mut next = NX + 1;
    let c_g = CertificateLayout::for_degree(3, 0.0, rbar, &mut next);
    let c_g1 = CertificateLayout::for_degree(2, 0.0, rbar, &mut next);
    let c_h = CertificateLayout::for_degree(4, 0.0, rbar, &mut next);
    let n = next;
    let k_vars = [(0, 3), (1, 4), (2, 5)];
    let g = k_param(n, &k_vars, 3, 1.0);
    let g1 = g.derivative();
    let g2 = g1.derivative();
    let h = g1.mul(&g1).scale(2.0).sub(&g.mul(&g2));
    let mut eqs = match_coefficients(&g, &c_g.symbolic(n))?;
    eqs.extend(match_coefficients(&g1.scale(-1.0), &c_g1.symbolic(n))?);
    eqs.extend(match_coefficients(&h, &c_h.symbolic(n))?);

    let (m, lin) = cost.restricted(&[3, 4, 5]);
    let epi = quadratic_to_epigraph(&regularized(&m), &lin, cost.c, &[0, 1, 2], gamma)?;
    let mut blocks = vec![affine_to_polymatrix(&epi, NX)];
    // gamma <= c + 1 keeps the relaxation compact; k = 0 already costs c.
    let mut cap = PolyMatrix::scalar(Polynomial::constant(NX, cost.c + 1.0));
    cap.add_aux(gamma - NX, 0, 0, -1.0);
    blocks.push(cap);
    for c in [&c_g, &c_g1, &c_h] {
        for b in gram_blocks(c) {
            blocks.push(affine_to_polymatrix(&b, NX));
        }
    }
    let mut p = PmiProgram::new(Polynomial::zero(NX), relax::block_diag(&blocks));
    p.naux = n - NX;
    p.cost = AuxExpr::with_aux(Polynomial::zero(NX), &[(gamma - NX, 1.0)]);
    p.equalities = eqs.iter().map(|e| split_aux(e, NX)).collect();
    Ok(p)
}

/// Variables below `nx` become polynomial variables, the rest auxiliaries.
fn affine_to_polymatrix(b: &AffineBlock, nx: usize) -> PolyMatrix {
    let size = b.size();
    let mut g = PolyMatrix::zeros(nx, size);
    for i in 0..size {
        for j in i..size {
            let mut terms = Vec::new();
            for (&v, a) in &b.coeffs {
                if v < nx && a[(i, j)] != 0.0 {
                    terms.push((v, a[(i, j)]));
                }
            }
            g.set(i, j, Polynomial::affine(nx, &terms, b.constant[(i, j)]));
        }
    }
    for (&v, a) in &b.coeffs {
        if v >= nx {
            g.aux.insert(v - nx, a.clone());
        }
    }
    g
}

/// Division model with `L' >= 0`, `L'' >= 0` on `[0, rbar]`, solved through
/// the moment hierarchy up to `cfg.delta_max`.
pub fn solve_pincushion(cost: &CostData, cfg: &CalibConfig) -> Result<CalibResult, CalibError> {
    cfg.validate()?;
    if let Some(mut res) = feasible_least_squares(cost, ModelKind::Division, Shape::Pincushion, cfg.rbar) {
        res.certified = Some(true);
        res.lower_bound = Some(res.objective);
        return Ok(res);
    }
    let p = pincushion_program(cost, cfg.rbar)?;
    // The moment programs rarely reach 1e-8 on the dual residual; the
    // candidate is checked independently before it is certified.
    let opts = SolverOptions {
        gap_tol: 1e-10,
        feas_tol: 1e-6,
        ..SolverOptions::default()
    };
    let res = relax::solve_hierarchy(&p, cfg.delta_max, &opts)?;
    let candidate = res.extracted.as_ref().filter(|_| res.feasible).map(|x| {
        let model = model_from(ModelKind::Division, &[3, 4, 5], x);
        let mut out = CalibResult::new(model, cost, res.status);
        out.shape_report = Some(shape_check(&out.model, Shape::Pincushion, cfg.rbar, DEFAULT_SAMPLES));
        out.relaxation_order = Some(res.order);
        out.certified = Some(res.certified);
        out.lower_bound = Some(res.lower_bound);
        if res.status != Status::Optimal {
            out.warnings.push(format!("relaxation stopped with {:?}; bound taken from the smaller objective", res.status));
        }
        out
    });
    if res.certified {
        return Ok(candidate.expect("certified results carry a feasible candidate"));
    }
    if matches!(res.status, Status::Infeasible | Status::Unbounded) {
        return Err(CalibError::Solver(res.status));
    }
    Err(CalibError::Uncertified {
        order: res.order,
        lower_bound: res.lower_bound,
        best: candidate.map(Box::new),
    })
}

pub fn reprojection_rms(model: &DistortionModel, cs: &[Correspondence]) -> f64 {
    let mut sum = 0.0;
    for c in cs {
        match model.distort(c.ideal) {
            Ok((x, y)) => sum += (x - c.observed.0).powi(2) + (y - c.observed.1).powi(2),
            Err(_) => return f64::INFINITY,
        }
    }
    (sum / cs.len() as f64).sqrt()
}

/// Assembles the cost, dispatches on `cfg.shape` and attaches the
/// reprojection RMS.
pub fn calibrate(cs: &[Correspondence], cfg: &CalibConfig) -> Result<CalibResult, CalibError> {
    cfg.validate()?;
    let cost = assemble_cost(cs)?;
    let mut res = match cfg.shape {
        ShapeConstraint::None => solve_unconstrained(&cost, cfg.model),
        ShapeConstraint::Barrel => solve_barrel(&cost, cfg),
        ShapeConstraint::Pincushion => solve_pincushion(&cost, cfg),
        ShapeConstraint::Positivity => solve_zero_crossing(&cost, cfg),
    }?;
    res.reprojection_rms = Some(reprojection_rms(&res.model, cs));
    Ok(res)
}

/// Correspondences for `model` at `n` ideal points with radii uniform in
/// `[0, rmax]`, observed points perturbed by Gaussian noise of std `sigma`.
pub fn synthesize(model: &DistortionModel, n: usize, rmax: f64, sigma: f64, seed: u64) -> Vec<Correspondence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = Uniform::new_inclusive(0.0, rmax).expect("valid radius range");
    let angle = Uniform::new(0.0, std::f64::consts::TAU).expect("valid angle range");
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("valid noise");
    (0..n)
        .map(|_| {
            let (r, th): (f64, f64) = (radius.sample(&mut rng), angle.sample(&mut rng));
            let ideal = (r * th.cos(), r * th.sin());
            let (x, y) = model.distort(ideal).expect("generator model has no pole on the sampled radii");
            let observed = (x + noise.sample(&mut rng), y + noise.sample(&mut rng));
            Correspondence::new(ideal, observed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certs::{eliminate, ratio};
    use num_rational::BigRational;
    use rand::Rng;

    fn lls(cost_pts: &[Correspondence], idx: &[usize]) -> DVector<f64> {
        let rows = 2 * cost_pts.len();
        let mut a = DMatrix::zeros(rows, idx.len());
        let mut b = DVector::zeros(rows);
        for (i, c) in cost_pts.iter().enumerate() {
            let (ai, bi) = build_rows(c);
            for (j, &col) in idx.iter().enumerate() {
                a[(2 * i, j)] = ai[(0, col)];
                a[(2 * i + 1, j)] = ai[(1, col)];
            }
            b[2 * i] = bi[0];
            b[2 * i + 1] = bi[1];
        }
        (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap()
    }

    #[test]
    fn build_rows_examples() {
        let (a, b) = build_rows(&Correspondence::new((0.0, 0.0), (0.3, -0.2)));
        assert_eq!(a, SMatrix::<f64, 2, 6>::zeros());
        assert_eq!(b, Vector2::new(-0.3, 0.2));
        let (_, b) = build_rows(&Correspondence::new((1.0, 0.0), (1.0, 0.0)));
        assert_eq!(b, Vector2::zeros());
    }

    #[test]
    fn residual_is_g_observed_minus_f_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Correspondence::new((0.4, -0.3), (0.37, -0.28));
        let (a, b) = build_rows(&c);
        let r = c.radius();
        for _ in 0..20 {
            let k: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let res = a * SMatrix::<f64, 6, 1>::from_column_slice(&k) - b;
            let f = 1.0 + k[0] * r + k[1] * r * r + k[2] * r.powi(3);
            let g = 1.0 + k[3] * r + k[4] * r * r + k[5] * r.powi(3);
            assert!((res[0] - (g * c.observed.0 - f * c.ideal.0)).abs() < 1e-14);
            assert!((res[1] - (g * c.observed.1 - f * c.ideal.1)).abs() < 1e-14);
        }
    }

    #[test]
    fn assemble_cost_examples() {
        let zero = assemble_cost(&[Correspondence::new((0.0, 0.0), (0.5, 0.25))]).unwrap();
        assert_eq!(zero.m.amax(), 0.0);
        assert_eq!(zero.lin.amax(), 0.0);
        assert_eq!(zero.c, 0.3125);
        assert!(matches!(assemble_cost(&[]), Err(CalibError::Empty)));

        // Dyadic data keeps the sums exact.
        let cs = [
            Correspondence::new((0.5, 0.25), (0.5, 0.125)),
            Correspondence::new((-0.75, 0.5), (-0.625, 0.5)),
        ];
        let once = assemble_cost(&cs).unwrap();
        let twice = assemble_cost(&[cs[0], cs[1], cs[0], cs[1]]).unwrap();
        assert_eq!(twice.m, &once.m * 2.0);
        assert_eq!(twice.lin, &once.lin * 2.0);
        assert_eq!(twice.c, once.c * 2.0);
    }

    #[test]
    fn assembled_cost_matches_residual_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cs: Vec<Correspondence> = (0..100)
            .map(|_| {
                Correspondence::new(
                    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let cost = assemble_cost(&cs).unwrap();
        for _ in 0..10 {
            let k: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let kv = SMatrix::<f64, 6, 1>::from_column_slice(&k);
            let direct: f64 = cs
                .iter()
                .map(|c| {
                    let (a, b) = build_rows(c);
                    (a * kv - b).norm_squared()
                })
                .sum();
            assert!((cost.eval(&k) - direct).abs() <= 1e-9 * direct);
        }
        let eig = cost.m.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v >= -1e-10 * eig.amax()));
    }

    #[test]
    fn unconstrained_matches_normal_equations() {
        let gen = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.0]);
        let cs = synthesize(&gen, 200, 1.0, 1e-3, 7);
        let cost = assemble_cost(&cs).unwrap();
        for kind in [ModelKind::Polynomial, ModelKind::Division, ModelKind::Rational] {
            let idx = kind_indices(kind);
            let expected = lls(&cs, &idx);
            let res = solve_unconstrained(&cost, kind).unwrap();
            for (j, &i) in idx.iter().enumerate() {
                assert!((res.model.k()[i] - expected[j]).abs() < 1e-6, "{kind:?} k{}", i + 1);
            }
        }
    }

    #[test]
    fn noiseless_data_is_recovered() {
        for gen in [
            DistortionModel::polynomial(-0.2, 0.05, -0.01),
            DistortionModel::division(0.1, 0.02, -0.01),
        ] {
            let cost = assemble_cost(&synthesize(&gen, 300, 1.0, 0.0, 8)).unwrap();
            let res = solve_unconstrained(&cost, gen.kind()).unwrap();
            for i in 0..6 {
                assert!((res.model.k()[i] - gen.k()[i]).abs() < 1e-5, "{:?}", gen.kind());
            }
        }
        // f and g nearly share a factor here, so only the fit is pinned down.
        let gen = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.0]);
        let cost = assemble_cost(&synthesize(&gen, 300, 1.0, 0.0, 8)).unwrap();
        assert!(solve_unconstrained(&cost, ModelKind::Rational).unwrap().objective < 1e-9);
    }

    #[test]
    fn identity_data_gives_zero() {
        let cs = synthesize(&DistortionModel::identity(), 50, 1.0, 0.0, 1);
        let res = calibrate(&cs, &CalibConfig::default()).unwrap();
        assert!(res.model.k().iter().all(|k| k.abs() < 1e-7));
        assert!(res.objective < 1e-12);
    }

    #[test]
    fn single_radius_matches_pseudoinverse_residual() {
        let gen = DistortionModel::polynomial(-0.1, 0.02, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cs: Vec<Correspondence> = (0..20)
            .map(|_| {
                let th: f64 = rng.random_range(0.0..6.3);
                let ideal = (0.6 * th.cos(), 0.6 * th.sin());
                let (x, y) = gen.distort(ideal).unwrap();
                Correspondence::new(ideal, (x + rng.random_range(-1e-3..1e-3), y))
            })
            .collect();
        let cost = assemble_cost(&cs).unwrap();
        let pinv = cost.m.clone().pseudo_inverse(1e-12).unwrap();
        let best = cost.c - 0.25 * cost.lin.dot(&(&pinv * &cost.lin));
        let res = solve_unconstrained(&cost, ModelKind::Rational).unwrap();
        assert!((res.objective - best).abs() < 1e-6);
    }

    fn barrel_cfg() -> CalibConfig {
        CalibConfig {
            shape: ShapeConstraint::Barrel,
            ..CalibConfig::default()
        }
    }

    #[test]
    fn barrel_recovers_feasible_generator() {
        let gen = DistortionModel::polynomial(-0.1, -0.05, 0.0);
        let cost = assemble_cost(&synthesize(&gen, 200, 0.5, 0.0, 2)).unwrap();
        let res = solve_barrel(&cost, &barrel_cfg()).unwrap();
        let free = solve_unconstrained(&cost, ModelKind::Polynomial).unwrap();
        for i in 0..3 {
            assert!((res.model.k()[i] - gen.k()[i]).abs() < 1e-4);
        }
        assert!((res.objective - free.objective).abs() < 1e-8);
        assert!(res.shape_report.unwrap().max_violation <= 1e-6);
    }

    #[test]
    fn barrel_on_pincushion_data_costs_more() {
        let gen = DistortionModel::polynomial(0.1, 0.05, 0.0);
        let cost = assemble_cost(&synthesize(&gen, 200, 0.8, 0.0, 3)).unwrap();
        let res = solve_barrel(&cost, &barrel_cfg()).unwrap();
        let free = solve_unconstrained(&cost, ModelKind::Polynomial).unwrap();
        assert!(res.objective > free.objective + 1e-6);
        assert!(res.shape_report.unwrap().max_violation <= 1e-6);
    }

    #[test]
    fn barrel_single_point_stays_certified() {
        let cs = [Correspondence::new((0.3, 0.4), (0.33, 0.44))];
        let res = calibrate(&cs, &barrel_cfg()).unwrap();
        assert!(res.shape_report.as_ref().unwrap().max_violation <= 1e-6);
        assert!(!res.warnings.is_empty());
    }

    #[test]
    fn barrel_system_reduces_to_closed_form() {
        // k1 = -s11, k2 = -s12 - rbar t11 / 2, k3 = (t11 - s13) / 3 and the
        // second-derivative certificate entries follow from them.
        let rbar = 4.0;
        let sys = barrel_system(rbar).unwrap();
        let el = eliminate::<BigRational>(&sys.equalities, &[0, 1, 2, 8, 9]).unwrap();
        let (s11, s12, s13, t11) = (4, 5, 6, 7);
        let e = |v| el.expr(v).unwrap();
        assert_eq!(e(0).coeff(s11), ratio(-1, 1));
        assert_eq!(e(1).coeff(s12), ratio(-1, 1));
        assert_eq!(e(1).coeff(t11), ratio(-2, 1));
        assert_eq!(e(2).coeff(t11), ratio(1, 3));
        assert_eq!(e(2).coeff(s13), ratio(-1, 3));
        // s21 = (2 s12 + 2 rbar s13 - rbar t11) / rbar, t21 = (2 / rbar)(s12 + rbar t11 / 2)
        assert_eq!(e(8).coeff(s12), ratio(1, 2));
        assert_eq!(e(8).coeff(s13), ratio(2, 1));
        assert_eq!(e(8).coeff(t11), ratio(-1, 1));
        assert_eq!(e(9).coeff(s12), ratio(1, 2));
        assert_eq!(e(9).coeff(t11), ratio(1, 1));
        assert!(el.residual.is_empty());
    }

    fn pin_cfg() -> CalibConfig {
        CalibConfig {
            shape: ShapeConstraint::Pincushion,
            ..CalibConfig::default()
        }
    }

    #[test]
    fn pincushion_recovers_division_generator() {
        let gen = DistortionModel::division(-0.08, 0.0, 0.0);
        assert!(shape_check(&gen, Shape::Pincushion, 1.0, DEFAULT_SAMPLES).passes());
        let cost = assemble_cost(&synthesize(&gen, 150, 0.5, 0.0, 5)).unwrap();
        let res = solve_pincushion(&cost, &pin_cfg()).unwrap();
        assert_eq!(res.certified, Some(true));
        assert!((res.model.k()[3] + 0.08).abs() < 1e-3);
        assert!(res.shape_report.unwrap().max_violation <= 1e-6);
    }

    #[test]
    fn pincushion_identity_data() {
        let cost = assemble_cost(&synthesize(&DistortionModel::identity(), 60, 1.0, 0.0, 6)).unwrap();
        let res = solve_pincushion(&cost, &pin_cfg()).unwrap();
        assert!(res.objective < 1e-8);
        assert!(res.model.k().iter().all(|k| k.abs() < 1e-4));
    }

    #[test]
    fn pincushion_on_barrel_data_costs_more() {
        let gen = DistortionModel::division(0.1, 0.05, 0.0);
        let cost = assemble_cost(&synthesize(&gen, 150, 0.8, 0.0, 7)).unwrap();
        let res = solve_pincushion(&cost, &pin_cfg()).unwrap();
        let free = solve_unconstrained(&cost, ModelKind::Division).unwrap();
        assert_eq!(res.certified, Some(true));
        assert!(res.objective > free.objective + 1e-6);
        assert!(res.shape_report.unwrap().max_violation <= 1e-6);
    }

    fn zc_cfg(p: f64) -> CalibConfig {
        CalibConfig {
            shape: ShapeConstraint::Positivity,
            margin_p: p,
            ..CalibConfig::default()
        }
    }

    #[test]
    fn zero_crossing_recovers_positive_generator() {
        let gen = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.0]);
        let gmin = (0..=1000).map(|i| gen.g(i as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
        assert!(gmin > 0.1);
        let cs = synthesize(&gen, 300, 1.0, 0.0, 9);
        let cost = assemble_cost(&cs).unwrap();
        let res = solve_zero_crossing(&cost, &zc_cfg(0.1)).unwrap();
        assert!(res.objective < 1e-8);
        assert!(res.shape_report.unwrap().max_violation <= 1e-6);
        assert!(reprojection_rms(&res.model, &cs) < 1e-4);
    }

    #[test]
    fn zero_crossing_with_large_margin_approaches_polynomial_fit() {
        let gen = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.0]);
        let cs = synthesize(&gen, 300, 1.0, 1e-3, 10);
        let cost = assemble_cost(&cs).unwrap();
        let res = solve_zero_crossing(&cost, &zc_cfg(0.999)).unwrap();
        let poly = solve_unconstrained(&cost, ModelKind::Polynomial).unwrap();
        assert!(res.model.k()[3..].iter().all(|k| k.abs() < 1e-2));
        assert!(res.objective <= poly.objective + 1e-9);
        assert!((res.objective - poly.objective).abs() < 0.05 * poly.objective);
    }

    #[test]
    fn zero_crossing_system_reduces_to_closed_form() {
        // 1 - p = rbar t11, k4 = s11 - t11 + 2 rbar t12,
        // k5 = 2 s12 - 2 t12 + rbar t13, k6 = s13 - t13.
        let (rbar, p) = (4.0, 0.1);
        let sys = zero_crossing_system(rbar, p).unwrap();
        let (s11, s12, s13, t11, t12, t13) = (7, 8, 9, 10, 11, 12);
        let el = eliminate::<BigRational>(&sys.equalities, &[t11, 3, 4, 5]).unwrap();
        let e = |v| el.expr(v).unwrap();
        let one_minus_p = BigRational::from_float(1.0 - p).unwrap();
        let rb = BigRational::from_float(rbar).unwrap();
        assert_eq!(e(t11).constant, &one_minus_p / &rb);
        assert!(e(t11).coeffs.is_empty());
        assert_eq!(e(3).coeff(s11), ratio(1, 1));
        assert_eq!(e(3).coeff(t12), ratio(8, 1));
        assert_eq!(e(3).constant, -(&one_minus_p / &rb));
        assert_eq!(e(4).coeff(s12), ratio(2, 1));
        assert_eq!(e(4).coeff(t12), ratio(-2, 1));
        assert_eq!(e(4).coeff(t13), ratio(4, 1));
        assert_eq!(e(5).coeff(s13), ratio(1, 1));
        assert_eq!(e(5).coeff(t13), ratio(-1, 1));
    }

    #[test]
    fn objective_ordering_holds() {
        let gen = DistortionModel::rational([0.1, -0.2, 0.05, -0.1, 0.02, 0.01]);
        let cs = synthesize(&gen, 200, 1.0, 2e-3, 11);
        let cost = assemble_cost(&cs).unwrap();
        let poly = solve_unconstrained(&cost, ModelKind::Polynomial).unwrap();
        let div = solve_unconstrained(&cost, ModelKind::Division).unwrap();
        let rat = solve_unconstrained(&cost, ModelKind::Rational).unwrap();
        assert!(solve_barrel(&cost, &barrel_cfg()).unwrap().objective >= poly.objective - 1e-7);
        assert!(solve_zero_crossing(&cost, &zc_cfg(0.1)).unwrap().objective >= rat.objective - 1e-7);
        if let Ok(pin) = solve_pincushion(&cost, &pin_cfg()) {
            assert!(pin.objective >= div.objective - 1e-7);
        }
    }

    #[test]
    fn residuals_are_covariant_under_radius_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = 2.5;
        for _ in 0..20 {
            let c = Correspondence::new(
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            );
            let k: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
            let scaled_c = Correspondence::new(
                (c.ideal.0 * s, c.ideal.1 * s),
                (c.observed.0 * s, c.observed.1 * s),
            );
            let deg = [1, 2, 3, 1, 2, 3];
            let scaled_k: [f64; 6] = std::array::from_fn(|i| k[i] * s.powi(-deg[i]));
            let res = |c: &Correspondence, k: &[f64; 6]| {
                let (a, b) = build_rows(c);
                a * SMatrix::<f64, 6, 1>::from_column_slice(k) - b
            };
            let diff = res(&scaled_c, &scaled_k) - res(&c, &k) * s;
            assert!(diff.amax() < 1e-8);
        }
    }
}
