//! Gram-matrix representations and interval nonnegativity certificates.
//!
//! A univariate polynomial `p` of degree `2n` is nonnegative on `[a, b]` when
//! `p(x) = s(x) + (x - a)(b - x) t(x)` with `s = psi_n' S psi_n`,
//! `t = psi_{n-1}' T psi_{n-1}` and `S, T` positive semidefinite. For degree
//! `2n + 1` the form is `p(x) = (x - a) s(x) + (b - x) t(x)` with both Gram
//! matrices over `psi_n`. Only the sufficient direction is used here: PSD
//! Gram matrices certify nonnegativity.
//!
//! The symbolic side ([`CertificateLayout`], [`match_coefficients`]) produces
//! the coefficient-matching equalities that tie a target polynomial (whose
//! coefficients depend on decision variables) to fresh certificate variables.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Monomial, ParamPoly, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("target degree {target} does not match certificate degree {budget}")]
    DegreeMismatch { target: usize, budget: usize },
    #[error("equality {index} is not affine in the decision variables")]
    NonAffine { index: usize },
    #[error("variable {var} cannot be solved for from the equality system")]
    Underdetermined { var: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Symmetric matrix stored by its upper triangle, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    size: usize,
    upper: Vec<f64>,
}

fn upper_index(size: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * size - i * (i + 1) / 2 + j
}

impl GramMatrix {
    pub fn zeros(size: usize) -> Self {
        GramMatrix {
            size,
            upper: vec![0.0; size * (size + 1) / 2],
        }
    }

    /// Reads the upper triangle of `m`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "Gram matrix must be square");
        let size = m.nrows();
        let mut g = GramMatrix::zeros(size);
        for i in 0..size {
            for j in i..size {
                g.set(i, j, m[(i, j)]);
            }
        }
        g
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j]);
        Self::from_matrix(&m)
    }

    pub fn identity(size: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(size, size))
    }

    /// Matrix size `n' = n + 1` for basis order `n`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Order `n` of the basis `psi_n`; `None` for the empty matrix.
    pub fn basis_order(&self) -> Option<usize> {
        self.size.checked_sub(1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[upper_index(self.size, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = upper_index(self.size, i, j);
        self.upper[idx] = v;
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| self.get(i, j))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.size == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_matrix()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// PSD within `-1e-9 * (1 + largest eigenvalue)`.
    pub fn is_psd(&self) -> bool {
        let ev = self.eigenvalues();
        match (ev.first(), ev.last()) {
            (Some(&lo), Some(&hi)) => lo >= -1e-9 * (1.0 + hi.max(0.0)),
            _ => true,
        }
    }
}

/// `q(x) = psi_n(x)' Q psi_n(x)`: the coefficient of `x^k` is the sum of
/// `Q_ij` over `i + j = k`.
pub fn gram_to_poly(q: &GramMatrix) -> Polynomial {
    if q.size == 0 {
        return Polynomial::zero(1);
    }
    let mut c = vec![0.0; 2 * q.size - 1];
    for i in 0..q.size {
        for j in 0..q.size {
            c[i + j] += q.get(i, j);
        }
    }
    Polynomial::univariate(&c)
}

/// Numeric interval certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub parity: Parity,
    pub s: GramMatrix,
    pub t: GramMatrix,
}

impl IntervalCertificate {
    pub fn new(alpha: f64, beta: f64, parity: Parity, s: GramMatrix, t: GramMatrix) -> Self {
        assert!(alpha < beta, "certificate interval must satisfy alpha < beta");
        match parity {
            Parity::Even => assert_eq!(t.size() + 1, s.size(), "even certificate needs deg T = deg S - 1"),
            Parity::Odd => assert_eq!(t.size(), s.size(), "odd certificate needs equal basis orders"),
        }
        IntervalCertificate {
            alpha,
            beta,
            parity,
            s,
            t,
        }
    }

    /// Degree of the certified polynomial.
    pub fn degree(&self) -> usize {
        degree_budget(self.parity, self.s.size())
    }

    pub fn is_psd(&self) -> bool {
        self.s.is_psd() && self.t.is_psd()
    }
}

fn degree_budget(parity: Parity, s_size: usize) -> usize {
    let n = s_size.saturating_sub(1);
    match parity {
        Parity::Even => 2 * n,
        Parity::Odd => 2 * n + 1,
    }
}

/// Parity and Gram sizes `(|S|, |T|)` for a target of the given degree.
pub fn layout_for_degree(degree: usize) -> (Parity, usize, usize) {
    if degree % 2 == 0 {
        let n = degree / 2;
        (Parity::Even, n + 1, n)
    } else {
        let n = (degree - 1) / 2;
        (Parity::Odd, n + 1, n + 1)
    }
}

/// Expands the certificate into the polynomial it certifies.
pub fn certificate_to_poly(c: &IntervalCertificate) -> Polynomial {
    let s = gram_to_poly(&c.s);
    let t = gram_to_poly(&c.t);
    match c.parity {
        Parity::Even => {
            // (x - a)(b - x) = -ab + (a + b) x - x^2
            let w = Polynomial::univariate(&[-c.alpha * c.beta, c.alpha + c.beta, -1.0]);
            &s + &(&w * &t)
        }
        Parity::Odd => {
            let left = Polynomial::univariate(&[-c.alpha, 1.0]);
            let right = Polynomial::univariate(&[c.beta, -1.0]);
            &(&left * &s) + &(&right * &t)
        }
    }
}

/// Gram matrix whose entries are polynomials in decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicGram {
    size: usize,
    upper: Vec<Polynomial>,
}

impl SymbolicGram {
    pub fn new(size: usize, upper: Vec<Polynomial>) -> Self {
        assert_eq!(upper.len(), size * (size + 1) / 2);
        SymbolicGram { size, upper }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.upper[upper_index(self.size, i, j)]
    }

    /// `psi_n' S psi_n` with symbolic coefficients.
    pub fn expand(&self, nvars: usize) -> ParamPoly {
        if self.size == 0 {
            return ParamPoly::zero(nvars);
        }
        let mut c = vec![Polynomial::zero(nvars); 2 * self.size - 1];
        for i in 0..self.size {
            for j in 0..self.size {
                c[i + j] = &c[i + j] + self.get(i, j);
            }
        }
        ParamPoly::new(nvars, c)
    }
}

/// Symbolic counterpart of [`IntervalCertificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub parity: Parity,
    pub s: SymbolicGram,
    pub t: SymbolicGram,
}

impl SymbolicCertificate {
    pub fn degree(&self) -> usize {
        degree_budget(self.parity, self.s.size())
    }

    /// The certified polynomial with symbolic coefficients.
    pub fn expand(&self, nvars: usize) -> ParamPoly {
        let s = self.s.expand(nvars);
        let t = self.t.expand(nvars);
        let (a, b) = (self.alpha, self.beta);
        match self.parity {
            Parity::Even => {
                let w = ParamPoly::from_numeric(nvars, &[-a * b, a + b, -1.0]);
                s.add(&w.mul(&t))
            }
            Parity::Odd => {
                let left = ParamPoly::from_numeric(nvars, &[-a, 1.0]);
                let right = ParamPoly::from_numeric(nvars, &[b, -1.0]);
                left.mul(&s).add(&right.mul(&t))
            }
        }
    }
}

/// Decision-variable indices backing the entries of a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateLayout {
    pub alpha: f64,
    pub beta: f64,
    pub parity: Parity,
    pub s_size: usize,
    pub t_size: usize,
    /// Upper-triangle variable indices of `S`, then of `T`.
    pub s_vars: Vec<usize>,
    pub t_vars: Vec<usize>,
}

impl CertificateLayout {
    /// Allocates fresh variables starting at `*next_var` for a certificate of
    /// a degree-`degree` polynomial on `[alpha, beta]`.
    pub fn for_degree(degree: usize, alpha: f64, beta: f64, next_var: &mut usize) -> Self {
        let (parity, s_size, t_size) = layout_for_degree(degree);
        let mut take = |n: usize| {
            let v: Vec<usize> = (*next_var..*next_var + n).collect();
            *next_var += n;
            v
        };
        let s_vars = take(s_size * (s_size + 1) / 2);
        let t_vars = take(t_size * (t_size + 1) / 2);
        CertificateLayout {
            alpha,
            beta,
            parity,
            s_size,
            t_size,
            s_vars,
            t_vars,
        }
    }

    pub fn symbolic(&self, nvars: usize) -> SymbolicCertificate {
        let gram = |size: usize, vars: &[usize]| {
            SymbolicGram::new(size, vars.iter().map(|&v| Polynomial::var(nvars, v)).collect())
        };
        SymbolicCertificate {
            alpha: self.alpha,
            beta: self.beta,
            parity: self.parity,
            s: gram(self.s_size, &self.s_vars),
            t: gram(self.t_size, &self.t_vars),
        }
    }

    /// Reads the certificate from a numeric decision vector.
    pub fn numeric(&self, z: &[f64]) -> IntervalCertificate {
        let gram = |size: usize, vars: &[usize]| GramMatrix {
            size,
            upper: vars.iter().map(|&v| z[v]).collect(),
        };
        IntervalCertificate {
            alpha: self.alpha,
            beta: self.beta,
            parity: self.parity,
            s: gram(self.s_size, &self.s_vars),
            t: gram(self.t_size, &self.t_vars),
        }
    }
}

fn is_identically_zero(p: &ParamPoly) -> bool {
    p.coeffs().iter().all(Polynomial::is_zero)
}

/// One equality `target_k - cert_k = 0` per coefficient `k = 0..=deg`.
///
/// The target's declared degree must equal the certificate's degree budget,
/// except that the zero polynomial matches any certificate.
pub fn match_coefficients(
    target: &ParamPoly,
    cert: &SymbolicCertificate,
) -> Result<Vec<Polynomial>, CertError> {
    let budget = cert.degree();
    if target.degree() != budget && !is_identically_zero(target) {
        return Err(CertError::DegreeMismatch {
            target: target.degree(),
            budget,
        });
    }
    let nvars = target.nvars();
    let expanded = cert.expand(nvars);
    Ok((0..=budget)
        .map(|k| &target.coeff(k) - &expanded.coeff(k))
        .collect())
}

/// Scalar field used by [`eliminate`].
pub trait Field:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Magnitude used for pivot selection.
    fn magnitude(&self) -> f64;
    fn negligible(&self) -> bool;
}

impl Field for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn negligible(&self) -> bool {
        self.abs() < 1e-12
    }
}

impl Field for BigRational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite coefficient")
    }
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::MAX)
    }
    fn negligible(&self) -> bool {
        self.is_zero()
    }
}

/// Exact rational from an integer numerator and denominator.
pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Affine expression `constant + sum coeffs[v] * z_v` over a field.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr<F> {
    pub coeffs: BTreeMap<usize, F>,
    pub constant: F,
}

impl<F: Field> AffineExpr<F> {
    pub fn coeff(&self, v: usize) -> F {
        self.coeffs.get(&v).cloned().unwrap_or_else(F::zero)
    }

    /// Builds an expression from `(var, coeff)` pairs, dropping zeros.
    pub fn from_terms(terms: impl IntoIterator<Item = (usize, F)>, constant: F) -> Self {
        let mut coeffs = BTreeMap::new();
        for (v, c) in terms {
            let e = coeffs.entry(v).or_insert_with(F::zero);
            *e = e.clone() + c;
        }
        coeffs.retain(|_, c: &mut F| !c.negligible());
        AffineExpr { coeffs, constant }
    }
}

impl AffineExpr<f64> {
    pub fn to_polynomial(&self, nvars: usize) -> Polynomial {
        Polynomial::affine(
            nvars,
            &self.coeffs.iter().map(|(&v, &c)| (v, c)).collect::<Vec<_>>(),
            self.constant,
        )
    }
}

/// Result of solving an affine equality system for selected variables.
#[derive(Debug, Clone)]
pub struct Elimination<F> {
    /// `(var, expression)` with the expression in the unsolved variables.
    pub solved: Vec<(usize, AffineExpr<F>)>,
    /// Leftover equalities among the unsolved variables (`expr = 0`).
    pub residual: Vec<AffineExpr<F>>,
}

impl<F: Field> Elimination<F> {
    pub fn expr(&self, var: usize) -> Option<&AffineExpr<F>> {
        self.solved.iter().find(|(v, _)| *v == var).map(|(_, e)| e)
    }
}

/// Gauss-Jordan elimination of affine equalities `eq_i(z) = 0`, solving for
/// `solve_for` in terms of the remaining variables.
pub fn eliminate<F: Field>(
    equalities: &[Polynomial],
    solve_for: &[usize],
) -> Result<Elimination<F>, CertError> {
    let mut rows: Vec<AffineExpr<F>> = Vec::with_capacity(equalities.len());
    for (i, eq) in equalities.iter().enumerate() {
        if eq.degree() > 1 {
            return Err(CertError::NonAffine { index: i });
        }
        let dim = eq.dim();
        let terms = eq
            .terms()
            .into_iter()
            .filter(|(m, _)| !m.is_constant())
            .map(|(m, c)| {
                let v = m.exponents().iter().position(|&e| e == 1).expect("linear term");
                (v, F::from_f64(c))
            })
            .collect::<Vec<_>>();
        let constant = F::from_f64(eq.coeff(&Monomial::one(dim)));
        rows.push(AffineExpr::from_terms(terms, constant));
    }

    let mut pivot_row_of: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; rows.len()];
    for &var in solve_for {
        let candidate = rows
            .iter()
            .enumerate()
            .filter(|(i, r)| !used[*i] && !r.coeff(var).negligible())
            .max_by(|a, b| a.1.coeff(var).magnitude().total_cmp(&b.1.coeff(var).magnitude()))
            .map(|(i, _)| i);
        let Some(p) = candidate else {
            return Err(CertError::Underdetermined { var });
        };
        used[p] = true;
        let inv = F::one() / rows[p].coeff(var);
        let pivot = scale_expr(&rows[p], &inv);
        rows[p] = pivot.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == p {
                continue;
            }
            let f = row.coeff(var);
            if f.negligible() {
                continue;
            }
            *row = axpy(row, &-f, &pivot);
            row.coeffs.remove(&var);
        }
        pivot_row_of.push((var, p));
    }

    let solved = pivot_row_of
        .iter()
        .map(|&(var, p)| {
            // var + rest = 0  =>  var = -rest
            let row = &rows[p];
            let expr = AffineExpr::from_terms(
                row.coeffs
                    .iter()
                    .filter(|(v, _)| **v != var)
                    .map(|(&v, c)| (v, -c.clone())),
                -row.constant.clone(),
            );
            (var, expr)
        })
        .collect();
    let residual = rows
        .into_iter()
        .enumerate()
        .filter(|(i, r)| !used[*i] && !(r.coeffs.is_empty() && r.constant.negligible()))
        .map(|(_, r)| r)
        .collect();
    Ok(Elimination { solved, residual })
}

fn scale_expr<F: Field>(e: &AffineExpr<F>, s: &F) -> AffineExpr<F> {
    AffineExpr::from_terms(
        e.coeffs.iter().map(|(&v, c)| (v, c.clone() * s.clone())),
        e.constant.clone() * s.clone(),
    )
}

fn axpy<F: Field>(y: &AffineExpr<F>, a: &F, x: &AffineExpr<F>) -> AffineExpr<F> {
    AffineExpr::from_terms(
        y.coeffs
            .iter()
            .map(|(&v, c)| (v, c.clone()))
            .chain(x.coeffs.iter().map(|(&v, c)| (v, a.clone() * c.clone()))),
        y.constant.clone() + a.clone() * x.constant.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, size: usize) -> GramMatrix {
        let g = DMatrix::from_fn(size, size, |_, _| rng.random_range(-1.0..1.0));
        GramMatrix::from_matrix(&(&g * g.transpose()))
    }

    #[test]
    fn gram_to_poly_examples() {
        let q = GramMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(gram_to_poly(&q).coeffs().unwrap(), &[0.0, 0.0, 1.0]);
        assert_eq!(gram_to_poly(&GramMatrix::identity(2)).coeffs().unwrap(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn gram_to_poly_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let q = GramMatrix::from_matrix(&(&m + m.transpose()));
        let p = gram_to_poly(&q);
        let full = q.to_matrix();
        for _ in 0..10 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let psi = nalgebra::DVector::from_fn(4, |i, _| x.powi(i as i32));
            let direct = psi.dot(&(&full * &psi));
            assert!((p.eval1(x) - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn gram_to_poly_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_psd(&mut rng, 3).to_matrix();
        let b = random_psd(&mut rng, 3).to_matrix();
        let (sa, sb) = (0.7, -1.3);
        let lhs = gram_to_poly(&GramMatrix::from_matrix(&(&a * sa + &b * sb)));
        let rhs = &gram_to_poly(&GramMatrix::from_matrix(&a)).scale(sa)
            + &gram_to_poly(&GramMatrix::from_matrix(&b)).scale(sb);
        assert!(lhs.max_coeff_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn certificate_examples() {
        let even = IntervalCertificate::new(
            0.0,
            1.0,
            Parity::Even,
            GramMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]),
            GramMatrix::zeros(1),
        );
        assert_eq!(certificate_to_poly(&even).coeffs().unwrap(), &[1.0]);
        let odd = IntervalCertificate::new(
            0.0,
            1.0,
            Parity::Odd,
            GramMatrix::identity(1),
            GramMatrix::identity(1),
        );
        assert_eq!(certificate_to_poly(&odd).coeffs().unwrap(), &[1.0]);
    }

    #[test]
    fn random_certificates_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..200 {
            let parity = if trial % 2 == 0 { Parity::Even } else { Parity::Odd };
            let s_size = rng.random_range(1..4);
            let t_size = match parity {
                Parity::Even => s_size - 1,
                Parity::Odd => s_size,
            };
            let c = IntervalCertificate::new(
                0.0,
                4.0,
                parity,
                random_psd(&mut rng, s_size),
                random_psd(&mut rng, t_size),
            );
            assert!(c.is_psd());
            let p = certificate_to_poly(&c);
            let min = (0..=1000)
                .map(|i| p.eval1(4.0 * i as f64 / 1000.0))
                .fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8, "trial {trial}: min {min}");
        }
    }

    #[test]
    fn layout_sizes_follow_parity() {
        assert_eq!(layout_for_degree(0), (Parity::Even, 1, 0));
        assert_eq!(layout_for_degree(1), (Parity::Odd, 1, 1));
        assert_eq!(layout_for_degree(2), (Parity::Even, 2, 1));
        assert_eq!(layout_for_degree(3), (Parity::Odd, 2, 2));
        assert_eq!(layout_for_degree(4), (Parity::Even, 3, 2));
    }

    // Variables: k1 k2 k3 | s11 s12 s13 | t11
    fn barrel_first_derivative(rbar: f64) -> (Vec<Polynomial>, usize) {
        let mut next = 3;
        let layout = CertificateLayout::for_degree(2, 0.0, rbar, &mut next);
        let n = next;
        let k = |i: usize| Polynomial::var(n, i);
        let target = ParamPoly::new(n, vec![-&k(0), k(1).scale(-2.0), k(2).scale(-3.0)]);
        (match_coefficients(&target, &layout.symbolic(n)).unwrap(), n)
    }

    #[test]
    fn barrel_matching_eliminates_to_closed_form() {
        let rbar = 1.7;
        let (eqs, n) = barrel_first_derivative(rbar);
        assert_eq!(eqs.len(), 3);
        let el = eliminate::<f64>(&eqs, &[0, 1, 2]).unwrap();
        let k = |i| el.expr(i).unwrap().to_polynomial(n);
        let (s11, s12, s13, t11) = (3, 4, 5, 6);
        let expect = |terms: &[(usize, f64)]| Polynomial::affine(n, terms, 0.0);
        assert!(k(0).max_coeff_diff(&expect(&[(s11, -1.0)])) < 1e-15);
        assert!(k(1).max_coeff_diff(&expect(&[(s12, -1.0), (t11, -0.5 * rbar)])) < 1e-15);
        assert!(k(2).max_coeff_diff(&expect(&[(t11, 1.0 / 3.0), (s13, -1.0 / 3.0)])) < 1e-15);
    }

    #[test]
    fn matched_certificate_reproduces_target() {
        // Solve the matching equalities numerically and check the certificate
        // polynomial equals the target coefficient-wise.
        let rbar = 2.0;
        let (eqs, n) = barrel_first_derivative(rbar);
        let el = eliminate::<f64>(&eqs, &[0, 1, 2]).unwrap();
        let mut z = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for v in 3..n {
            z[v] = rng.random_range(-1.0..1.0);
        }
        for (v, e) in &el.solved {
            z[*v] = e.to_polynomial(n).eval(&z).unwrap();
        }
        for eq in &eqs {
            assert!(eq.eval(&z).unwrap().abs() <= 1e-12);
        }
        let mut next = 3;
        let layout = CertificateLayout::for_degree(2, 0.0, rbar, &mut next);
        let cert_poly = certificate_to_poly(&layout.numeric(&z));
        let target = Polynomial::univariate(&[-z[0], -2.0 * z[1], -3.0 * z[2]]);
        assert!(cert_poly.max_coeff_diff(&target) <= 1e-9);
    }

    #[test]
    fn zero_target_forces_zero_coefficient_sums() {
        let mut next = 0;
        let layout = CertificateLayout::for_degree(3, 0.0, 1.0, &mut next);
        let eqs = match_coefficients(&ParamPoly::zero(next), &layout.symbolic(next)).unwrap();
        assert_eq!(eqs.len(), 4);
        let zeros = vec![0.0; next];
        assert!(eqs.iter().all(|e| e.eval(&zeros).unwrap() == 0.0));
    }

    #[test]
    fn degree_mismatch_is_rejected() {
        let mut next = 1;
        let layout = CertificateLayout::for_degree(3, 0.0, 1.0, &mut next);
        let target = ParamPoly::new(next, vec![Polynomial::var(next, 0), Polynomial::constant(next, 1.0)]);
        assert!(matches!(
            match_coefficients(&target, &layout.symbolic(next)),
            Err(CertError::DegreeMismatch { target: 1, budget: 3 })
        ));
    }

    #[test]
    fn exact_elimination_over_rationals() {
        let rbar = 4.0;
        let (eqs, _) = barrel_first_derivative(rbar);
        let el = eliminate::<BigRational>(&eqs, &[0, 1, 2]).unwrap();
        assert_eq!(el.expr(2).unwrap().coeff(6), ratio(1, 3));
        assert_eq!(el.expr(2).unwrap().coeff(5), ratio(-1, 3));
        assert_eq!(el.expr(1).unwrap().coeff(6), ratio(-2, 1));
        assert!(el.residual.is_empty());
    }
}
