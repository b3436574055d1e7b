//! Floating-point polynomial algebra over canonical monomial bases.
//!
//! Univariate polynomials are stored densely (coefficient of `x^k` at index
//! `k`), multivariate ones sparsely keyed by exponent vector. Both expose the
//! same interface. Monomials are ordered graded-lexicographically everywhere:
//! total degree first, then `x1 > x2 > ... > xd` within a degree, so the
//! bivariate basis of order 2 reads `1, x1, x2, x1^2, x1 x2, x2^2`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients with smaller magnitude are dropped on normalization.
pub const PRUNE_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {var} out of range for {dim}-variate polynomial")]
    VariableOutOfRange { var: usize, dim: usize },
}

/// Exponent vector `alpha` of the monomial `x^alpha`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    /// The constant monomial in `dim` variables.
    pub fn one(dim: usize) -> Self {
        Monomial(vec![0; dim])
    }

    /// The monomial `x_var`.
    pub fn var(dim: usize, var: usize) -> Self {
        let mut e = vec![0; dim];
        e[var] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Product of two monomials (exponent addition).
    pub fn times(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.dim(), other.dim());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

/// Canonical basis `psi_n(x)` of all monomials in `dim` variables with total
/// degree at most `order`, graded-lex sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    dim: usize,
    order: u32,
    monomials: Vec<Monomial>,
}

impl Basis {
    pub fn new(dim: usize, order: u32) -> Self {
        assert!(dim >= 1, "basis needs at least one variable");
        let mut monomials = Vec::with_capacity(binomial(dim + order as usize, dim));
        for deg in 0..=order {
            let mut exps = vec![0u32; dim];
            push_compositions(&mut monomials, &mut exps, 0, deg);
        }
        Basis {
            dim,
            order,
            monomials,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn position(&self, m: &Monomial) -> Option<usize> {
        self.monomials.binary_search(m).ok()
    }

    /// Evaluates every basis monomial at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.monomials.iter().map(|m| m.eval(x)).collect()
    }
}

/// Shorthand for [`Basis::new`].
pub fn basis(dim: usize, order: u32) -> Basis {
    Basis::new(dim, order)
}

// Enumerates exponent vectors of exactly `remaining` total degree in
// descending lexicographic order, which is the graded-lex order within a degree.
fn push_compositions(out: &mut Vec<Monomial>, exps: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == exps.len() {
        exps[pos] = remaining;
        out.push(Monomial(exps.to_vec()));
        exps[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        push_compositions(out, exps, pos + 1, remaining - e);
    }
    exps[pos] = 0;
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

#[derive(Clone, PartialEq)]
enum Repr {
    Dense(Vec<f64>),
    Sparse(BTreeMap<Monomial, f64>),
}

/// Real polynomial in `dim` variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    repr: Repr,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1, "polynomials need at least one variable");
        let repr = if dim == 1 {
            Repr::Dense(Vec::new())
        } else {
            Repr::Sparse(BTreeMap::new())
        };
        Polynomial { dim, repr }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_terms(dim, [(Monomial::one(dim), c)])
    }

    /// The polynomial `x_var`.
    pub fn var(dim: usize, var: usize) -> Self {
        Self::from_terms(dim, [(Monomial::var(dim, var), 1.0)])
    }

    /// `constant + sum coef * x_var`.
    pub fn affine(dim: usize, terms: &[(usize, f64)], constant: f64) -> Self {
        Self::from_terms(
            dim,
            terms
                .iter()
                .map(|&(v, c)| (Monomial::var(dim, v), c))
                .chain(std::iter::once((Monomial::one(dim), constant))),
        )
    }

    /// Univariate polynomial from coefficients in ascending powers.
    pub fn univariate(coeffs: &[f64]) -> Self {
        let mut p = Polynomial {
            dim: 1,
            repr: Repr::Dense(coeffs.to_vec()),
        };
        p.normalize();
        p
    }

    /// Builds a polynomial summing repeated monomials.
    pub fn from_terms<I>(dim: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial::zero(dim);
        for (m, c) in terms {
            assert_eq!(m.dim(), dim, "monomial dimension mismatch");
            p.add_term(&m, c);
        }
        p.normalize();
        p
    }

    fn add_term(&mut self, m: &Monomial, c: f64) {
        match &mut self.repr {
            Repr::Dense(v) => {
                let k = m.0[0] as usize;
                if v.len() <= k {
                    v.resize(k + 1, 0.0);
                }
                v[k] += c;
            }
            Repr::Sparse(map) => {
                *map.entry(m.clone()).or_insert(0.0) += c;
            }
        }
    }

    fn normalize(&mut self) {
        match &mut self.repr {
            Repr::Dense(v) => {
                for c in v.iter_mut() {
                    if c.abs() < PRUNE_TOL {
                        *c = 0.0;
                    }
                }
                while v.last() == Some(&0.0) {
                    v.pop();
                }
            }
            Repr::Sparse(map) => map.retain(|_, c| c.abs() >= PRUNE_TOL),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        match &self.repr {
            Repr::Dense(v) => v.is_empty(),
            Repr::Sparse(map) => map.is_empty(),
        }
    }

    /// Maximum total degree over stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        match &self.repr {
            Repr::Dense(v) => v.len().saturating_sub(1) as u32,
            Repr::Sparse(map) => map.keys().map(Monomial::degree).max().unwrap_or(0),
        }
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        match &self.repr {
            Repr::Dense(v) => v.get(m.0[0] as usize).copied().unwrap_or(0.0),
            Repr::Sparse(map) => map.get(m).copied().unwrap_or(0.0),
        }
    }

    /// Constant term.
    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one(self.dim))
    }

    /// Coefficient of `x_var` (linear part).
    pub fn linear_coeff(&self, var: usize) -> f64 {
        self.coeff(&Monomial::var(self.dim, var))
    }

    /// Ascending coefficients of a univariate polynomial.
    pub fn coeffs(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Dense(v) => Some(v),
            Repr::Sparse(_) => None,
        }
    }

    /// Stored terms in graded-lex order.
    pub fn terms(&self) -> Vec<(Monomial, f64)> {
        match &self.repr {
            Repr::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(k, &c)| (Monomial(vec![k as u32]), c))
                .collect(),
            Repr::Sparse(map) => map.iter().map(|(m, &c)| (m.clone(), c)).collect(),
        }
    }

    /// Variables that occur with a nonzero exponent in some term.
    pub fn variables(&self) -> Vec<usize> {
        let mut used = vec![false; self.dim];
        for (m, _) in self.terms() {
            for (i, &e) in m.exponents().iter().enumerate() {
                if e > 0 {
                    used[i] = true;
                }
            }
        }
        (0..self.dim).filter(|&i| used[i]).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(match &self.repr {
            Repr::Dense(v) => v.iter().rev().fold(0.0, |acc, &c| acc * x[0] + c),
            Repr::Sparse(map) => map.iter().map(|(m, &c)| c * m.eval(x)).sum(),
        })
    }

    /// Univariate evaluation shortcut; panics on multivariate input.
    pub fn eval1(&self, x: f64) -> f64 {
        assert_eq!(self.dim, 1, "eval1 on a multivariate polynomial");
        self.eval(&[x]).expect("univariate")
    }

    pub fn derivative(&self, var: usize) -> Result<Polynomial, PolyError> {
        if var >= self.dim {
            return Err(PolyError::VariableOutOfRange { var, dim: self.dim });
        }
        let mut out = match &self.repr {
            Repr::Dense(v) => Polynomial {
                dim: 1,
                repr: Repr::Dense(
                    v.iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, &c)| k as f64 * c)
                        .collect(),
                ),
            },
            Repr::Sparse(map) => {
                let mut out = Polynomial::zero(self.dim);
                for (m, &c) in map {
                    let e = m.0[var];
                    if e == 0 {
                        continue;
                    }
                    let mut d = m.clone();
                    d.0[var] -= 1;
                    out.add_term(&d, c * e as f64);
                }
                out
            }
        };
        out.normalize();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        match &mut out.repr {
            Repr::Dense(v) => v.iter_mut().for_each(|c| *c *= s),
            Repr::Sparse(map) => map.values_mut().for_each(|c| *c *= s),
        }
        out.normalize();
        out
    }

    fn check_dim(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(&m, c);
        }
        out.normalize();
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut out = match (&self.repr, &other.repr) {
            (Repr::Dense(a), Repr::Dense(b)) => {
                if a.is_empty() || b.is_empty() {
                    return Ok(Polynomial::zero(1));
                }
                let mut v = vec![0.0; a.len() + b.len() - 1];
                for (i, &ai) in a.iter().enumerate() {
                    for (j, &bj) in b.iter().enumerate() {
                        v[i + j] += ai * bj;
                    }
                }
                Polynomial {
                    dim: 1,
                    repr: Repr::Dense(v),
                }
            }
            _ => {
                let mut out = Polynomial::zero(self.dim);
                let rhs = other.terms();
                for (ma, ca) in self.terms() {
                    for (mb, cb) in &rhs {
                        out.add_term(&ma.times(mb), ca * cb);
                    }
                }
                out
            }
        };
        out.normalize();
        Ok(out)
    }

    /// Multiplies by the monomial `x^m`.
    pub fn shift(&self, m: &Monomial) -> Polynomial {
        Polynomial::from_terms(self.dim, self.terms().into_iter().map(|(t, c)| (t.times(m), c)))
    }

    /// Largest coefficient magnitude of `self - other`.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        (self - other)
            .terms()
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
    }
}

/// Smallest value of `c[0] + c[1] x + c[2] x^2 + ...` on `[a, b]`, taken over
/// the endpoints and the real critical points (companion eigenvalues,
/// polished by Newton steps).
pub fn min_on_interval(c: &[f64], a: f64, b: f64) -> f64 {
    let eval = |x: f64| c.iter().rev().fold(0.0, |acc, &v| acc * x + v);
    let d: Vec<f64> = c.iter().enumerate().skip(1).map(|(i, &v)| i as f64 * v).collect();
    let d2: Vec<f64> = d.iter().enumerate().skip(1).map(|(i, &v)| i as f64 * v).collect();
    let deval = |p: &[f64], x: f64| p.iter().rev().fold(0.0, |acc, &v| acc * x + v);
    let mut best = eval(a).min(eval(b));
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let Some(top) = d.iter().rposition(|v| v.abs() > 1e-14 * scale) else {
        return best;
    };
    let mut critical = Vec::new();
    if top == 1 {
        critical.push(-d[0] / d[1]);
    } else if top > 1 {
        let n = top;
        let comp = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -d[n - 1 - j] / d[n]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        for z in comp.complex_eigenvalues().iter() {
            if z.im.abs() <= 1e-7 * (1.0 + z.re.abs()) {
                critical.push(z.re);
            }
        }
    }
    for mut x in critical {
        for _ in 0..3 {
            let h = deval(&d2, x);
            if h != 0.0 {
                x -= deval(&d, x) / h;
            }
        }
        if x > a && x < b {
            best = best.min(eval(x));
        }
    }
    best
}

/// Shorthand for [`Polynomial::try_mul`].
pub fn mul(p: &Polynomial, q: &Polynomial) -> Result<Polynomial, PolyError> {
    p.try_mul(q)
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self.terms();
        if terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}*{m:?}")?;
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial addition")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&rhs.scale(-1.0)).expect("polynomial subtraction")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial multiplication")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Univariate polynomial in `r` whose coefficients are polynomials in a set
/// of decision variables: `p(r) = sum_k c_k(z) r^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPoly {
    nvars: usize,
    coeffs: Vec<Polynomial>,
}

impl ParamPoly {
    pub fn new(nvars: usize, coeffs: Vec<Polynomial>) -> Self {
        assert!(coeffs.iter().all(|c| c.dim() == nvars));
        ParamPoly { nvars, coeffs }
    }

    pub fn zero(nvars: usize) -> Self {
        ParamPoly {
            nvars,
            coeffs: Vec::new(),
        }
    }

    /// Lifts a numeric univariate polynomial.
    pub fn from_numeric(nvars: usize, p: &[f64]) -> Self {
        ParamPoly {
            nvars,
            coeffs: p.iter().map(|&c| Polynomial::constant(nvars, c)).collect(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn coeffs(&self) -> &[Polynomial] {
        &self.coeffs
    }

    /// Declared degree in `r` (length of the coefficient list minus one).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn coeff(&self, k: usize) -> Polynomial {
        self.coeffs
            .get(k)
            .cloned()
            .unwrap_or_else(|| Polynomial::zero(self.nvars))
    }

    pub fn derivative(&self) -> ParamPoly {
        ParamPoly {
            nvars: self.nvars,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c.scale(k as f64))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> ParamPoly {
        ParamPoly {
            nvars: self.nvars,
            coeffs: self.coeffs.iter().map(|c| c.scale(s)).collect(),
        }
    }

    pub fn add(&self, other: &ParamPoly) -> ParamPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        ParamPoly {
            nvars: self.nvars,
            coeffs: (0..n).map(|k| &self.coeff(k) + &other.coeff(k)).collect(),
        }
    }

    pub fn sub(&self, other: &ParamPoly) -> ParamPoly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &ParamPoly) -> ParamPoly {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return ParamPoly::zero(self.nvars);
        }
        let mut out = vec![Polynomial::zero(self.nvars); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] = &out[i + j] + &(a * b);
            }
        }
        ParamPoly {
            nvars: self.nvars,
            coeffs: out,
        }
    }

    /// Substitutes numeric decision variables, yielding a univariate polynomial.
    pub fn at(&self, z: &[f64]) -> Result<Polynomial, PolyError> {
        let c = self
            .coeffs
            .iter()
            .map(|c| c.eval(z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Polynomial::univariate(&c))
    }
}

/// Affine form `sum_alpha c_alpha y_alpha + constant` over moment variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm {
    pub coeffs: BTreeMap<Monomial, f64>,
    pub constant: f64,
}

impl LinearForm {
    pub fn add(&self, other: &LinearForm) -> LinearForm {
        let mut out = self.clone();
        for (m, c) in &other.coeffs {
            *out.coeffs.entry(m.clone()).or_insert(0.0) += c;
        }
        out.constant += other.constant;
        out
    }

    pub fn scale(&self, s: f64) -> LinearForm {
        LinearForm {
            coeffs: self.coeffs.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// Evaluates the form at a moment assignment.
    pub fn eval(&self, y: impl Fn(&Monomial) -> f64) -> f64 {
        self.constant + self.coeffs.iter().map(|(m, c)| c * y(m)).sum::<f64>()
    }
}

/// Riesz linearization: every monomial `x^alpha` becomes the moment `y_alpha`.
/// The constant monomial maps to `y_0`, not to the constant of the form.
pub fn riesz(p: &Polynomial) -> LinearForm {
    LinearForm {
        coeffs: p.terms().into_iter().collect(),
        constant: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(rng: &mut ChaCha8Rng, dim: usize, deg: u32) -> Polynomial {
        Polynomial::from_terms(
            dim,
            basis(dim, deg)
                .monomials()
                .iter()
                .map(|m| (m.clone(), rng.random_range(-2.0..2.0)))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn univariate_basis() {
        let b = basis(1, 3);
        let exps: Vec<_> = b.monomials().iter().map(|m| m.exponents()[0]).collect();
        assert_eq!(exps, vec![0, 1, 2, 3]);
        assert_eq!(basis(2, 2).len(), 6);
        assert_eq!(basis(3, 2).len(), 10);
    }

    #[test]
    fn basis_sizes_match_binomials() {
        for d in 1..=4 {
            for n in 0..=6 {
                let b = basis(d, n);
                assert_eq!(b.len(), binomial(d + n as usize, d), "d={d} n={n}");
                assert!(b.monomials()[0].is_constant());
                assert!(b.monomials().windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn graded_lex_bivariate() {
        let b = basis(2, 2);
        let exps: Vec<_> = b.monomials().iter().map(|m| m.exponents().to_vec()).collect();
        assert_eq!(
            exps,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }

    #[test]
    fn eval_examples() {
        let p = Polynomial::univariate(&[1.0, 2.0, 3.0]);
        assert_eq!(p.eval(&[0.0]).unwrap(), 1.0);
        let q = Polynomial::from_terms(2, [(Monomial::new(vec![1, 1]), 1.0)]);
        assert_eq!(q.eval(&[2.0, 3.0]).unwrap(), 6.0);
        assert!(matches!(
            q.eval(&[1.0]),
            Err(PolyError::DimensionMismatch { .. })
        ));
        assert_eq!(Polynomial::zero(3).eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn eval_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = Polynomial::univariate(&c);
        let x: f64 = 0.37;
        let naive: f64 = c.iter().enumerate().map(|(k, ck)| ck * x.powi(k as i32)).sum();
        assert!((p.eval1(x) - naive).abs() <= 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let (k1, k2, k3) = (0.3, -0.2, 0.7);
        let f = Polynomial::univariate(&[1.0, k1, k2, k3]);
        let df = f.derivative(0).unwrap();
        assert_eq!(df.coeffs().unwrap(), &[k1, 2.0 * k2, 3.0 * k3]);
        assert!(Polynomial::constant(2, 5.0).derivative(1).unwrap().is_zero());
        assert!(f.derivative(1).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_poly(&mut rng, 1, 5);
        let d2 = f.derivative(0).unwrap().derivative(0).unwrap();
        let h = 1e-5;
        let df = f.derivative(0).unwrap();
        for _ in 0..10 {
            let x = rng.random_range(0.2..1.5);
            // central differences of the first derivative
            let fd = (df.eval1(x + h) - df.eval1(x - h)) / (2.0 * h);
            let exact = d2.eval1(x);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn multivariate_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_poly(&mut rng, 3, 4);
        let h = 1e-5;
        for var in 0..3 {
            let dp = p.derivative(var).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[var] += h;
            xm[var] -= h;
            let fd = (p.eval(&xp).unwrap() - p.eval(&xm).unwrap()) / (2.0 * h);
            let exact = dp.eval(&x).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn mul_examples() {
        let a = Polynomial::univariate(&[1.0, 1.0]);
        let b = Polynomial::univariate(&[1.0, -1.0]);
        assert_eq!((&a * &b).coeffs().unwrap(), &[1.0, 0.0, -1.0]);
        assert!((&a * &Polynomial::zero(1)).is_zero());
        assert!(a.try_mul(&Polynomial::zero(2)).is_err());
    }

    #[test]
    fn mul_is_evaluation_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dim in [1, 2, 3] {
            let p = random_poly(&mut rng, dim, 3);
            let q = random_poly(&mut rng, dim, 2);
            let pq = &p * &q;
            assert_eq!(pq.degree(), p.degree() + q.degree());
            for _ in 0..20 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let lhs = pq.eval(&x).unwrap();
                let rhs = p.eval(&x).unwrap() * q.eval(&x).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn riesz_examples() {
        let p = Polynomial::univariate(&[3.0, 2.0, -1.0]);
        let l = riesz(&p);
        let m = |k: u32| Monomial::new(vec![k]);
        assert_eq!(l.coeffs.get(&m(0)), Some(&3.0));
        assert_eq!(l.coeffs.get(&m(1)), Some(&2.0));
        assert_eq!(l.coeffs.get(&m(2)), Some(&-1.0));
        assert_eq!(l.constant, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_poly(&mut rng, 2, 2);
        let b = basis(2, 2);
        assert!(riesz(&q).coeffs.keys().all(|m| b.position(m).is_some()));
    }

    #[test]
    fn riesz_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let p = random_poly(&mut rng, 2, 3);
            let q = random_poly(&mut rng, 2, 3);
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = riesz(&(&p.scale(a) + &q.scale(b)));
            let rhs = riesz(&p).scale(a).add(&riesz(&q).scale(b));
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn param_poly_substitution() {
        // g(r) = 1 + k r with k the single decision variable
        let k = Polynomial::var(1, 0);
        let g = ParamPoly::new(1, vec![Polynomial::constant(1, 1.0), k]);
        let g2 = g.mul(&g);
        let at = g2.at(&[0.5]).unwrap();
        assert_eq!(at.coeffs().unwrap(), &[1.0, 1.0, 0.25]);
        assert_eq!(g.derivative().at(&[0.5]).unwrap().coeffs().unwrap(), &[0.5]);
    }

    fn small_poly(dim: usize) -> impl Strategy<Value = Polynomial> {
        let n = basis(dim, 4).len();
        proptest::collection::vec(-3.0f64..3.0, n).prop_map(move |c| {
            Polynomial::from_terms(
                dim,
                basis(dim, 4)
                    .monomials()
                    .iter()
                    .cloned()
                    .zip(c)
                    .collect::<Vec<_>>(),
            )
        })
    }

    proptest! {
        #[test]
        fn mul_commutative_and_associative(p in small_poly(2), q in small_poly(2), r in small_poly(2)) {
            let pq = &p * &q;
            let qp = &q * &p;
            prop_assert!(pq.max_coeff_diff(&qp) <= 1e-12 * 100.0);
            let left = &pq * &r;
            let right = &p * &(&q * &r);
            let scale = left.terms().iter().map(|(_, c)| c.abs()).fold(1.0, f64::max);
            prop_assert!(left.max_coeff_diff(&right) <= 1e-12 * scale);
        }
    }

    #[test]
    fn interval_minimum_matches_dense_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        assert_eq!(min_on_interval(&[1.0, -2.0, 1.0], 0.0, 3.0), 0.0);
        assert_eq!(min_on_interval(&[2.0], -1.0, 1.0), 2.0);
        for _ in 0..200 {
            let deg = rng.random_range(1..=4);
            let c: Vec<f64> = (0..=deg).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = min_on_interval(&c, 0.0, 2.0);
            let scan = (0..=20_000)
                .map(|i| {
                    let x = 2.0 * i as f64 / 20_000.0;
                    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(m <= scan + 1e-12 && m >= scan - 1e-6, "{c:?} {m} {scan}");
        }
    }
}
