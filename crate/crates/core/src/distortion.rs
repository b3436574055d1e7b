//! Rational radial distortion `L(r) = f(r) / g(r)` with
//! `f = 1 + k1 r + k2 r^2 + k3 r^3` and `g = 1 + k4 r + k5 r^2 + k6 r^3`.
//!
//! A point `(x, y)` is distorted to `L(r) (x, y)` with `r` its radius.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

const POLE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistortionError {
    #[error("denominator vanishes at r = {r}")]
    Pole { r: f64 },
    #[error("no undistorted radius in [0, {search_max}] maps to {rhat}")]
    NoRoot { rhat: f64, search_max: f64 },
    #[error("{kind} model must have zero k{index}")]
    KindConstraint { kind: ModelKind, index: usize },
    #[error("model coefficients must be finite")]
    NonFinite,
    #[error("invalid model file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Polynomial,
    Division,
    Rational,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Polynomial => "polynomial",
            ModelKind::Division => "division",
            ModelKind::Rational => "rational",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct DistortionModel {
    kind: ModelKind,
    k: [f64; 6],
}

#[derive(Deserialize)]
struct RawModel {
    kind: ModelKind,
    k: [f64; 6],
}

impl TryFrom<RawModel> for DistortionModel {
    type Error = DistortionError;
    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        DistortionModel::new(raw.kind, raw.k)
    }
}

impl DistortionModel {
    pub fn new(kind: ModelKind, k: [f64; 6]) -> Result<Self, DistortionError> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(DistortionError::NonFinite);
        }
        let zero_range = match kind {
            ModelKind::Polynomial => 3..6,
            ModelKind::Division => 0..3,
            ModelKind::Rational => 0..0,
        };
        if let Some(i) = zero_range.clone().find(|&i| k[i] != 0.0) {
            return Err(DistortionError::KindConstraint { kind, index: i + 1 });
        }
        Ok(DistortionModel { kind, k })
    }

    pub fn identity() -> Self {
        DistortionModel {
            kind: ModelKind::Polynomial,
            k: [0.0; 6],
        }
    }

    pub fn polynomial(k1: f64, k2: f64, k3: f64) -> Self {
        DistortionModel::new(ModelKind::Polynomial, [k1, k2, k3, 0.0, 0.0, 0.0]).expect("finite coefficients")
    }

    pub fn division(k4: f64, k5: f64, k6: f64) -> Self {
        DistortionModel::new(ModelKind::Division, [0.0, 0.0, 0.0, k4, k5, k6]).expect("finite coefficients")
    }

    pub fn rational(k: [f64; 6]) -> Self {
        DistortionModel::new(ModelKind::Rational, k).expect("finite coefficients")
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn k(&self) -> &[f64; 6] {
        &self.k
    }

    pub fn numerator(&self) -> Polynomial {
        Polynomial::univariate(&[1.0, self.k[0], self.k[1], self.k[2]])
    }

    pub fn denominator(&self) -> Polynomial {
        Polynomial::univariate(&[1.0, self.k[3], self.k[4], self.k[5]])
    }

    /// `(f, f', f'')` at `r`.
    fn f_derivs(&self, r: f64) -> (f64, f64, f64) {
        cubic_derivs(self.k[0], self.k[1], self.k[2], r)
    }

    /// `(g, g', g'')` at `r`.
    pub fn g_derivs(&self, r: f64) -> (f64, f64, f64) {
        cubic_derivs(self.k[3], self.k[4], self.k[5], r)
    }

    pub fn g(&self, r: f64) -> f64 {
        self.g_derivs(r).0
    }

    pub fn l(&self, r: f64) -> Result<f64, DistortionError> {
        let (f, _, _) = self.f_derivs(r);
        let g = self.g(r);
        if g.abs() < POLE_TOL {
            return Err(DistortionError::Pole { r });
        }
        Ok(f / g)
    }

    /// `(L, L', L'')` by the quotient rule.
    pub fn derivatives(&self, r: f64) -> Result<(f64, f64, f64), DistortionError> {
        let (f, f1, f2) = self.f_derivs(r);
        let (g, g1, g2) = self.g_derivs(r);
        if g.abs() < POLE_TOL {
            return Err(DistortionError::Pole { r });
        }
        let num1 = f1 * g - f * g1;
        let l1 = num1 / (g * g);
        let l2 = ((f2 * g - f * g2) * g - 2.0 * g1 * num1) / (g * g * g);
        Ok((f / g, l1, l2))
    }

    pub fn distort(&self, p: (f64, f64)) -> Result<(f64, f64), DistortionError> {
        let r = p.0.hypot(p.1);
        let l = self.l(r)?;
        Ok((l * p.0, l * p.1))
    }

    /// Inverts `distort` along the ray through `p`, choosing the smallest
    /// radius in `[0, search_max]` with `r L(r) = |p|`.
    pub fn undistort(&self, p: (f64, f64), search_max: f64) -> Result<(f64, f64), DistortionError> {
        assert!(search_max > 0.0, "search_max must be positive");
        let rhat = p.0.hypot(p.1);
        if rhat == 0.0 {
            return Ok((0.0, 0.0));
        }
        let r = self.undistort_radius(rhat, search_max)?;
        let s = r / rhat;
        Ok((p.0 * s, p.1 * s))
    }

    /// Smallest root of `r f(r) - rhat g(r)` before any pole of `g`.
    pub fn undistort_radius(&self, rhat: f64, search_max: f64) -> Result<f64, DistortionError> {
        let q = |r: f64| {
            let (f, f1, _) = self.f_derivs(r);
            let (g, g1, _) = self.g_derivs(r);
            (r * f - rhat * g, f + r * f1 - rhat * g1)
        };
        const STEPS: usize = 1024;
        let mut prev_r = 0.0;
        let mut prev_q = q(0.0).0;
        let mut prev_g = self.g(0.0);
        for i in 1..=STEPS {
            let r = search_max * i as f64 / STEPS as f64;
            let g = self.g(r);
            if g.abs() < POLE_TOL || g.signum() != prev_g.signum() {
                return Err(DistortionError::Pole { r });
            }
            let qr = q(r).0;
            if qr == 0.0 {
                return Ok(r);
            }
            if qr.signum() != prev_q.signum() {
                let (mut lo, mut hi) = (prev_r, r);
                let lo_sign = prev_q.signum();
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if q(mid).0.signum() == lo_sign {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let mut x = 0.5 * (lo + hi);
                for _ in 0..3 {
                    let (v, d) = q(x);
                    if d == 0.0 {
                        break;
                    }
                    let next = x - v / d;
                    if !(prev_r..=r).contains(&next) {
                        break;
                    }
                    x = next;
                }
                return Ok(x);
            }
            prev_r = r;
            prev_q = qr;
            prev_g = g;
        }
        Err(DistortionError::NoRoot { rhat, search_max })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DistortionError> {
        serde_json::from_str(s).map_err(|e| DistortionError::Parse(e.to_string()))
    }
}

fn cubic_derivs(a: f64, b: f64, c: f64, r: f64) -> (f64, f64, f64) {
    (
        1.0 + r * (a + r * (b + r * c)),
        a + r * (2.0 * b + 3.0 * c * r),
        2.0 * b + 6.0 * c * r,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `L' <= 0` and `L'' <= 0`.
    Barrel,
    /// `L' >= 0`, `L'' >= 0` and `g > 0`.
    Pincushion,
    /// `g >= p`.
    Positivity { margin: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Barrel => "barrel",
            Shape::Pincushion => "pincushion",
            Shape::Positivity { .. } => "positivity",
        }
    }

    /// Nonnegative violation of the shape inequalities at `r`.
    pub fn violation(&self, model: &DistortionModel, r: f64) -> f64 {
        match *self {
            Shape::Positivity { margin } => (margin - model.g(r)).max(0.0),
            Shape::Barrel => match model.derivatives(r) {
                Ok((_, l1, l2)) => l1.max(l2).max(0.0),
                Err(_) => f64::MAX,
            },
            Shape::Pincushion => match model.derivatives(r) {
                Ok((_, l1, l2)) => (-l1).max(-l2).max(-model.g(r)).max(0.0),
                Err(_) => f64::MAX,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub shape: Shape,
    pub rbar: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub max_violation: f64,
    pub violating_radii: Vec<f64>,
}

impl ShapeReport {
    pub fn passes(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

pub const DEFAULT_SAMPLES: usize = 2048;
pub const DEFAULT_SHAPE_TOL: f64 = 1e-6;

/// Samples the shape inequalities on a uniform grid over `[0, rbar]`
/// including both endpoints.
pub fn shape_check(model: &DistortionModel, shape: Shape, rbar: f64, samples: usize) -> ShapeReport {
    shape_check_with_tol(model, shape, rbar, samples, DEFAULT_SHAPE_TOL)
}

pub fn shape_check_with_tol(
    model: &DistortionModel,
    shape: Shape,
    rbar: f64,
    samples: usize,
    tolerance: f64,
) -> ShapeReport {
    assert!(rbar > 0.0, "rbar must be positive");
    assert!(samples >= 2, "need at least both endpoints");
    let mut max_violation: f64 = 0.0;
    let mut violating_radii = Vec::new();
    for i in 0..samples {
        let r = rbar * i as f64 / (samples - 1) as f64;
        let v = shape.violation(model, r);
        max_violation = max_violation.max(v);
        if v > tolerance {
            violating_radii.push(r);
        }
    }
    ShapeReport {
        shape,
        rbar,
        samples,
        tolerance,
        max_violation,
        violating_radii,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evaluation_examples() {
        let id = DistortionModel::identity();
        for r in [0.0, 0.3, 2.0, 10.0] {
            assert_eq!(id.l(r).unwrap(), 1.0);
        }
        assert!((DistortionModel::polynomial(-0.2, 0.0, 0.0).l(1.0).unwrap() - 0.8).abs() < 1e-15);
        let m = DistortionModel::rational([0.3, -0.1, 0.02, -0.5, 0.2, 0.05]);
        assert_eq!(m.l(0.0).unwrap(), 1.0);
    }

    #[test]
    fn common_root_gives_pole() {
        // f = (1 - r/1.5)(1 + 0.2 r), g = (1 - r/1.5)(1 - 0.1 r)
        let a = -1.0 / 1.5;
        let f = [a + 0.2, 0.2 * a, 0.0];
        let g = [a - 0.1, -0.1 * a, 0.0];
        let m = DistortionModel::rational([f[0], f[1], f[2], g[0], g[1], g[2]]);
        assert!(matches!(m.l(1.5), Err(DistortionError::Pole { .. })));
        assert!(m.l(1.4).is_ok());
    }

    #[test]
    fn distort_examples() {
        assert_eq!(DistortionModel::identity().distort((0.3, -0.4)).unwrap(), (0.3, -0.4));
        let m = DistortionModel::rational([0.3, -0.1, 0.02, -0.5, 0.2, 0.05]);
        assert_eq!(m.distort((0.0, 0.0)).unwrap(), (0.0, 0.0));
        let (x, y) = DistortionModel::polynomial(-0.1, 0.0, 0.0).distort((1.0, 0.0)).unwrap();
        assert!((x - 0.9).abs() < 1e-15 && y == 0.0);
    }

    #[test]
    fn distort_is_homogeneous_along_rays() {
        let m = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let th: f64 = rng.random_range(0.0..6.3);
            let t: f64 = rng.random_range(0.0..1.5);
            let u = (th.cos(), th.sin());
            let (x, y) = m.distort((t * u.0, t * u.1)).unwrap();
            let l = m.l(t).unwrap();
            assert!((x - t * l * u.0).abs() < 1e-14 && (y - t * l * u.1).abs() < 1e-14);
        }
    }

    #[test]
    fn undistort_inverts_monotone_barrel() {
        let m = DistortionModel::polynomial(-0.1, -0.02, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = (rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            let back = m.undistort(m.distort(p).unwrap(), 2.0).unwrap();
            assert!((back.0 - p.0).abs() < 1e-10 && (back.1 - p.1).abs() < 1e-10);
        }
        let id = DistortionModel::identity();
        assert_eq!(id.undistort((0.25, 0.5), 2.0).unwrap().0, 0.25);
    }

    #[test]
    fn undistort_takes_smallest_root() {
        // r L(r) = r - 0.5 r^3 peaks at r = sqrt(2/3), so 0.5 has two preimages.
        let m = DistortionModel::polynomial(0.0, -0.5, 0.0);
        let rl = |r: f64| r - 0.5 * r.powi(3);
        let grid: Vec<f64> = (0..=1500).map(|i| i as f64 / 1000.0).collect();
        let crossings = grid.windows(2).filter(|w| (rl(w[0]) - 0.5).signum() != (rl(w[1]) - 0.5).signum()).count();
        assert_eq!(crossings, 2);
        let r = m.undistort_radius(0.5, 1.5).unwrap();
        assert!(r < (2.0f64 / 3.0).sqrt());
        assert!((rl(r) - 0.5).abs() < 1e-12);
        assert!(matches!(m.undistort_radius(0.9, 1.0), Err(DistortionError::NoRoot { .. })));
    }

    #[test]
    fn undistort_reports_pole() {
        // r (1 - 2r) / (1 - r) stays below 0.2 on [0, 1), then g vanishes at 1.
        let m = DistortionModel::rational([-2.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert!(matches!(m.undistort_radius(0.5, 2.0), Err(DistortionError::Pole { .. })));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.003]);
        let h = 1e-4;
        for r in [0.1, 0.5, 1.0, 1.7] {
            let (l, l1, l2) = m.derivatives(r).unwrap();
            let lp = m.l(r + h).unwrap();
            let lm = m.l(r - h).unwrap();
            assert!((l1 - (lp - lm) / (2.0 * h)).abs() < 1e-7);
            assert!((l2 - (lp - 2.0 * l + lm) / (h * h)).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_check_examples() {
        let rep = shape_check(&DistortionModel::identity(), Shape::Barrel, 1.0, DEFAULT_SAMPLES);
        assert_eq!(rep.max_violation, 0.0);
        assert!(rep.violating_radii.is_empty());
        let rep = shape_check(&DistortionModel::polynomial(0.0, 0.3, 0.0), Shape::Barrel, 1.0, DEFAULT_SAMPLES);
        assert!((rep.max_violation - 0.6 * 1.0).abs() < 1e-12);
        assert!(rep.violating_radii.len() > DEFAULT_SAMPLES / 2);
        let pin = DistortionModel::division(-0.08, 0.0, 0.0);
        assert!(shape_check(&pin, Shape::Pincushion, 1.0, DEFAULT_SAMPLES).passes());
        let pos = shape_check(&pin, Shape::Positivity { margin: 0.95 }, 1.0, DEFAULT_SAMPLES);
        assert!((pos.max_violation - 0.03).abs() < 1e-12);
    }

    #[test]
    fn shape_report_tolerance_and_ordering() {
        let m = DistortionModel::polynomial(0.05, 0.1, -0.2);
        let counts: Vec<usize> = [0.0, 1e-3, 1e-2, 0.1, 1.0]
            .iter()
            .map(|&t| shape_check_with_tol(&m, Shape::Barrel, 1.0, 512, t).violating_radii.len())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        // Maximum over a reversed sample order is identical.
        let forward = shape_check(&m, Shape::Barrel, 1.0, 512).max_violation;
        let reversed = (0..512)
            .rev()
            .map(|i| Shape::Barrel.violation(&m, i as f64 / 511.0))
            .fold(0.0, f64::max);
        assert_eq!(forward, reversed);
    }

    #[test]
    fn json_round_trip_and_kind_constraints() {
        let m = DistortionModel::rational([-0.2, 0.05, -0.01, 0.1, 0.02, 0.003]);
        let s = m.to_json();
        assert!(s.find("\"kind\"").unwrap() < s.find("\"k\"").unwrap());
        assert_eq!(DistortionModel::from_json(&s).unwrap(), m);
        let bad = r#"{"kind": "polynomial", "k": [0, 0, 0, 0.1, 0, 0]}"#;
        assert!(DistortionModel::from_json(bad).is_err());
        assert!(matches!(
            DistortionModel::new(ModelKind::Division, [0.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(DistortionError::KindConstraint { index: 1, .. })
        ));
    }
}
