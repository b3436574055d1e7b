//! Synthetic calibration scenes and the BA / SO / ASO comparison.
//!
//! A scene is a planar grid seen by cameras placed on a hemisphere and
//! turned towards its center. BA refines poses, focal lengths and the
//! distortion coefficients together; SO replaces the BA distortion with a
//! shape-constrained fit on the correspondences induced by the BA poses; ASO
//! alternates the shape fit with pose refinement under the frozen model.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with one stream
//! per purpose: stream `trial` builds the scene of a trial, stream
//! `NOISE_STREAM + trial` draws its standard-normal pixel offsets (scaled by
//! each sigma, so all noise levels share draws), and `PERTURB_STREAM + trial`
//! perturbs the initial poses.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::calib::{self, CalibConfig, CalibError, CalibResult, Correspondence, ShapeConstraint};
use crate::distortion::{shape_check, DistortionError, DistortionModel, ModelKind, DEFAULT_SAMPLES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("point behind camera (depth {0})")]
    BehindCamera(f64),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("camera {camera} diverged (damping {damping:e})")]
    Diverged { camera: usize, damping: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

const NOISE_STREAM: u64 = 1 << 32;
const PERTURB_STREAM: u64 = 2 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Rows are the camera axes in world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub focal: f64,
    pub principal: [f64; 2],
}

impl Camera {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0, self.principal[0], //
            0.0, self.focal, self.principal[1], //
            0.0, 0.0, 1.0,
        )
    }

    fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>, focal: f64, principal: [f64; 2]) -> Self {
        Camera {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.x, t.y, t.z],
            focal,
            principal,
        }
    }

    /// Camera at `center` looking at `target` with the world y axis kept up
    /// as far as possible.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, focal: f64, principal: [f64; 2]) -> Self {
        let z = (target - center).normalize();
        let helper = if z.y.abs() > 0.9 { Vector3::x() } else { Vector3::y() };
        let x = helper.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * center);
        Camera::from_parts(&r, &t, focal, principal)
    }

    /// Normalized image coordinates of `x` before distortion.
    pub fn normalize(&self, x: &[f64; 3]) -> Result<(f64, f64), PipelineError> {
        let p = self.rotation_matrix() * Vector3::from(*x) + self.translation_vector();
        if !(p.z > 0.0) {
            return Err(PipelineError::BehindCamera(p.z));
        }
        Ok((p.x / p.z, p.y / p.z))
    }

    pub fn to_pixel(&self, p: (f64, f64)) -> [f64; 2] {
        [self.focal * p.0 + self.principal[0], self.focal * p.1 + self.principal[1]]
    }

    pub fn from_pixel(&self, u: [f64; 2]) -> (f64, f64) {
        ((u[0] - self.principal[0]) / self.focal, (u[1] - self.principal[1]) / self.focal)
    }
}

pub fn project(cam: &Camera, x: &[f64; 3], model: &DistortionModel) -> Result<[f64; 2], PipelineError> {
    let p = cam.normalize(x)?;
    Ok(cam.to_pixel(model.distort(p)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: usize,
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub grid: [usize; 2],
    pub spacing: f64,
    pub cameras: usize,
    pub image: [usize; 2],
    pub focal: f64,
    /// Projected half-diagonal of the target over the image half-diagonal
    /// for a fronto-parallel view.
    pub coverage: f64,
    /// Angle range between a camera center and the target normal. Views
    /// close to fronto-parallel leave focal and depth confounded.
    pub min_polar_deg: f64,
    pub max_polar_deg: f64,
    pub true_model: DistortionModel,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid: [16, 16],
            spacing: 1.0,
            cameras: 9,
            image: [640, 480],
            focal: 540.0,
            coverage: 0.5,
            min_polar_deg: 15.0,
            max_polar_deg: 35.0,
            true_model: default_true_model(ShapeConstraint::Barrel),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.grid[0] < 2 || self.grid[1] < 2 {
            return Err(PipelineError::Config("target needs at least 2x2 points".into()));
        }
        if self.cameras == 0 {
            return Err(PipelineError::Config("at least one camera is required".into()));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) || !(self.focal > 0.0) || !(self.spacing > 0.0) {
            return Err(PipelineError::Config("coverage, focal and spacing must be positive".into()));
        }
        if !(0.0..90.0).contains(&self.max_polar_deg) || !(0.0..=self.max_polar_deg).contains(&self.min_polar_deg) {
            return Err(PipelineError::Config("polar angles must satisfy 0 <= min <= max < 90".into()));
        }
        Ok(())
    }

    pub fn principal(&self) -> [f64; 2] {
        [self.image[0] as f64 / 2.0, self.image[1] as f64 / 2.0]
    }

    /// Normalized radius of the image corner.
    pub fn corner_radius(&self) -> f64 {
        let [w, h] = self.image;
        (w as f64).hypot(h as f64) / 2.0 / self.focal
    }
}

/// Ground-truth model used by the experiment for each shape.
pub fn default_true_model(shape: ShapeConstraint) -> DistortionModel {
    match shape {
        // -f'' vanishes at r = 0.75, just past the default image corner
        ShapeConstraint::None | ShapeConstraint::Barrel => DistortionModel::polynomial(-0.02, -0.2, 0.2 / 2.25),
        ShapeConstraint::Pincushion => DistortionModel::division(0.0, -0.2, 0.0),
        ShapeConstraint::Positivity => DistortionModel::rational([0.0, -0.3, 0.25, 0.0, -0.1, 0.0]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub target: Vec<[f64; 3]>,
    pub cameras: Vec<Camera>,
    pub true_model: DistortionModel,
    /// Per camera, observations in target order.
    pub observations: Vec<Vec<Observation>>,
    pub image: [usize; 2],
    pub noise_sigma: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Scene {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        let scene: Scene = serde_json::from_str(s).map_err(|e| PipelineError::Parse(e.to_string()))?;
        for obs in scene.observations.iter().flatten() {
            if obs.point >= scene.target.len() {
                return Err(PipelineError::Parse(format!("observation refers to point {}", obs.point)));
            }
        }
        if scene.observations.len() != scene.cameras.len() {
            return Err(PipelineError::Parse("one observation list per camera is required".into()));
        }
        Ok(scene)
    }

    pub fn observation_count(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }

    /// Correspondences induced by `cams`: ideal points from the poses,
    /// observed points from the measured pixels.
    pub fn correspondences(&self, cams: &[Camera]) -> Result<Vec<Correspondence>, PipelineError> {
        let mut out = Vec::with_capacity(self.observation_count());
        for (cam, obs) in cams.iter().zip(&self.observations) {
            for o in obs {
                let ideal = cam.normalize(&self.target[o.point])?;
                out.push(Correspondence::new(ideal, cam.from_pixel(o.pixel)));
            }
        }
        Ok(out)
    }
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene, PipelineError> {
    generate_scene_stream(cfg, seed, 0)
}

pub fn generate_scene_stream(cfg: &SceneConfig, seed: u64, stream: u64) -> Result<Scene, PipelineError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, stream);
    let [nx, ny] = cfg.grid;
    let (cx, cy) = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
    let target: Vec<[f64; 3]> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| [(i as f64 - cx) * cfg.spacing, (j as f64 - cy) * cfg.spacing, 0.0]))
        .collect();
    let half_diag = cx.hypot(cy) * cfg.spacing;
    let distance = cfg.focal * half_diag / (cfg.coverage * cfg.corner_radius() * cfg.focal);
    let (lo, hi) = (cfg.min_polar_deg.to_radians(), cfg.max_polar_deg.to_radians());
    let cameras: Vec<Camera> = (0..cfg.cameras)
        .map(|_| {
            let theta = (lo * lo + (hi * hi - lo * lo) * rng.random::<f64>()).sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let center = distance * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), -theta.cos());
            Camera::look_at(center, Vector3::zeros(), cfg.focal, cfg.principal())
        })
        .collect();
    let mut observations = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let obs = target
            .iter()
            .enumerate()
            .map(|(i, x)| Ok(Observation { point: i, pixel: project(cam, x, &cfg.true_model)? }))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        observations.push(obs);
    }
    Ok(Scene {
        target,
        cameras,
        true_model: cfg.true_model,
        observations,
        image: cfg.image,
        noise_sigma: 0.0,
        seed,
        stream,
    })
}

/// Adds i.i.d. Gaussian pixel noise of std `sigma`; the draws depend only on
/// the scene seed and stream.
pub fn add_noise(scene: &Scene, sigma: f64) -> Scene {
    let mut out = scene.clone();
    out.noise_sigma = scene.noise_sigma + sigma;
    if sigma == 0.0 {
        return out;
    }
    let mut rng = stream_rng(scene.seed, NOISE_STREAM + scene.stream);
    for o in out.observations.iter_mut().flatten() {
        let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        o.pixel[0] += sigma * a;
        o.pixel[1] += sigma * b;
    }
    out
}

/// Ground truth rotated by `rot_deg` about a random axis, shifted by
/// `trans_frac * |t|` in a random direction and with focal scaled by
/// `1 +- focal_frac`.
pub fn perturb_cameras(cams: &[Camera], rot_deg: f64, trans_frac: f64, focal_frac: f64, rng: &mut ChaCha8Rng) -> Vec<Camera> {
    let unit = |rng: &mut ChaCha8Rng| {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let v: Vector3<f64> = v;
        v.normalize()
    };
    cams.iter()
        .map(|c| {
            let axis = Unit::new_normalize(unit(rng));
            let r = Rotation3::from_axis_angle(&axis, rot_deg.to_radians()).matrix() * c.rotation_matrix();
            let t = c.translation_vector();
            let t = t + unit(rng) * (trans_frac * t.norm());
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Camera::from_parts(&r, &t, c.focal * (1.0 + sign * focal_frac), c.principal)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub max_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 100,
            rel_tol: 1e-10,
            max_damping: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub trace: Vec<f64>,
    pub diverged: bool,
}

/// Levenberg-Marquardt on `0.5 ||r(p)||^2`. `residuals` returns `None` where
/// the model cannot be evaluated; such steps are rejected.
pub fn levenberg_marquardt<R, J>(p0: DVector<f64>, residuals: R, jacobian: J, opts: &LmOptions) -> LmResult
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Option<DMatrix<f64>>,
{
    let mut p = p0;
    let Some(mut r) = residuals(&p) else {
        return LmResult { cost: f64::INFINITY, params: p, iterations: 0, trace: vec![], diverged: true };
    };
    let mut cost = r.norm_squared();
    let mut trace = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut diverged = false;
    while iterations < opts.max_iters && cost > 0.0 {
        iterations += 1;
        let Some(j) = jacobian(&p) else {
            diverged = true;
            break;
        };
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        while lambda <= opts.max_damping {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = &p + &step;
            match residuals(&cand) {
                Some(rc) if rc.norm_squared() < cost => {
                    let new_cost = rc.norm_squared();
                    let rel = (cost - new_cost) / cost;
                    p = cand;
                    r = rc;
                    cost = new_cost;
                    trace.push(cost);
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    if rel < opts.rel_tol {
                        return LmResult { params: p, cost, iterations, trace, diverged: false };
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent left at any damping: either converged to rounding or stuck.
            diverged = g.norm() > 1e-9 * (1.0 + cost.sqrt()) && cost > 1e-20;
            break;
        }
    }
    LmResult { params: p, cost, iterations, trace, diverged }
}

/// Central-difference Jacobian.
pub fn numeric_jacobian<R>(p: &DVector<f64>, residuals: &R) -> Option<DMatrix<f64>>
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let r0 = residuals(p)?;
    let mut j = DMatrix::zeros(r0.len(), p.len());
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1.0);
        let mut a = p.clone();
        let mut b = p.clone();
        a[k] += h;
        b[k] -= h;
        let col = (residuals(&a)? - residuals(&b)?) / (2.0 * h);
        j.set_column(k, &col);
    }
    Some(j)
}

/// Pose and focal parameters relative to a base camera: axis-angle update,
/// translation, focal.
fn camera_from_params(base: &Camera, p: &[f64]) -> Camera {
    let w = Vector3::new(p[0], p[1], p[2]);
    let r = Rotation3::new(w).matrix() * base.rotation_matrix();
    Camera::from_parts(&r, &Vector3::new(p[3], p[4], p[5]), p[6], base.principal)
}

fn camera_params(c: &Camera) -> [f64; 7] {
    let t = c.translation;
    [0.0, 0.0, 0.0, t[0], t[1], t[2], c.focal]
}

fn camera_residuals(
    scene: &Scene,
    idx: usize,
    cam: &Camera,
    model: &DistortionModel,
) -> Option<DVector<f64>> {
    let obs = &scene.observations[idx];
    let mut r = DVector::zeros(2 * obs.len());
    for (i, o) in obs.iter().enumerate() {
        let u = project(cam, &scene.target[o.point], model).ok()?;
        r[2 * i] = u[0] - o.pixel[0];
        r[2 * i + 1] = u[1] - o.pixel[1];
    }
    Some(r)
}

fn rms(sum_sq: f64, points: usize) -> f64 {
    if points == 0 {
        0.0
    } else {
        (sum_sq / points as f64).sqrt()
    }
}

/// Root-mean-square pixel distance over all observations.
pub fn reprojection_rms(scene: &Scene, cams: &[Camera], model: &DistortionModel) -> f64 {
    let mut sum = 0.0;
    for (i, cam) in cams.iter().enumerate() {
        match camera_residuals(scene, i, cam, model) {
            Some(r) => sum += r.norm_squared(),
            None => return f64::INFINITY,
        }
    }
    rms(sum, scene.observation_count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub cameras: Vec<Camera>,
    pub rms: f64,
    /// Cameras whose damping exceeded the limit; they keep their best pose.
    pub diverged: Vec<usize>,
}

/// Refines every camera's pose and focal with `model` held fixed.
pub fn ba_refine(scene: &Scene, model: &DistortionModel, initial: &[Camera]) -> RefineResult {
    let opts = LmOptions::default();
    let mut cameras = Vec::with_capacity(initial.len());
    let mut diverged = Vec::new();
    for (i, base) in initial.iter().enumerate() {
        let res_fn = |p: &DVector<f64>| camera_residuals(scene, i, &camera_from_params(base, p.as_slice()), model);
        let p0 = DVector::from_column_slice(&camera_params(base));
        let out = levenberg_marquardt(p0, res_fn, |p| numeric_jacobian(p, &res_fn), &opts);
        if out.diverged {
            diverged.push(i);
        }
        cameras.push(camera_from_params(base, out.params.as_slice()));
    }
    let rms = reprojection_rms(scene, &cameras, model);
    RefineResult { cameras, rms, diverged }
}

fn free_indices(kind: ModelKind) -> &'static [usize] {
    match kind {
        ModelKind::Polynomial => &[0, 1, 2],
        ModelKind::Division => &[3, 4, 5],
        ModelKind::Rational => &[0, 1, 2, 3, 4, 5],
    }
}

fn model_with(kind: ModelKind, base: &DistortionModel, values: &[f64]) -> Option<DistortionModel> {
    let mut k = *base.k();
    for (&i, &v) in free_indices(kind).iter().zip(values) {
        k[i] = v;
    }
    DistortionModel::new(kind, k).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleResult {
    pub cameras: Vec<Camera>,
    pub model: DistortionModel,
    pub rms: f64,
    pub diverged: bool,
}

/// Joint refinement of all poses, focals and the free coefficients of `kind`.
pub fn bundle_adjust(scene: &Scene, initial: &[Camera], model0: &DistortionModel, kind: ModelKind) -> BundleResult {
    let nc = initial.len();
    let free = free_indices(kind);
    let nk = free.len();
    let split = |p: &DVector<f64>| -> Option<(Vec<Camera>, DistortionModel)> {
        let cams = (0..nc).map(|i| camera_from_params(&initial[i], &p.as_slice()[7 * i..7 * i + 7])).collect();
        let model = model_with(kind, model0, &p.as_slice()[7 * nc..])?;
        Some((cams, model))
    };
    let counts: Vec<usize> = scene.observations.iter().map(|o| 2 * o.len()).collect();
    let offsets: Vec<usize> = counts.iter().scan(0, |acc, &c| { let o = *acc; *acc += c; Some(o) }).collect();
    let total: usize = counts.iter().sum();
    let residuals = |p: &DVector<f64>| -> Option<DVector<f64>> {
        let (cams, model) = split(p)?;
        let mut r = DVector::zeros(total);
        for i in 0..nc {
            r.rows_mut(offsets[i], counts[i]).copy_from(&camera_residuals(scene, i, &cams[i], &model)?);
        }
        Some(r)
    };
    // Camera parameters only touch their own rows.
    let jacobian = |p: &DVector<f64>| -> Option<DMatrix<f64>> {
        let (cams, model) = split(p)?;
        let mut j = DMatrix::zeros(total, 7 * nc + nk);
        for i in 0..nc {
            let local = |q: &DVector<f64>| camera_residuals(scene, i, &camera_from_params(&initial[i], q.as_slice()), &model);
            let q = DVector::from_column_slice(&p.as_slice()[7 * i..7 * i + 7]);
            let ji = numeric_jacobian(&q, &local)?;
            j.view_mut((offsets[i], 7 * i), (counts[i], 7)).copy_from(&ji);
        }
        let kpart = |q: &DVector<f64>| -> Option<DVector<f64>> {
            let m = model_with(kind, model0, q.as_slice())?;
            let mut r = DVector::zeros(total);
            for i in 0..nc {
                r.rows_mut(offsets[i], counts[i]).copy_from(&camera_residuals(scene, i, &cams[i], &m)?);
            }
            Some(r)
        };
        let q = DVector::from_column_slice(&p.as_slice()[7 * nc..]);
        let jk = numeric_jacobian(&q, &kpart)?;
        j.view_mut((0, 7 * nc), (total, nk)).copy_from(&jk);
        Some(j)
    };
    let mut p0 = DVector::zeros(7 * nc + nk);
    for (i, c) in initial.iter().enumerate() {
        p0.rows_mut(7 * i, 7).copy_from_slice(&camera_params(c));
    }
    for (j, &i) in free.iter().enumerate() {
        p0[7 * nc + j] = model0.k()[i];
    }
    let out = levenberg_marquardt(p0, residuals, jacobian, &LmOptions::default());
    let (cameras, model) = split(&out.params).expect("accepted parameters evaluate");
    let rms = reprojection_rms(scene, &cameras, &model);
    BundleResult { cameras, model, rms, diverged: out.diverged }
}

/// Shape fit on the correspondences induced by `cams`. An uncertified
/// pincushion relaxation falls back to its feasible candidate.
pub fn shape_optimize(scene: &Scene, cams: &[Camera], cfg: &CalibConfig) -> Result<CalibResult, PipelineError> {
    let cs = scene.correspondences(cams)?;
    match calib::calibrate(&cs, cfg) {
        Ok(r) => Ok(r),
        Err(CalibError::Uncertified { best: Some(best), .. }) => {
            let mut r = *best;
            r.warnings.push("relaxation not certified; using the feasible candidate".into());
            Ok(r)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsoResult {
    pub calib: CalibResult,
    pub cameras: Vec<Camera>,
    /// Pixel RMS after each pose refinement.
    pub rms_trace: Vec<f64>,
}

pub fn aso_loop(
    scene: &Scene,
    initial: &[Camera],
    cfg: &CalibConfig,
    iterations: usize,
) -> Result<AsoResult, PipelineError> {
    if iterations == 0 {
        return Err(PipelineError::Config("at least one iteration is required".into()));
    }
    let mut cams = initial.to_vec();
    let mut trace = Vec::with_capacity(iterations);
    let mut last = None;
    for _ in 0..iterations {
        let fit = shape_optimize(scene, &cams, cfg)?;
        let refined = ba_refine(scene, &fit.model, &cams);
        cams = refined.cameras;
        trace.push(refined.rms);
        last = Some(fit);
    }
    Ok(AsoResult {
        calib: last.expect("at least one iteration"),
        cameras: cams,
        rms_trace: trace,
    })
}

/// RMS over a `n x n` pixel grid spanning each image: the true ray of every
/// pixel is reprojected with the estimated focal and model.
pub fn validation_rms(scene: &Scene, cams: &[Camera], model: &DistortionModel, n: usize, rbar: f64) -> f64 {
    let [w, h] = scene.image;
    let mut sum = 0.0;
    let mut count = 0;
    for (truth, est) in scene.cameras.iter().zip(cams) {
        for i in 0..n {
            for j in 0..n {
                let u = [
                    (w as f64 - 1.0) * i as f64 / (n - 1) as f64,
                    (h as f64 - 1.0) * j as f64 / (n - 1) as f64,
                ];
                let Ok(ray) = scene.true_model.undistort(truth.from_pixel(u), 4.0 * rbar) else {
                    continue;
                };
                let Ok(p) = model.distort(ray) else {
                    return f64::INFINITY;
                };
                let v = est.to_pixel(p);
                sum += (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2);
                count += 1;
            }
        }
    }
    rms(sum, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BA")]
    Ba,
    #[serde(rename = "SO")]
    So,
    #[serde(rename = "ASO")]
    Aso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ba, Method::So, Method::Aso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ba => "BA",
            Method::So => "SO",
            Method::Aso => "ASO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub sigmas: Vec<f64>,
    pub shape: ShapeConstraint,
    pub seed: u64,
    pub rbar: f64,
    pub margin_p: f64,
    pub delta_max: u32,
    pub aso_iterations: usize,
    pub validation_grid: usize,
    pub init_rotation_deg: f64,
    pub init_translation_frac: f64,
    pub init_focal_frac: f64,
    pub scene: SceneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 20,
            sigmas: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            shape: ShapeConstraint::Barrel,
            seed: 0,
            // just past the normalized image corner (about 0.741)
            rbar: 0.75,
            margin_p: 0.1,
            delta_max: 3,
            aso_iterations: 10,
            validation_grid: 41,
            init_rotation_deg: 0.5,
            init_translation_frac: 0.005,
            init_focal_frac: 0.01,
            scene: SceneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Default configuration for `shape` with its ground-truth model.
    pub fn for_shape(shape: ShapeConstraint) -> Self {
        let mut cfg = ExperimentConfig { shape, ..Default::default() };
        cfg.scene.true_model = default_true_model(shape);
        cfg
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.shape {
            ShapeConstraint::None | ShapeConstraint::Barrel => ModelKind::Polynomial,
            ShapeConstraint::Pincushion => ModelKind::Division,
            ShapeConstraint::Positivity => ModelKind::Rational,
        }
    }

    pub fn calib_config(&self) -> CalibConfig {
        CalibConfig {
            rbar: self.rbar,
            margin_p: self.margin_p,
            delta_max: self.delta_max,
            shape: self.shape,
            model: self.model_kind(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.scene.validate()?;
        if self.trials == 0 {
            return Err(PipelineError::Config("at least one trial is required".into()));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(PipelineError::Config("noise levels must be finite and non-negative".into()));
        }
        if self.aso_iterations == 0 || self.validation_grid < 2 {
            return Err(PipelineError::Config("ASO iterations >= 1 and validation grid >= 2 required".into()));
        }
        self.calib_config().validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub sigma: f64,
    pub trial: usize,
    pub calib_rms: f64,
    pub valid_rms: f64,
    pub shape_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub sigma: f64,
    pub trials: usize,
    pub calib_mean: f64,
    pub calib_std: f64,
    pub calib_median: f64,
    pub valid_mean: f64,
    pub valid_std: f64,
    pub valid_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub sigma: f64,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
    pub failures: Vec<TrialFailure>,
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), median(values))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ExperimentReport {
    pub fn records_for(&self, method: Method, sigma: f64) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.method == method && r.sigma == sigma)
    }

    pub fn summary_for(&self, method: Method, sigma: f64) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method && s.sigma == sigma)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(s).map_err(|e| PipelineError::Parse(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,sigma,trial,calib_rms,valid_rms,shape_violations\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{},{:.16e},{:.16e},{}",
                r.method.name(),
                r.sigma,
                r.trial,
                r.calib_rms,
                r.valid_rms,
                r.shape_violations
            );
        }
        out
    }
}

struct TrialOutcome {
    records: Vec<TrialRecord>,
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, sigma: f64) -> Result<TrialOutcome, PipelineError> {
    let clean = generate_scene_stream(&cfg.scene, cfg.seed, trial as u64)?;
    let scene = add_noise(&clean, sigma);
    let mut rng = stream_rng(cfg.seed, PERTURB_STREAM + trial as u64);
    let start = perturb_cameras(
        &scene.cameras,
        cfg.init_rotation_deg,
        cfg.init_translation_frac,
        cfg.init_focal_frac,
        &mut rng,
    );
    let init = ba_refine(&scene, &DistortionModel::identity(), &start);
    let kind = cfg.model_kind();
    let identity = DistortionModel::new(kind, [0.0; 6]).expect("zero coefficients are valid");
    let ba = bundle_adjust(&scene, &init.cameras, &identity, kind);
    let calib_cfg = cfg.calib_config();
    let so = shape_optimize(&scene, &ba.cameras, &calib_cfg)?;
    let aso = aso_loop(&scene, &ba.cameras, &calib_cfg, cfg.aso_iterations)?;

    let shape = calib_cfg.shape();
    let violations = |m: &DistortionModel| {
        shape.map_or(0, |s| shape_check(m, s, cfg.rbar, DEFAULT_SAMPLES).violating_radii.len())
    };
    let record = |method, cams: &[Camera], model: &DistortionModel| TrialRecord {
        method,
        sigma,
        trial,
        calib_rms: reprojection_rms(&scene, cams, model),
        valid_rms: validation_rms(&scene, cams, model, cfg.validation_grid, cfg.rbar),
        shape_violations: violations(model),
    };
    Ok(TrialOutcome {
        records: vec![
            record(Method::Ba, &ba.cameras, &ba.model),
            record(Method::So, &ba.cameras, &so.model),
            record(Method::Aso, &aso.cameras, &aso.calib.model),
        ],
    })
}

/// Number of worker threads: `SHAPECAL_THREADS` if set, else all CPUs.
pub fn thread_count() -> usize {
    std::env::var("SHAPECAL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.sigmas.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, t)| (s, t, run_trial(cfg, t, cfg.sigmas[s])))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (s, t, out) in outcomes {
        match out {
            Ok(o) => records.extend(o.records),
            Err(e) => failures.push(TrialFailure {
                sigma: cfg.sigmas[s],
                trial: t,
                error: e.to_string(),
            }),
        }
    }
    let mut summary = Vec::new();
    for &sigma in &cfg.sigmas {
        for method in Method::ALL {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method && r.sigma == sigma).collect();
            let calib: Vec<f64> = rs.iter().map(|r| r.calib_rms).collect();
            let valid: Vec<f64> = rs.iter().map(|r| r.valid_rms).collect();
            let (calib_mean, calib_std, calib_median) = stats(&calib);
            let (valid_mean, valid_std, valid_median) = stats(&valid);
            summary.push(MethodSummary {
                method,
                sigma,
                trials: rs.len(),
                calib_mean,
                calib_std,
                calib_median,
                valid_mean,
                valid_std,
                valid_median,
            });
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        records,
        summary,
        failures,
    })
}

/// `r, L, L', L'', pole` on `samples` uniform radii in `[0, rmax]`. A row is
/// marked as a pole when `g` vanishes there or changes sign since the
/// previous sample; its value columns are then `nan`.
pub fn curve_csv(model: &DistortionModel, rmax: f64, samples: usize) -> String {
    let mut out = String::from("r,L,dL,d2L,pole\n");
    let mut prev_g: Option<f64> = None;
    for i in 0..samples {
        let r = if samples == 1 { 0.0 } else { rmax * i as f64 / (samples - 1) as f64 };
        let g = model.g(r);
        let crossed = prev_g.is_some_and(|p| p.signum() != g.signum());
        prev_g = Some(g);
        match model.derivatives(r) {
            Ok((l, d1, d2)) if !crossed => {
                let _ = writeln!(out, "{r:.16e},{l:.16e},{d1:.16e},{d2:.16e},0");
            }
            _ => {
                let _ = writeln!(out, "{r:.16e},nan,nan,nan,1");
            }
        }
    }
    out
}

/// Correspondences with a mustache-shaped distortion whose numerator and
/// denominator nearly share the root `r = 3`, inside `[0, 4]`. The data only
/// reach radius 2.5, so the unconstrained rational fit keeps both roots.
pub fn mustache_dataset(n: usize, sigma: f64, seed: u64) -> Vec<Correspondence> {
    calib::synthesize(&mustache_model(), n, 2.5, sigma, seed)
}

/// `f = (1 - r/3)(1 + 0.1 r - 0.15 r^2)`, `g = (1 - r/3.02)(1 + 0.05 r)`.
pub fn mustache_model() -> DistortionModel {
    let mul = |a: [f64; 3], b: [f64; 2]| [a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[1] * b[1] + a[2] * b[0], a[2] * b[1]];
    let f = mul([1.0, 0.1, -0.15], [1.0, -1.0 / 3.0]);
    let g = mul([1.0, 0.05, 0.0], [1.0, -1.0 / 3.02]);
    DistortionModel::rational([f[1], f[2], f[3], g[1], g[2], g[3]])
}
