//! Bundle adjustment with a GPS-alignment penalty on the camera centers.
//!
//! The loss is `Σ ρ(‖π(K_j, T_j, X_k) − x_jk‖) + λ Σ_j ‖c_j − g_j‖²` with a
//! Huber ρ scaled so that ρ(s) = s² near zero. Rotations are updated on the
//! left in the tangent space, `R ← exp(ω)·R`, translations additively, and
//! the normal equations are reduced onto the cameras by a Schur complement.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Point2, Point3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{huber, huber_weight, Intrinsics, Pose};
use crate::geodesy::LocalPoint;
use crate::rotation::{exp_so3, skew};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error("observation {observation} references camera {camera} / point {point} out of range")]
    BadIndex {
        observation: usize,
        camera: usize,
        point: usize,
    },
    #[error("point {point} is seen by {cameras} camera(s); at least 2 required")]
    UnderObserved { point: usize, cameras: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("no camera carries a GPS prior")]
    NoGpsPriors,
    #[error("observation {0} has its point behind the camera")]
    BehindCamera(usize),
    #[error("problem has no cameras")]
    Empty,
    #[error("invalid bundle adjustment configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaCamera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub gps_prior: Option<LocalPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaObservation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub cameras: Vec<BaCamera>,
    pub points: Vec<LocalPoint>,
    pub observations: Vec<BaObservation>,
    /// Weight of the GPS term, in px² per m².
    pub lambda: f64,
}

impl BaProblem {
    pub fn validate(&self) -> Result<(), BaError> {
        if self.cameras.is_empty() {
            return Err(BaError::Empty);
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(BaError::BadLambda(self.lambda));
        }
        let mut seen: Vec<Vec<usize>> = vec![Vec::new(); self.points.len()];
        for (i, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(BaError::BadIndex {
                    observation: i,
                    camera: o.camera,
                    point: o.point,
                });
            }
            if !seen[o.point].contains(&o.camera) {
                seen[o.point].push(o.camera);
            }
        }
        if let Some((point, cams)) = seen.iter().enumerate().find(|(_, c)| c.len() < 2) {
            return Err(BaError::UnderObserved {
                point,
                cameras: cams.len(),
            });
        }
        Ok(())
    }

    pub fn has_gps(&self) -> bool {
        self.lambda > 0.0 && self.cameras.iter().any(|c| c.gps_prior.is_some())
    }

    /// Number of tangent-space parameters: 6 per camera, 3 per point.
    pub fn parameter_count(&self) -> usize {
        6 * self.cameras.len() + 3 * self.points.len()
    }

    /// Applies a tangent-space step laid out as all cameras (ω, δt) followed
    /// by all points.
    pub fn retract(&self, delta: &DVector<f64>) -> BaProblem {
        let mut out = self.clone();
        let m = self.cameras.len();
        for (j, cam) in out.cameras.iter_mut().enumerate() {
            let d = delta.fixed_rows::<6>(6 * j);
            cam.pose = Pose::new(
                exp_so3(&Vector3::new(d[0], d[1], d[2])) * cam.pose.rotation,
                cam.pose.translation + Vector3::new(d[3], d[4], d[5]),
            );
        }
        for (k, p) in out.points.iter_mut().enumerate() {
            *p += delta.fixed_rows::<3>(6 * m + 3 * k).into_owned();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaConfig {
    /// Huber threshold on the reprojection residual norm, pixels.
    pub huber_threshold: f64,
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the loss by less than this fraction.
    pub function_tolerance: f64,
    /// Stop when the largest gradient entry falls below this.
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
    /// Hold the first camera fixed even when GPS priors pin the gauge.
    pub fix_first_camera: bool,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            huber_threshold: 2.0,
            max_iterations: 100,
            function_tolerance: 1e-12,
            gradient_tolerance: 1e-10,
            initial_damping: 1e-4,
            fix_first_camera: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_reprojection_rms: f64,
    pub final_reprojection_rms: f64,
    pub initial_gps_rmse: Option<f64>,
    pub final_gps_rmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gauge_fixed: bool,
    /// Total loss after each accepted iteration, starting with the initial one.
    pub loss_history: Vec<f64>,
}

fn reprojection_residual(problem: &BaProblem, o: &BaObservation) -> Option<Vector2<f64>> {
    let cam = &problem.cameras[o.camera];
    let xc = cam.pose.to_camera(&problem.points[o.point]);
    if xc.z <= 0.0 {
        return None;
    }
    Some(cam.intrinsics.apply(&xc) - o.pixel)
}

/// Total loss; infinite when a point falls behind its camera.
pub fn total_loss(problem: &BaProblem, huber_threshold: f64) -> f64 {
    let mut loss = 0.0;
    for o in &problem.observations {
        match reprojection_residual(problem, o) {
            Some(r) => loss += huber(r.norm(), huber_threshold),
            None => return f64::INFINITY,
        }
    }
    loss + problem.lambda * gps_sum_sq(problem)
}

fn gps_sum_sq(problem: &BaProblem) -> f64 {
    problem
        .cameras
        .iter()
        .filter_map(|c| c.gps_prior.map(|g| (c.pose.center() - g).norm_squared()))
        .sum()
}

/// RMS of the reprojection residual norms, pixels.
pub fn reprojection_rms(problem: &BaProblem) -> f64 {
    if problem.observations.is_empty() {
        return 0.0;
    }
    let sum: f64 = problem
        .observations
        .iter()
        .map(|o| reprojection_residual(problem, o).map_or(f64::INFINITY, |r| r.norm_squared()))
        .sum();
    (sum / problem.observations.len() as f64).sqrt()
}

/// sqrt(mean ‖c_j − g_j‖²) over the cameras that carry a prior.
pub fn gps_rmse(problem: &BaProblem) -> Result<f64, BaError> {
    let d: Vec<f64> = problem
        .cameras
        .iter()
        .filter_map(|c| c.gps_prior.map(|g| (c.pose.center() - g).norm_squared()))
        .collect();
    if d.is_empty() {
        return Err(BaError::NoGpsPriors);
    }
    Ok((d.iter().sum::<f64>() / d.len() as f64).sqrt())
}

struct ObservationJacobian {
    residual: Vector2<f64>,
    d_camera: nalgebra::Matrix2x6<f64>,
    d_point: Matrix2x3<f64>,
}

fn observation_jacobian(problem: &BaProblem, o: &BaObservation) -> ObservationJacobian {
    let cam = &problem.cameras[o.camera];
    let k = &cam.intrinsics;
    let rx = cam.pose.rotation * problem.points[o.point].coords;
    let xc = rx + cam.pose.translation;
    let (x, y, z) = (xc.x, xc.y, xc.z);
    let dproj = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let mut d_camera = nalgebra::Matrix2x6::zeros();
    d_camera.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * (-skew(&rx))));
    d_camera.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
    ObservationJacobian {
        residual: k.apply(&xc) - o.pixel,
        d_camera,
        d_point: dproj * cam.pose.rotation.matrix(),
    }
}

/// Jacobian of the camera center c = −Rᵀt with respect to (ω, δt):
/// ∂c/∂ω = −Rᵀ[t]×, ∂c/∂t = −Rᵀ.
pub fn center_jacobian(pose: &Pose) -> nalgebra::Matrix3x6<f64> {
    let rt = pose.rotation.matrix().transpose();
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-rt * skew(&pose.translation)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt));
    j
}

/// Stacked residuals: 2 per observation (pixels), then 3 per camera with a
/// prior, scaled by √λ so that the squared norm is the unrobustified loss.
pub fn residuals(problem: &BaProblem) -> DVector<f64> {
    let mut out = Vec::new();
    for o in &problem.observations {
        let cam = &problem.cameras[o.camera];
        let r = cam.intrinsics.apply(&cam.pose.to_camera(&problem.points[o.point])) - o.pixel;
        out.extend_from_slice(&[r.x, r.y]);
    }
    let s = problem.lambda.sqrt();
    for c in &problem.cameras {
        if let Some(g) = c.gps_prior {
            let d = (c.pose.center() - g) * s;
            out.extend_from_slice(&[d.x, d.y, d.z]);
        }
    }
    DVector::from_vec(out)
}

/// Dense analytic Jacobian of [`residuals`] in the [`BaProblem::retract`]
/// parameter layout.
pub fn jacobian(problem: &BaProblem) -> DMatrix<f64> {
    let m = problem.cameras.len();
    let n_gps = problem.cameras.iter().filter(|c| c.gps_prior.is_some()).count();
    let mut j = DMatrix::zeros(2 * problem.observations.len() + 3 * n_gps, problem.parameter_count());
    for (i, o) in problem.observations.iter().enumerate() {
        let oj = observation_jacobian(problem, o);
        j.fixed_view_mut::<2, 6>(2 * i, 6 * o.camera).copy_from(&oj.d_camera);
        j.fixed_view_mut::<2, 3>(2 * i, 6 * m + 3 * o.point)
            .copy_from(&oj.d_point);
    }
    let s = problem.lambda.sqrt();
    let mut row = 2 * problem.observations.len();
    for (cj, c) in problem.cameras.iter().enumerate() {
        if c.gps_prior.is_some() {
            j.fixed_view_mut::<3, 6>(row, 6 * cj)
                .copy_from(&(center_jacobian(&c.pose) * s));
            row += 3;
        }
    }
    j
}

/// Central finite differences of [`residuals`] through [`BaProblem::retract`].
pub fn finite_diff_jacobian(problem: &BaProblem, step: f64) -> DMatrix<f64> {
    let n = problem.parameter_count();
    let base = residuals(problem);
    let mut j = DMatrix::zeros(base.len(), n);
    for c in 0..n {
        let mut d = DVector::zeros(n);
        d[c] = step;
        let plus = residuals(&problem.retract(&d));
        d[c] = -step;
        let minus = residuals(&problem.retract(&d));
        j.set_column(c, &((plus - minus) / (2.0 * step)));
    }
    j
}

/// Largest entrywise difference between analytic and finite-difference
/// Jacobians, relative to max(|analytic|, |numeric|, 1).
pub fn finite_diff_check(problem: &BaProblem) -> f64 {
    let a = jacobian(problem);
    let f = finite_diff_jacobian(problem, 1e-6);
    a.iter()
        .zip(f.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Gradient of the total (robust) loss in the retract layout.
pub fn loss_gradient(problem: &BaProblem, huber_threshold: f64) -> DVector<f64> {
    let m = problem.cameras.len();
    let mut g = DVector::zeros(problem.parameter_count());
    for o in &problem.observations {
        let oj = observation_jacobian(problem, o);
        let w = 2.0 * huber_weight(oj.residual.norm(), huber_threshold);
        let mut gc = g.fixed_rows_mut::<6>(6 * o.camera);
        gc += oj.d_camera.transpose() * oj.residual * w;
        let mut gp = g.fixed_rows_mut::<3>(6 * m + 3 * o.point);
        gp += oj.d_point.transpose() * oj.residual * w;
    }
    for (j, c) in problem.cameras.iter().enumerate() {
        if let Some(prior) = c.gps_prior {
            let d = c.pose.center() - prior;
            let mut gc = g.fixed_rows_mut::<6>(6 * j);
            gc += center_jacobian(&c.pose).transpose() * d * (2.0 * problem.lambda);
        }
    }
    g
}

struct NormalEquations {
    cam_h: Vec<Matrix6<f64>>,
    cam_g: Vec<Vector6<f64>>,
    pt_h: Vec<Matrix3<f64>>,
    pt_g: Vec<Vector3<f64>>,
    /// Per point, the camera–point coupling blocks.
    coupling: Vec<BTreeMap<usize, Matrix6x3<f64>>>,
}

/// IRLS Gauss–Newton system (halved: H δ = −g with H = JᵀWJ, g = JᵀWr).
fn normal_equations(problem: &BaProblem, huber_threshold: f64) -> NormalEquations {
    let m = problem.cameras.len();
    let n = problem.points.len();
    let mut ne = NormalEquations {
        cam_h: vec![Matrix6::zeros(); m],
        cam_g: vec![Vector6::zeros(); m],
        pt_h: vec![Matrix3::zeros(); n],
        pt_g: vec![Vector3::zeros(); n],
        coupling: vec![BTreeMap::new(); n],
    };
    for o in &problem.observations {
        let oj = observation_jacobian(problem, o);
        let w = huber_weight(oj.residual.norm(), huber_threshold);
        let jc = oj.d_camera;
        let jp = oj.d_point;
        ne.cam_h[o.camera] += jc.transpose() * jc * w;
        ne.cam_g[o.camera] += jc.transpose() * oj.residual * w;
        ne.pt_h[o.point] += jp.transpose() * jp * w;
        ne.pt_g[o.point] += jp.transpose() * oj.residual * w;
        *ne.coupling[o.point].entry(o.camera).or_insert_with(Matrix6x3::zeros) += jc.transpose() * jp * w;
    }
    for (j, c) in problem.cameras.iter().enumerate() {
        if let Some(prior) = c.gps_prior {
            let jg = center_jacobian(&c.pose);
            let d = c.pose.center() - prior;
            ne.cam_h[j] += jg.transpose() * jg * problem.lambda;
            ne.cam_g[j] += jg.transpose() * d * problem.lambda;
        }
    }
    ne
}

/// Solves the damped system by eliminating points. `free[j]` is the block
/// index of camera j, or `None` when held fixed. Returns the full step.
fn solve_damped(ne: &NormalEquations, free: &[Option<usize>], n_free: usize, mu: f64) -> Option<DVector<f64>> {
    let m = free.len();
    let n = ne.pt_h.len();
    let damp3 = |h: &Matrix3<f64>| {
        let mut d = *h;
        for i in 0..3 {
            d[(i, i)] += mu * h[(i, i)].max(1e-9);
        }
        d
    };
    let pt_inv: Vec<Matrix3<f64>> = ne
        .pt_h
        .iter()
        .map(|h| damp3(h).try_inverse())
        .collect::<Option<Vec<_>>>()?;

    let size = 6 * n_free;
    let mut s = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for j in 0..m {
        let Some(b) = free[j] else { continue };
        let mut h = ne.cam_h[j];
        for i in 0..6 {
            h[(i, i)] += mu * ne.cam_h[j][(i, i)].max(1e-9);
        }
        s.fixed_view_mut::<6, 6>(6 * b, 6 * b).copy_from(&h);
        rhs.fixed_rows_mut::<6>(6 * b).copy_from(&(-ne.cam_g[j]));
    }
    for k in 0..n {
        let blocks: Vec<(usize, &Matrix6x3<f64>)> = ne.coupling[k]
            .iter()
            .filter_map(|(&j, w)| free[j].map(|b| (b, w)))
            .collect();
        for &(bi, wi) in &blocks {
            let wc = wi * pt_inv[k];
            let mut r = rhs.fixed_rows_mut::<6>(6 * bi);
            r += wc * ne.pt_g[k];
            for &(bj, wj) in &blocks {
                let mut blk = s.fixed_view_mut::<6, 6>(6 * bi, 6 * bj);
                blk -= wc * wj.transpose();
            }
        }
    }
    let dc = s.cholesky()?.solve(&rhs);

    let mut delta = DVector::zeros(6 * m + 3 * n);
    for j in 0..m {
        if let Some(b) = free[j] {
            delta.fixed_rows_mut::<6>(6 * j).copy_from(&dc.fixed_rows::<6>(6 * b));
        }
    }
    for k in 0..n {
        let mut acc = ne.pt_g[k];
        for (&j, w) in &ne.coupling[k] {
            if free[j].is_some() {
                acc += w.transpose() * delta.fixed_rows::<6>(6 * j);
            }
        }
        delta
            .fixed_rows_mut::<3>(6 * m + 3 * k)
            .copy_from(&(-(pt_inv[k] * acc)));
    }
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

/// Levenberg–Marquardt minimization of the total loss. Without an active
/// GPS term the gauge is fixed by holding the first camera.
pub fn solve_ba(problem: &BaProblem, cfg: &BaConfig) -> Result<(BaProblem, BaReport), BaError> {
    problem.validate()?;
    if !(cfg.huber_threshold > 0.0) || !(cfg.initial_damping > 0.0) {
        return Err(BaError::BadConfig(
            "huber_threshold and initial_damping must be positive".into(),
        ));
    }
    for (i, o) in problem.observations.iter().enumerate() {
        if reprojection_residual(problem, o).is_none() {
            return Err(BaError::BehindCamera(i));
        }
    }
    let gauge_fixed = cfg.fix_first_camera || !problem.has_gps();
    if gauge_fixed && !cfg.fix_first_camera {
        log::info!("no active GPS term; holding the first camera fixed");
    }
    let free: Vec<Option<usize>> = (0..problem.cameras.len())
        .map(|j| if gauge_fixed { (j > 0).then(|| j - 1) } else { Some(j) })
        .collect();
    let n_free = free.iter().flatten().count();

    let mut current = problem.clone();
    let initial_loss = total_loss(&current, cfg.huber_threshold);
    let mut loss = initial_loss;
    let mut history = vec![loss];
    let mut mu = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let ne = normal_equations(&current, cfg.huber_threshold);
        let grad_max = free
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_some())
            .map(|(j, _)| ne.cam_g[j].amax())
            .chain(ne.pt_g.iter().map(|g| g.amax()))
            .fold(0.0, f64::max);
        if grad_max < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut small = false;
        for _ in 0..12 {
            let Some(delta) = solve_damped(&ne, &free, n_free, mu) else {
                mu *= 10.0;
                continue;
            };
            let candidate = current.retract(&delta);
            let cand_loss = total_loss(&candidate, cfg.huber_threshold);
            if cand_loss < loss {
                debug_assert!(cand_loss <= loss);
                small = (loss - cand_loss) <= cfg.function_tolerance * loss;
                current = candidate;
                loss = cand_loss;
                history.push(loss);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = true;
            break;
        }
        iterations += 1;
        if small {
            converged = true;
            break;
        }
    }

    for c in &mut current.cameras {
        c.pose = c.pose.orthonormalized();
    }
    let report = BaReport {
        initial_loss,
        final_loss: loss,
        initial_reprojection_rms: reprojection_rms(problem),
        final_reprojection_rms: reprojection_rms(&current),
        initial_gps_rmse: gps_rmse(problem).ok(),
        final_gps_rmse: gps_rmse(&current).ok(),
        iterations,
        converged,
        gauge_fixed,
        loss_history: history,
    };
    log::info!(
        "bundle adjustment: loss {:.6e} -> {:.6e} in {} iterations",
        report.initial_loss,
        report.final_loss,
        report.iterations
    );
    Ok((current, report))
}

/// Similarity (s, R, t) minimizing Σ‖s·R·a_i + t − b_i‖², and the RMS of the
/// aligned residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityAlignment {
    pub scale: f64,
    pub rotation: nalgebra::Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub rmse: f64,
}

impl SimilarityAlignment {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }
}

pub fn align_similarity(a: &[Point3<f64>], b: &[Point3<f64>]) -> Option<SimilarityAlignment> {
    if a.len() != b.len() || a.len() < 3 {
        return None;
    }
    let n = a.len() as f64;
    let ca: Vector3<f64> = a.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let cb: Vector3<f64> = b.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_a = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (da, db) = (p.coords - ca, q.coords - cb);
        cov += db * da.transpose();
        var_a += da.norm_squared();
    }
    if var_a == 0.0 {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    let mut sv = svd.singular_values;
    if (u * v_t).determinant() < 0.0 {
        let k = sv.imin();
        d[(k, k)] = -1.0;
        sv[k] = -sv[k];
    }
    let rotation = nalgebra::Rotation3::from_matrix_unchecked(u * d * v_t);
    let scale = sv.sum() / var_a;
    let translation = cb - rotation * ca * scale;
    let mut out = SimilarityAlignment {
        scale,
        rotation,
        translation,
        rmse: 0.0,
    };
    let sq: f64 = a.iter().zip(b).map(|(p, q)| (out.apply(p) - q).norm_squared()).sum();
    out.rmse = (sq / n).sqrt();
    Some(out)
}
