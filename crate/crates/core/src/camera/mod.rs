//! Pinhole camera model, robust frame localization (P3P + RANSAC + LM) and
//! temporal smoothing of a recording's pose sequence.

mod p3p;
mod smoothing;

pub use smoothing::{smooth_pose_sequence, PoseSmoothingConfig, SmoothingError};

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::LocalPoint;
use crate::rotation::{exp_so3, nearest_rotation, skew};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("frame unlocalized: only {inliers} inliers")]
    Unlocalized { inliers: usize },
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ProjectionError {
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("projection ({u}, {v}) outside the image")]
    OutOfBounds { u: f64, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) || !(self.cy >= 0.0 && self.cy < f64::from(self.height))
        {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < f64::from(self.width) && px.y < f64::from(self.height)
    }

    /// Camera-frame ray K⁻¹·(u, v, 1).
    pub fn unproject(&self, px: &Point2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// Pinhole projection of a camera-frame point with z > 0.
    pub fn apply(&self, xc: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * xc.x / xc.z + self.cx, self.fy * xc.y / xc.z + self.cy)
    }
}

/// World→camera rigid transform: x_cam = R·X + t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

/// A general rigid transform y = R·x + t, used for the camera→world direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }
}

impl Pose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    /// Pose with the given world→camera rotation and camera center.
    pub fn from_center(rotation: Rotation3<f64>, center: &LocalPoint) -> Self {
        Self::new(rotation, -(rotation * center.coords))
    }

    /// c = −Rᵀt.
    pub fn center(&self) -> LocalPoint {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    pub fn to_camera(&self, x: &LocalPoint) -> Vector3<f64> {
        self.rotation * x.coords + self.translation
    }

    pub fn camera_to_world(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.inverse(),
            translation: self.center().coords,
        }
    }

    /// Re-projects the rotation onto SO(3).
    pub fn orthonormalized(&self) -> Self {
        Self::new(nearest_rotation(self.rotation.matrix()), self.translation)
    }
}

/// Projects a world point; distinguishes points behind the camera from
/// projections that fall outside the image.
pub fn project(k: &Intrinsics, pose: &Pose, x: &LocalPoint) -> Result<Point2<f64>, ProjectionError> {
    let px = project_unbounded(k, pose, x)?;
    if !k.contains(&px) {
        return Err(ProjectionError::OutOfBounds { u: px.x, v: px.y });
    }
    Ok(px)
}

/// Like [`project`] but without the image-bounds check.
pub fn project_unbounded(k: &Intrinsics, pose: &Pose, x: &LocalPoint) -> Result<Point2<f64>, ProjectionError> {
    let xc = pose.to_camera(x);
    if xc.z <= 0.0 {
        return Err(ProjectionError::BehindCamera { depth: xc.z });
    }
    Ok(k.apply(&xc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: Point2<f64>,
    pub world: LocalPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Localized,
    Unlocalized,
    Interpolated,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::Localized => "localized",
            FrameStatus::Unlocalized => "unlocalized",
            FrameStatus::Interpolated => "interpolated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "localized" => Some(FrameStatus::Localized),
            "unlocalized" => Some(FrameStatus::Unlocalized),
            "interpolated" => Some(FrameStatus::Interpolated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_index: u64,
    /// Seconds since the start of the recording.
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub gps_prior: Option<LocalPoint>,
    pub inlier_count: usize,
    pub rms_reprojection: f64,
    pub status: FrameStatus,
}

impl CameraFrame {
    pub fn is_usable(&self) -> bool {
        self.status != FrameStatus::Unlocalized
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub confidence: f64,
    /// Pixels.
    pub inlier_threshold: f64,
    /// Huber threshold in pixels.
    pub huber_threshold: f64,
    pub seed: u64,
    /// Also refine (fx, fy).
    pub refine_intrinsics: bool,
    pub max_refine_iterations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            confidence: 0.999,
            inlier_threshold: 3.0,
            huber_threshold: 2.0,
            seed: 0,
            refine_intrinsics: false,
            max_refine_iterations: 50,
        }
    }
}

pub const MIN_LOCALIZATION_POINTS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    /// Indices into the input correspondence list, ascending.
    pub inliers: Vec<usize>,
    pub rms_reprojection: f64,
    /// Inlier RMS after each accepted iteration of the final least-squares refinement.
    pub rms_history: Vec<f64>,
}

/// Huber cost of a residual with norm `s`, scaled so that ρ(s) = s² in the quadratic zone.
pub fn huber(s: f64, k: f64) -> f64 {
    if s <= k {
        s * s
    } else {
        2.0 * k * s - k * k
    }
}

/// IRLS weight matching [`huber`].
pub fn huber_weight(s: f64, k: f64) -> f64 {
    if s <= k {
        1.0
    } else {
        k / s
    }
}

fn reprojection_error(k: &Intrinsics, pose: &Pose, c: &Correspondence) -> Option<f64> {
    let xc = pose.to_camera(&c.world);
    if xc.z <= 0.0 {
        return None;
    }
    Some((k.apply(&xc) - c.pixel).norm())
}

fn count_inliers(k: &Intrinsics, pose: &Pose, corr: &[Correspondence], threshold: f64) -> (usize, f64) {
    let mut n = 0;
    let mut sum = 0.0;
    for c in corr {
        if let Some(e) = reprojection_error(k, pose, c) {
            if e < threshold {
                n += 1;
                sum += e;
            }
        }
    }
    (n, sum)
}

fn inlier_indices(k: &Intrinsics, pose: &Pose, corr: &[Correspondence], threshold: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(k, pose, c).is_some_and(|e| e < threshold))
        .map(|(i, _)| i)
        .collect()
}

fn is_degenerate_sample(world: &[Point3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> bool {
    let e1 = world[1] - world[0];
    let e2 = world[2] - world[0];
    let scale = e1.norm_squared().max(e2.norm_squared());
    if scale < 1e-12 || e1.cross(&e2).norm() < 1e-6 * scale {
        return true;
    }
    let b = (bearings[1] - bearings[0]).cross(&(bearings[2] - bearings[0]));
    b.norm() < 1e-12
}

/// RANSAC trials for `confidence` given the best inlier count so far.
fn iterations_needed(inliers: usize, n: usize, confidence: f64) -> usize {
    let w = inliers as f64 / n as f64;
    let denom = (1.0 - w.powi(3)).ln();
    if denom < 0.0 {
        ((1.0 - confidence).ln() / denom).ceil().max(1.0) as usize
    } else if inliers == 0 {
        usize::MAX
    } else {
        0
    }
}

/// Robustly localizes one frame against known 3D points.
///
/// RANSAC over minimal P3P samples picks the inlier set, then Levenberg-Marquardt
/// minimizes the Huber reprojection cost over it. A last plain least-squares
/// refinement on the final inliers yields a monotone RMS history. The result is
/// independent of the order of `correspondences` for a fixed seed.
pub fn localize_frame(
    correspondences: &[Correspondence],
    k_init: &Intrinsics,
    pose_init: &Pose,
    cfg: &RansacConfig,
) -> Result<Localization, CameraError> {
    if correspondences.len() < MIN_LOCALIZATION_POINTS {
        return Err(CameraError::TooFewCorrespondences {
            needed: MIN_LOCALIZATION_POINTS,
            got: correspondences.len(),
        });
    }

    // Canonical order so sampling does not depend on input order.
    let mut order: Vec<usize> = (0..correspondences.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &correspondences[a];
        let cb = &correspondences[b];
        let ka = [ca.pixel.x, ca.pixel.y, ca.world.x, ca.world.y, ca.world.z];
        let kb = [cb.pixel.x, cb.pixel.y, cb.world.x, cb.world.y, cb.world.z];
        ka.iter()
            .zip(kb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let corr: Vec<Correspondence> = order.iter().map(|&i| correspondences[i]).collect();
    let n = corr.len();

    let mut k = *k_init;
    let mut best_pose = *pose_init;
    let (mut best_count, mut best_sum) = count_inliers(&k, pose_init, &corr, cfg.inlier_threshold);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut needed = iterations_needed(best_count, n, cfg.confidence);
    let mut iteration = 0;
    let mut draws = 0;
    while iteration < needed.min(cfg.max_iterations) && draws < 10 * cfg.max_iterations {
        draws += 1;
        let idx = sample(&mut rng, n, 3);
        let world = [
            corr[idx.index(0)].world,
            corr[idx.index(1)].world,
            corr[idx.index(2)].world,
        ];
        let bearings = [
            k.unproject(&corr[idx.index(0)].pixel).normalize(),
            k.unproject(&corr[idx.index(1)].pixel).normalize(),
            k.unproject(&corr[idx.index(2)].pixel).normalize(),
        ];
        if is_degenerate_sample(&world, &bearings) {
            continue;
        }
        iteration += 1;
        for pose in p3p::solve(&bearings, &world) {
            let (count, sum) = count_inliers(&k, &pose, &corr, cfg.inlier_threshold);
            if count > best_count || (count == best_count && sum < best_sum) {
                best_count = count;
                best_sum = sum;
                best_pose = pose;
                needed = iterations_needed(count, n, cfg.confidence);
            }
        }
    }

    if best_count < MIN_LOCALIZATION_POINTS {
        return Err(CameraError::Unlocalized { inliers: best_count });
    }

    let inliers = inlier_indices(&k, &best_pose, &corr, cfg.inlier_threshold);
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
    let robust = refine_pose(
        &subset,
        &k,
        &best_pose,
        Some(cfg.huber_threshold),
        cfg.refine_intrinsics,
        cfg.max_refine_iterations,
    );
    k = robust.intrinsics;

    let inliers = inlier_indices(&k, &robust.pose, &corr, cfg.inlier_threshold);
    if inliers.len() < MIN_LOCALIZATION_POINTS {
        return Err(CameraError::Unlocalized { inliers: inliers.len() });
    }
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
    let fine = refine_pose(
        &subset,
        &k,
        &robust.pose,
        None,
        cfg.refine_intrinsics,
        cfg.max_refine_iterations,
    );

    let mut original: Vec<usize> = inliers.iter().map(|&i| order[i]).collect();
    original.sort_unstable();
    let rms = fine.rms_history.last().copied().unwrap_or(f64::NAN);
    Ok(Localization {
        pose: fine.pose.orthonormalized(),
        intrinsics: fine.intrinsics,
        inliers: original,
        rms_reprojection: rms,
        rms_history: fine.rms_history,
    })
}

struct Refined {
    pose: Pose,
    intrinsics: Intrinsics,
    rms_history: Vec<f64>,
}

fn reprojection_cost(corr: &[Correspondence], k: &Intrinsics, pose: &Pose, huber_k: Option<f64>) -> (f64, f64) {
    let mut cost = 0.0;
    let mut sq = 0.0;
    for c in corr {
        let xc = pose.to_camera(&c.world);
        if xc.z <= 0.0 {
            return (f64::INFINITY, f64::INFINITY);
        }
        let s = (k.apply(&xc) - c.pixel).norm();
        sq += s * s;
        cost += match huber_k {
            Some(h) => huber(s, h),
            None => s * s,
        };
    }
    (cost, (sq / corr.len() as f64).sqrt())
}

/// Levenberg-Marquardt on the reprojection cost. Rotation updates are applied on
/// the left in the tangent space: R ← exp(δ)·R.
fn refine_pose(
    corr: &[Correspondence],
    k: &Intrinsics,
    pose: &Pose,
    huber_k: Option<f64>,
    with_intrinsics: bool,
    max_iterations: usize,
) -> Refined {
    let dim = if with_intrinsics { 8 } else { 6 };
    let mut pose = *pose;
    let mut k = *k;
    let (mut cost, rms) = reprojection_cost(corr, &k, &pose, huber_k);
    let mut history = vec![rms];
    let mut lambda = 1e-3;

    for _ in 0..max_iterations {
        let mut h = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let mut g = nalgebra::DVector::<f64>::zeros(dim);
        for c in corr {
            let rx = pose.rotation * c.world.coords;
            let xc = rx + pose.translation;
            let (x, y, z) = (xc.x, xc.y, xc.z);
            let px = k.apply(&xc);
            let r = px - c.pixel;
            let w = huber_k.map_or(1.0, |hk| huber_weight(r.norm(), hk));
            let dproj =
                nalgebra::Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
            let d_rot = dproj * (-skew(&rx));
            let mut j = nalgebra::DMatrix::<f64>::zeros(2, dim);
            j.view_mut((0, 0), (2, 3)).copy_from(&d_rot);
            j.view_mut((0, 3), (2, 3)).copy_from(&dproj);
            if with_intrinsics {
                j[(0, 6)] = x / z;
                j[(1, 7)] = y / z;
            }
            let rv = nalgebra::DVector::from_column_slice(&[r.x, r.y]);
            h += w * j.transpose() * &j;
            g += w * j.transpose() * rv;
        }
        if g.amax() < 1e-12 {
            break;
        }
        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = h.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&g);
            let omega = Vector3::new(delta[0], delta[1], delta[2]);
            let cand_pose = Pose::new(
                exp_so3(&omega) * pose.rotation,
                pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            );
            let mut cand_k = k;
            if with_intrinsics {
                cand_k.fx += delta[6];
                cand_k.fy += delta[7];
            }
            let (cand_cost, cand_rms) = reprojection_cost(corr, &cand_k, &cand_pose, huber_k);
            if cand_cost < cost {
                let rel = (cost - cand_cost) / cost.max(1e-300);
                pose = cand_pose;
                k = cand_k;
                cost = cand_cost;
                history.push(cand_rms);
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel < 1e-14 || delta.amax() < 1e-14 {
                    return Refined {
                        pose,
                        intrinsics: k,
                        rms_history: history,
                    };
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Refined {
        pose,
        intrinsics: k,
        rms_history: history,
    }
}

/// How intrinsics are handled across a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicsMode {
    /// Keep the supplied intrinsics.
    #[default]
    Fixed,
    /// Refine (fx, fy) on the first localized frame and share them.
    SharedFromFirstFrame,
    /// Refine (fx, fy) independently on each frame.
    PerFrame,
}

/// Localizes every frame of a recording in order. Frames failing localization
/// are returned with status [`FrameStatus::Unlocalized`].
pub fn calibrate_recording(
    frames: &[(u64, Vec<Correspondence>)],
    k_init: &Intrinsics,
    pose_init: &Pose,
    cfg: &RansacConfig,
    mode: IntrinsicsMode,
    rate_hz: f64,
) -> Vec<CameraFrame> {
    let mut k = *k_init;
    let mut prev = *pose_init;
    let mut shared_done = false;
    let mut out = Vec::with_capacity(frames.len());
    for (frame_index, corr) in frames {
        let mut frame_cfg = cfg.clone();
        frame_cfg.refine_intrinsics = match mode {
            IntrinsicsMode::Fixed => false,
            IntrinsicsMode::SharedFromFirstFrame => !shared_done,
            IntrinsicsMode::PerFrame => true,
        };
        let timestamp = *frame_index as f64 / rate_hz;
        match localize_frame(corr, &k, &prev, &frame_cfg) {
            Ok(loc) => {
                if mode == IntrinsicsMode::SharedFromFirstFrame && !shared_done {
                    k = loc.intrinsics;
                    shared_done = true;
                }
                prev = loc.pose;
                out.push(CameraFrame {
                    frame_index: *frame_index,
                    timestamp,
                    intrinsics: loc.intrinsics,
                    pose: loc.pose,
                    gps_prior: None,
                    inlier_count: loc.inliers.len(),
                    rms_reprojection: loc.rms_reprojection,
                    status: FrameStatus::Localized,
                });
            }
            Err(e) => {
                log::warn!("frame {frame_index}: {e}");
                let inliers = match e {
                    CameraError::Unlocalized { inliers } => inliers,
                    _ => 0,
                };
                out.push(CameraFrame {
                    frame_index: *frame_index,
                    timestamp,
                    intrinsics: k,
                    pose: prev,
                    gps_prior: None,
                    inlier_count: inliers,
                    rms_reprojection: f64::NAN,
                    status: FrameStatus::Unlocalized,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::orthonormality_error;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn nadir(center: LocalPoint) -> Pose {
        // Camera looking straight down: x east, y south, z down.
        let r = Rotation3::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
        Pose::from_center(r, &center)
    }

    fn test_k() -> Intrinsics {
        Intrinsics::new(2800.0, 2800.0, 1920.0, 1080.0, 3840, 2160).unwrap()
    }

    #[test]
    fn project_examples() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        let px = project(&k, &Pose::identity(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Point2::new(0.0, 0.0));

        let k = Intrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        let px = project(&k, &Pose::identity(), &Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Point2::new(370.0, 240.0));
    }

    #[test]
    fn behind_and_out_of_bounds_are_distinct() {
        let k = Intrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        assert!(matches!(
            project(&k, &Pose::identity(), &Point3::new(0.0, 0.0, -1.0)),
            Err(ProjectionError::BehindCamera { .. })
        ));
        assert!(matches!(
            project(&k, &Pose::identity(), &Point3::new(10.0, 0.0, 1.0)),
            Err(ProjectionError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
    }

    #[test]
    fn center_and_translation_agree() {
        let r = Rotation3::new(Vector3::new(0.1, -0.3, 0.2));
        let c = Point3::new(4.0, -2.0, 90.0);
        let pose = Pose::from_center(r, &c);
        assert!((pose.center() - c).norm() < 1e-12);
        let tw = pose.camera_to_world();
        assert!((tw.apply(&Point3::from(pose.to_camera(&c))) - c).norm() < 1e-12);
    }

    pub(crate) fn synthetic_correspondences(
        pose: &Pose,
        k: &Intrinsics,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Correspondence> {
        let mut out = Vec::new();
        while out.len() < n {
            let world = Point3::new(
                rng.random_range(-60.0..60.0),
                rng.random_range(-35.0..35.0),
                rng.random_range(0.0..15.0),
            );
            if let Ok(px) = project(k, pose, &world) {
                out.push(Correspondence { pixel: px, world });
            }
        }
        out
    }

    #[test]
    fn exact_data_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = test_k();
        let truth = Pose::from_center(
            Rotation3::new(Vector3::new(0.05, -0.02, 0.3)) * nadir(Point3::origin()).rotation,
            &Point3::new(2.0, -3.0, 100.0),
        );
        let corr = synthetic_correspondences(&truth, &k, 100, &mut rng);
        let loc = localize_frame(&corr, &k, &nadir(Point3::new(0.0, 0.0, 80.0)), &RansacConfig::default()).unwrap();
        assert!(crate::rotation::angle_between(&loc.pose.rotation, &truth.rotation) < 1e-6);
        assert!((loc.pose.center() - truth.center()).norm() < 1e-6);
        assert_eq!(loc.inliers.len(), 100);
        assert!(orthonormality_error(loc.pose.rotation.matrix()) < 1e-9);
    }

    #[test]
    fn too_few_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = test_k();
        let truth = nadir(Point3::new(0.0, 0.0, 100.0));
        let corr = synthetic_correspondences(&truth, &k, 5, &mut rng);
        assert_eq!(
            localize_frame(&corr, &k, &truth, &RansacConfig::default()),
            Err(CameraError::TooFewCorrespondences { needed: 6, got: 5 })
        );
    }

    #[test]
    fn noisy_with_outliers_is_permutation_invariant_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = test_k();
        let truth = nadir(Point3::new(0.0, 0.0, 100.0));
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut corr = synthetic_correspondences(&truth, &k, 100, &mut rng);
        for (i, c) in corr.iter_mut().enumerate() {
            if i % 10 < 3 {
                c.pixel = Point2::new(rng.random_range(0.0..3840.0), rng.random_range(0.0..2160.0));
            } else {
                c.pixel.x += noise.sample(&mut rng);
                c.pixel.y += noise.sample(&mut rng);
            }
        }
        let cfg = RansacConfig::default();
        let a = localize_frame(&corr, &k, &truth, &cfg).unwrap();
        assert!((a.pose.center() - truth.center()).norm() < 0.2);
        for w in a.rms_history.windows(2) {
            assert!(w[1] <= w[0]);
        }

        let mut perm: Vec<usize> = (0..corr.len()).collect();
        perm.reverse();
        perm.swap(3, 40);
        let shuffled: Vec<Correspondence> = perm.iter().map(|&i| corr[i]).collect();
        let b = localize_frame(&shuffled, &k, &truth, &cfg).unwrap();
        assert_eq!(a.pose, b.pose);
        let mut mapped: Vec<usize> = b.inliers.iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        assert_eq!(mapped, a.inliers);
    }

    #[test]
    fn shared_intrinsics_refined_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth_k = test_k();
        let truth = nadir(Point3::new(0.0, 0.0, 100.0));
        let frames: Vec<(u64, Vec<Correspondence>)> = (0..3)
            .map(|i| (i, synthetic_correspondences(&truth, &truth_k, 80, &mut rng)))
            .collect();
        let mut k0 = truth_k;
        k0.fx *= 1.01;
        k0.fy *= 0.99;
        let out = calibrate_recording(
            &frames,
            &k0,
            &truth,
            &RansacConfig::default(),
            IntrinsicsMode::SharedFromFirstFrame,
            25.0,
        );
        assert_eq!(out.len(), 3);
        assert!((out[0].intrinsics.fx - truth_k.fx).abs() < 1e-3);
        assert_eq!(out[1].intrinsics, out[0].intrinsics);
        assert!((out[2].pose.center() - truth.center()).norm() < 1e-6);
        assert_eq!(out[1].timestamp, 1.0 / 25.0);
    }
}
