//! Ground-consistent refinement of monocular 3D detections.
//!
//! A detection carries a camera-frame orientation R_c, a depth estimate Z_c
//! and the projected ground center x_p. Refinement replaces the depth by the
//! ray cast through x_p onto the ground, replaces roll and pitch by the
//! ground slope while keeping the detector's yaw, and moves the box into the
//! world frame.
//!
//! Box axes: x is the length (heading) axis and z is the height axis, which
//! points along the camera's viewing direction for an upright box seen by a
//! nadir camera (i.e. down, into the ground). World-frame yaw, pitch and roll
//! reported to users are taken in a z-up box frame, see [`world_attitude`].

use nalgebra::{Point2, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraFrame, FrameStatus, Intrinsics, Pose, RigidTransform};
use crate::category::Category;
use crate::geodesy::LocalPoint;
use crate::ground::Ground;
use crate::rotation::{rot_x, rot_y, rot_z};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("ground normal is degenerate")]
    DegenerateNormal,
    #[error("projected ground center ({u}, {v}) is outside the image")]
    OutsideImage { u: f64, v: f64 },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub frame_index: u64,
    pub category: Category,
    pub score: f64,
    /// (u_min, v_min, u_max, v_max) in pixels.
    pub bbox2d: [f64; 4],
    /// (l, w, h) in meters.
    pub dimensions: Vector3<f64>,
    pub orientation_cam: Rotation3<f64>,
    pub depth: f64,
    pub ground_center_px: Point2<f64>,
}

impl Detection3D {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: String| Err(RefineError::InvalidDetection(m));
        if !self.dimensions.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return bad(format!(
                "dimensions must be positive, got {:?}",
                self.dimensions.as_slice()
            ));
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(RefineError::NonPositiveDepth(self.depth));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return bad(format!("score {} outside [0, 1]", self.score));
        }
        if crate::rotation::orthonormality_error(self.orientation_cam.matrix()) > 1e-6 {
            return bad("orientation is not a rotation".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RefinementFlag {
    GroundSnapped,
    DepthFallback,
}

impl RefinementFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RefinementFlag::GroundSnapped => "GROUND_SNAPPED",
            RefinementFlag::DepthFallback => "DEPTH_FALLBACK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "GROUND_SNAPPED" => Some(RefinementFlag::GroundSnapped),
            "DEPTH_FALLBACK" => Some(RefinementFlag::DepthFallback),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedDetection {
    pub frame_index: u64,
    pub category: Category,
    pub score: f64,
    /// Ground center X_w.
    pub position_world: LocalPoint,
    pub orientation_world: Rotation3<f64>,
    pub dimensions: Vector3<f64>,
    pub flag: RefinementFlag,
}

/// X_c = K⁻¹ (u, v, 1)ᵀ · Z_c.
pub fn backproject(k: &Intrinsics, x_p: &Point2<f64>, z_c: f64) -> Result<Vector3<f64>, RefineError> {
    if !(z_c > 0.0) {
        return Err(RefineError::NonPositiveDepth(z_c));
    }
    Ok(k.unproject(x_p) * z_c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    /// Ground center in the camera frame.
    pub point_cam: Vector3<f64>,
    /// Upward ground normal in the world frame, when the ray hit the ground.
    pub normal_world: Option<Vector3<f64>>,
    pub flag: RefinementFlag,
}

/// Casts the ray from the camera center through x_p onto the ground. On a
/// miss the detector depth is used instead.
pub fn snap_to_ground<G: Ground + ?Sized>(
    k: &Intrinsics,
    pose: &Pose,
    x_p: &Point2<f64>,
    depth: f64,
    ground: &G,
) -> Result<Snap, RefineError> {
    let ray_cam = k.unproject(x_p);
    let dir = (pose.rotation.inverse() * ray_cam).normalize();
    match ground.cast_ray(&pose.center(), &dir) {
        Some(hit) => Ok(Snap {
            point_cam: pose.to_camera(&hit.point),
            normal_world: Some(hit.normal),
            flag: RefinementFlag::GroundSnapped,
        }),
        None => Ok(Snap {
            point_cam: backproject(k, x_p, depth)?,
            normal_world: None,
            flag: RefinementFlag::DepthFallback,
        }),
    }
}

/// Angles (φ, θ, ψ) with R = R_Z(ψ)·R_Y(θ)·R_X(φ), θ ∈ [−π/2, π/2].
/// At gimbal lock φ is set to zero.
pub fn decompose_euler(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let m = r.matrix();
    let theta = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if theta.cos() < 1e-8 {
        let psi = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return (0.0, theta, psi);
    }
    let phi = m[(2, 1)].atan2(m[(2, 2)]);
    let psi = m[(1, 0)].atan2(m[(0, 0)]);
    (phi, theta, psi)
}

pub fn compose_euler(phi: f64, theta: f64, psi: f64) -> Rotation3<f64> {
    rot_z(psi) * rot_y(theta) * rot_x(phi)
}

/// Keeps the detector's yaw and rebuilds roll and pitch from the ground.
///
/// With d the ground's downward normal in the camera frame and ψ the yaw of
/// R_c, the result is R_Z(ψ)·R_Y(ω)·R_X(φ) where (ω, φ) is the unique pair
/// with cos φ > 0 that takes the box z-axis onto d. Decomposing the result
/// returns ψ unchanged, which makes the operation idempotent.
pub fn ground_align_orientation(
    r_c: &Rotation3<f64>,
    ground_normal_world: &Vector3<f64>,
    pose: &Pose,
) -> Result<Rotation3<f64>, RefineError> {
    let norm = ground_normal_world.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(RefineError::DegenerateNormal);
    }
    let down_cam = pose.rotation * (-ground_normal_world / norm);
    let (_, _, psi) = decompose_euler(r_c);
    let d = rot_z(psi).inverse() * down_cam;
    let phi = (-d.y).clamp(-1.0, 1.0).asin();
    let omega = d.x.atan2(d.z);
    Ok(compose_euler(phi, omega, psi))
}

/// X_w = R·X*_c + t and R_w = R·R*_c for a camera→world transform (R, t).
pub fn to_world(
    x_c: &Vector3<f64>,
    r_c: &Rotation3<f64>,
    cam_to_world: &RigidTransform,
) -> (LocalPoint, Rotation3<f64>) {
    (
        LocalPoint::from(cam_to_world.rotation * x_c + cam_to_world.translation),
        cam_to_world.rotation * r_c,
    )
}

/// Full refinement of one detection. Returns `Ok(None)` for frames without
/// a camera pose.
pub fn refine_detection<G: Ground + ?Sized>(
    d: &Detection3D,
    frame: &CameraFrame,
    ground: &G,
) -> Result<Option<RefinedDetection>, RefineError> {
    if frame.status == FrameStatus::Unlocalized {
        return Ok(None);
    }
    d.validate()?;
    if !frame.intrinsics.contains(&d.ground_center_px) {
        return Err(RefineError::OutsideImage {
            u: d.ground_center_px.x,
            v: d.ground_center_px.y,
        });
    }
    let snap = snap_to_ground(&frame.intrinsics, &frame.pose, &d.ground_center_px, d.depth, ground)?;
    let r_star = match snap.normal_world {
        Some(n) => ground_align_orientation(&d.orientation_cam, &n, &frame.pose)?,
        None => d.orientation_cam,
    };
    let (position_world, orientation_world) = to_world(&snap.point_cam, &r_star, &frame.pose.camera_to_world());
    Ok(Some(RefinedDetection {
        frame_index: d.frame_index,
        category: d.category,
        score: d.score,
        position_world,
        orientation_world,
        dimensions: d.dimensions,
        flag: snap.flag,
    }))
}

/// Refines all detections whose frame is known; detections on unlocalized or
/// missing frames are skipped, invalid ones are logged and skipped.
pub fn refine_all<G: Ground + ?Sized>(
    detections: &[Detection3D],
    frames: &[CameraFrame],
    ground: &G,
) -> Vec<RefinedDetection> {
    let by_index: std::collections::HashMap<u64, &CameraFrame> = frames.iter().map(|f| (f.frame_index, f)).collect();
    let mut out = Vec::with_capacity(detections.len());
    for d in detections {
        let Some(frame) = by_index.get(&d.frame_index) else {
            log::warn!("detection on frame {} without camera pose", d.frame_index);
            continue;
        };
        match refine_detection(d, frame, ground) {
            Ok(Some(r)) => out.push(r),
            Ok(None) => {}
            Err(e) => log::warn!("frame {}: detection skipped: {e}", d.frame_index),
        }
    }
    out
}

/// Yaw, pitch and roll (radians) of a world-frame box orientation, measured
/// in the z-up box frame (x forward, z up).
pub fn world_attitude(r_w: &Rotation3<f64>) -> (f64, f64, f64) {
    let (phi, theta, psi) = decompose_euler(&(r_w * rot_x(std::f64::consts::PI)));
    (psi, theta, phi)
}

/// Inverse of [`world_attitude`].
pub fn from_world_attitude(yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    compose_euler(roll, pitch, yaw) * rot_x(std::f64::consts::PI)
}
