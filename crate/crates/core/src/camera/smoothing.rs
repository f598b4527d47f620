use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CameraFrame, FrameStatus, Pose};
use crate::rotation::{exp_so3, log_so3};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmoothingError {
    #[error("no localized frame in sequence")]
    NoLocalizedFrame,
    #[error("timestamps not strictly increasing at frame {0}")]
    Unsorted(u64),
}

/// Random-walk noise levels for the camera center (meters) and orientation
/// (radians), per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSmoothingConfig {
    pub position_process_std: f64,
    pub position_measurement_std: f64,
    pub rotation_process_std: f64,
    pub rotation_measurement_std: f64,
}

impl Default for PoseSmoothingConfig {
    fn default() -> Self {
        Self {
            position_process_std: 0.002,
            position_measurement_std: 0.05,
            rotation_process_std: 2e-5,
            rotation_measurement_std: 5e-4,
        }
    }
}

/// Constant-position Kalman filter over the camera center and, in the tangent
/// space of the running estimate, over the orientation. Both filters are
/// isotropic so their covariances reduce to scalars.
///
/// Unlocalized frames receive the predicted pose and are flagged
/// [`FrameStatus::Interpolated`]; frames before the first localized one take
/// its pose.
pub fn smooth_pose_sequence(
    frames: &[CameraFrame],
    cfg: &PoseSmoothingConfig,
) -> Result<Vec<CameraFrame>, SmoothingError> {
    for w in frames.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(SmoothingError::Unsorted(w[1].frame_index));
        }
    }
    let first = frames
        .iter()
        .position(|f| f.status != FrameStatus::Unlocalized)
        .ok_or(SmoothingError::NoLocalizedFrame)?;
    if frames.len() == 1 {
        return Ok(frames.to_vec());
    }

    let q_pos = cfg.position_process_std.powi(2);
    let r_pos = cfg.position_measurement_std.powi(2);
    let q_rot = cfg.rotation_process_std.powi(2);
    let r_rot = cfg.rotation_measurement_std.powi(2);

    let mut center = frames[first].pose.center();
    let mut rotation = frames[first].pose.rotation;
    let mut p_pos = r_pos;
    let mut p_rot = r_rot;

    let mut out = frames.to_vec();
    for f in out.iter_mut().take(first) {
        f.pose = frames[first].pose;
        f.status = FrameStatus::Interpolated;
    }
    for i in first..frames.len() {
        if i > first {
            p_pos += q_pos;
            p_rot += q_rot;
        }
        let frame = &frames[i];
        if frame.status != FrameStatus::Unlocalized {
            let gain = p_pos / (p_pos + r_pos);
            center += (frame.pose.center() - center) * gain;
            p_pos *= 1.0 - gain;

            let gain = p_rot / (p_rot + r_rot);
            let innovation: Vector3<f64> = log_so3(&(frame.pose.rotation * rotation.inverse()));
            rotation = exp_so3(&(innovation * gain)) * rotation;
            p_rot *= 1.0 - gain;
        }
        let dst = &mut out[i];
        if i == first && frames[first].status == FrameStatus::Localized {
            // Keep the measured pose bit-for-bit on the initializing frame.
            continue;
        }
        dst.pose = Pose::from_center(rotation, &center);
        if frame.status == FrameStatus::Unlocalized {
            dst.status = FrameStatus::Interpolated;
        }
    }
    Ok(out)
}
