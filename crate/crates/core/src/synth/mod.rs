//! Synthetic scenes with exact ground truth.
//!
//! A scenario describes terrain, a hovering camera, scripted object motions
//! and noise levels. [`generate`] turns it into the inputs every pipeline
//! stage consumes, together with the truth they should reproduce. All
//! randomness derives from the scenario seed.

mod evaluate;

pub use evaluate::{evaluate, median, EvaluationError, EvaluationReport, EVALUATION_GATE};

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Rotation3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Correspondence, Intrinsics, Pose};
use crate::category::Category;
use crate::geodesy::{GeoCoordinate, LocalFrame, LocalPoint};
use crate::georef_ba::{BaCamera, BaObservation, BaProblem};
use crate::mesh::{grid_mesh, TriangleMesh};
use crate::refine::{from_world_attitude, Detection3D};
use crate::rotation::{exp_so3, rot_x, rot_y, rot_z};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terrain {
    Flat,
    /// Plane rising by `grade_percent` per hundred meters towards `azimuth_deg`
    /// (counter-clockwise from +x).
    Inclined {
        grade_percent: f64,
        azimuth_deg: f64,
    },
    /// z = A·sin(2πx/λ)·cos(2πy/λ).
    Rolling {
        amplitude: f64,
        wavelength: f64,
    },
}

impl Terrain {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Inclined {
                grade_percent,
                azimuth_deg,
            } => {
                let a = azimuth_deg.to_radians();
                grade_percent / 100.0 * (x * a.cos() + y * a.sin())
            }
            Terrain::Rolling { amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                amplitude * (k * x).sin() * (k * y).cos()
            }
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        match *self {
            Terrain::Flat => Vector2::zeros(),
            Terrain::Inclined {
                grade_percent,
                azimuth_deg,
            } => {
                let a = azimuth_deg.to_radians();
                Vector2::new(a.cos(), a.sin()) * (grade_percent / 100.0)
            }
            Terrain::Rolling { amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                Vector2::new(
                    amplitude * k * (k * x).cos() * (k * y).cos(),
                    -amplitude * k * (k * x).sin() * (k * y).sin(),
                )
            }
        }
    }

    /// Upward unit normal.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let g = self.gradient(x, y);
        Vector3::new(-g.x, -g.y, 1.0).normalize()
    }

    pub fn max_grade(&self) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Inclined { grade_percent, .. } => grade_percent.abs() / 100.0,
            Terrain::Rolling { amplitude, wavelength } => amplitude.abs() * 2.0 * PI / wavelength * 2f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    /// Height of the camera above the terrain at the origin, meters.
    pub altitude: f64,
    /// Forward tilt away from nadir, degrees.
    pub tilt_deg: f64,
    pub fx: f64,
    pub fy: f64,
    pub width: u32,
    pub height: u32,
    /// Hovering wobble of the camera center, meters.
    pub wobble_amplitude: f64,
    /// Hovering wobble of the orientation, radians.
    pub wobble_angle: f64,
    pub wobble_period: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            altitude: 100.0,
            tilt_deg: 0.0,
            fx: 2800.0,
            fy: 2800.0,
            width: 3840,
            height: 2160,
            wobble_amplitude: 0.0,
            wobble_angle: 0.0,
            wobble_period: 4.0,
        }
    }
}

impl CameraRig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: f64::from(self.width) / 2.0,
            cy: f64::from(self.height) / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Camera looking straight down with image x east and image y south.
pub fn nadir_rotation() -> Rotation3<f64> {
    rot_x(PI)
}

/// Closed-form plan-view motion, with time measured from the object's start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Line {
        start: [f64; 2],
        heading_deg: f64,
        speed: f64,
        #[serde(default)]
        acceleration: f64,
    },
    /// Circle traversed counter-clockwise for positive speed.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle_deg: f64,
        speed: f64,
    },
    StopAndGo {
        start: [f64; 2],
        heading_deg: f64,
        speed: f64,
        stop_at: f64,
        stop_for: f64,
    },
    /// Piecewise-constant signed speed along a fixed heading, given as
    /// (duration s, speed m/s) pairs; the object rests afterwards.
    Park {
        start: [f64; 2],
        heading_deg: f64,
        segments: Vec<[f64; 2]>,
    },
}

/// Plan-view state: position, velocity and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanState {
    pub position: Point2<f64>,
    pub velocity: Vector2<f64>,
    pub heading: f64,
}

impl Motion {
    pub fn state(&self, t: f64) -> PlanState {
        let along = |start: &[f64; 2], heading_deg: f64, s: f64, v: f64| {
            let h = heading_deg.to_radians();
            let d = Vector2::new(h.cos(), h.sin());
            PlanState {
                position: Point2::new(start[0], start[1]) + d * s,
                velocity: d * v,
                heading: h,
            }
        };
        match self {
            Motion::Line {
                start,
                heading_deg,
                speed,
                acceleration,
            } => along(
                start,
                *heading_deg,
                speed * t + 0.5 * acceleration * t * t,
                speed + acceleration * t,
            ),
            Motion::Arc {
                center,
                radius,
                start_angle_deg,
                speed,
            } => {
                let w = speed / radius;
                let a = start_angle_deg.to_radians() + w * t;
                let velocity = Vector2::new(-a.sin(), a.cos()) * (radius * w);
                PlanState {
                    position: Point2::new(center[0] + radius * a.cos(), center[1] + radius * a.sin()),
                    velocity,
                    heading: velocity.y.atan2(velocity.x),
                }
            }
            Motion::StopAndGo {
                start,
                heading_deg,
                speed,
                stop_at,
                stop_for,
            } => {
                let resume = stop_at + stop_for;
                let s = speed * t.min(*stop_at) + speed * (t - resume).max(0.0);
                let v = if t < *stop_at || t >= resume { *speed } else { 0.0 };
                along(start, *heading_deg, s, v)
            }
            Motion::Park {
                start,
                heading_deg,
                segments,
            } => {
                let mut s = 0.0;
                let mut t0 = 0.0;
                for seg in segments {
                    let (d, v) = (seg[0], seg[1]);
                    if t < t0 + d {
                        return along(start, *heading_deg, s + v * (t - t0), v);
                    }
                    s += v * d;
                    t0 += d;
                }
                along(start, *heading_deg, s, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectScript {
    pub id: u64,
    pub category: Category,
    /// (l, w, h) in meters.
    pub dimensions: [f64; 3],
    #[serde(default)]
    pub start_time: f64,
    #[serde(default)]
    pub end_time: Option<f64>,
    pub motion: Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Plan-view error of the detected ground center, per axis, meters.
    pub detection_std: f64,
    /// Added to every detector depth, meters.
    pub depth_bias: f64,
    pub depth_std: f64,
    /// Pixel noise on correspondences, detection centers and mapping views.
    pub pixel_std: f64,
    pub gps_std: f64,
    /// Fraction of correspondences replaced by uniformly random pixels.
    pub outlier_fraction: f64,
    /// Probability that a visible object is not detected in a frame.
    pub dropout: f64,
    pub yaw_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            detection_std: 0.0,
            depth_bias: 0.0,
            depth_std: 0.0,
            pixel_std: 0.0,
            gps_std: 0.0,
            outlier_fraction: 0.0,
            dropout: 0.0,
            yaw_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub terrain: Terrain,
    pub camera: CameraRig,
    pub objects: Vec<ObjectScript>,
    pub noise: NoiseConfig,
    pub duration: f64,
    pub rate_hz: f64,
    pub seed: u64,
    /// Half side of the square terrain patch, meters.
    pub extent: f64,
    pub mesh_step: f64,
    pub correspondences_per_frame: usize,
    pub mapping_points: usize,
    /// Initial pose error of the bundle adjustment input, meters and degrees.
    pub ba_perturbation_m: f64,
    pub ba_perturbation_deg: f64,
    /// Geodetic anchor (lat°, lon°, alt m) of the local frame.
    pub anchor: [f64; 3],
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            terrain: Terrain::Flat,
            camera: CameraRig::default(),
            objects: Vec::new(),
            noise: NoiseConfig::default(),
            duration: 8.0,
            rate_hz: crate::DEFAULT_RATE_HZ,
            seed: 0,
            extent: 80.0,
            mesh_step: 2.0,
            correspondences_per_frame: 80,
            mapping_points: 150,
            ba_perturbation_m: 0.5,
            ba_perturbation_deg: 2.0,
            anchor: [48.1374, 11.5755, 520.0],
        }
    }
}

fn line(id: u64, category: Category, dims: [f64; 3], start: [f64; 2], heading_deg: f64, speed: f64) -> ObjectScript {
    ObjectScript {
        id,
        category,
        dimensions: dims,
        start_time: 0.0,
        end_time: None,
        motion: Motion::Line {
            start,
            heading_deg,
            speed,
            acceleration: 0.0,
        },
    }
}

const CAR: [f64; 3] = [4.5, 1.8, 1.5];
const PERSON: [f64; 3] = [0.6, 0.6, 1.75];

impl SynthScenario {
    /// Noise-free scene of straight, constant-velocity or constant-acceleration
    /// road users on a 10% grade.
    pub fn exact(seed: u64) -> Self {
        let mut objects = vec![
            line(1, Category::Car, CAR, [-55.0, -24.0], 0.0, 10.0),
            line(2, Category::Car, CAR, [-30.0, -24.0], 0.0, 10.0),
            line(3, Category::Van, [5.2, 2.0, 2.2], [50.0, -12.0], 180.0, 9.0),
            line(4, Category::Pedestrian, PERSON, [-20.0, 8.0], 0.0, 1.4),
            line(5, Category::Pedestrian, PERSON, [10.0, 8.0], 0.0, 1.3),
            line(6, Category::Bicycle, [1.8, 0.6, 1.7], [35.0, 14.0], 180.0, 5.0),
        ];
        objects.push(ObjectScript {
            motion: Motion::Line {
                start: [-40.0, -4.0],
                heading_deg: 0.0,
                speed: 4.0,
                acceleration: 1.5,
            },
            ..line(7, Category::Car, CAR, [0.0, 0.0], 0.0, 0.0)
        });
        Self {
            terrain: Terrain::Inclined {
                grade_percent: 10.0,
                azimuth_deg: 30.0,
            },
            objects,
            seed,
            ..Default::default()
        }
    }

    /// Twenty road users in separated lanes plus an arc, a stop-and-go truck
    /// and a parking maneuver, with the noise model left at zero.
    pub fn benchmark(seed: u64, terrain: Terrain) -> Self {
        let mut objects = Vec::new();
        let mut id = 0;
        let mut next = || {
            id += 1;
            id
        };
        for x in [-55.0, -35.0, -15.0] {
            objects.push(line(next(), Category::Car, CAR, [x, -24.0], 0.0, 10.0));
        }
        for x in [-60.0, -40.0, -20.0] {
            objects.push(line(next(), Category::Car, CAR, [x, -20.0], 0.0, 12.0));
        }
        for x in [55.0, 35.0, 15.0] {
            objects.push(line(next(), Category::Van, [5.2, 2.0, 2.2], [x, -12.0], 180.0, 10.0));
        }
        for x in [50.0, 28.0] {
            objects.push(line(next(), Category::Car, CAR, [x, -8.0], 180.0, 8.0));
        }
        for x in [-30.0, -10.0, 10.0, 30.0] {
            objects.push(line(next(), Category::Pedestrian, PERSON, [x, 8.0], 0.0, 1.4));
        }
        for x in [40.0, 10.0] {
            objects.push(line(next(), Category::Bicycle, [1.8, 0.6, 1.7], [x, 14.0], 180.0, 5.0));
        }
        objects.push(ObjectScript {
            motion: Motion::Arc {
                center: [-40.0, 25.0],
                radius: 12.0,
                start_angle_deg: -90.0,
                speed: 6.0,
            },
            ..line(next(), Category::Car, CAR, [0.0, 0.0], 0.0, 0.0)
        });
        objects.push(ObjectScript {
            motion: Motion::StopAndGo {
                start: [-20.0, 20.0],
                heading_deg: 0.0,
                speed: 6.0,
                stop_at: 3.0,
                stop_for: 2.0,
            },
            ..line(next(), Category::Truck, [8.0, 2.5, 3.2], [0.0, 0.0], 0.0, 0.0)
        });
        objects.push(ObjectScript {
            motion: Motion::Park {
                start: [20.0, 28.0],
                heading_deg: 0.0,
                segments: vec![[3.0, 3.0], [2.0, -1.5], [1.5, 1.0]],
            },
            ..line(next(), Category::Car, CAR, [0.0, 0.0], 0.0, 0.0)
        });
        Self {
            terrain,
            camera: CameraRig {
                wobble_amplitude: 0.02,
                wobble_angle: 2e-4,
                ..Default::default()
            },
            objects,
            seed,
            ..Default::default()
        }
    }

    /// [`SynthScenario::benchmark`] with the noise levels of the accuracy
    /// study: 5 cm detection noise, +2 m depth bias, 1 px pixel noise.
    pub fn accuracy(seed: u64, terrain: Terrain) -> Self {
        Self {
            noise: NoiseConfig {
                detection_std: 0.05,
                depth_bias: 2.0,
                pixel_std: 1.0,
                gps_std: 0.5,
                outlier_fraction: 0.3,
                ..Default::default()
            },
            ..Self::benchmark(seed, terrain)
        }
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration * self.rate_hz).round() as u64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        if !(self.rate_hz > 0.0) || !(self.duration > 0.0) {
            return bad("rate_hz and duration must be positive".into());
        }
        if self.terrain.max_grade() > 0.25 + 1e-12 {
            return bad(format!("terrain grade {:.3} exceeds 25%", self.terrain.max_grade()));
        }
        if !(self.extent > 0.0 && self.mesh_step > 0.0 && self.mesh_step < self.extent) {
            return bad("extent and mesh_step must be positive with mesh_step < extent".into());
        }
        if !(self.camera.altitude > 0.0) || self.camera.tilt_deg.abs() >= 60.0 {
            return bad("camera altitude must be positive and tilt below 60°".into());
        }
        let k = self.camera.intrinsics();
        if k.validate().is_err() {
            return bad("invalid camera intrinsics".into());
        }
        let n = &self.noise;
        let stds = [n.detection_std, n.depth_std, n.pixel_std, n.gps_std, n.yaw_std];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || !n.depth_bias.is_finite() {
            return bad("noise levels must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&n.outlier_fraction) || !(0.0..1.0).contains(&n.dropout) {
            return bad("outlier_fraction and dropout must lie in [0, 1)".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return bad(format!("duplicate object id {}", o.id));
            }
            if o.dimensions.iter().any(|d| !(*d > 0.0)) {
                return bad(format!("object {} has non-positive dimensions", o.id));
            }
            if let Motion::Arc { radius, .. } = o.motion {
                if !(radius > 0.0) {
                    return bad(format!("object {} has a non-positive arc radius", o.id));
                }
            }
        }
        Ok(())
    }
}

/// True state of one object at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub frame_index: u64,
    pub object_id: u64,
    pub category: Category,
    /// Ground center.
    pub position: LocalPoint,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub dimensions: Vector3<f64>,
}

impl TruthState {
    pub fn orientation(&self) -> Rotation3<f64> {
        from_world_attitude(self.yaw, self.pitch, self.roll)
    }
}

#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub terrain: Terrain,
    pub mesh: TriangleMesh,
    pub local_frame: LocalFrame,
    pub intrinsics: Intrinsics,
    pub camera_poses: Vec<(u64, Pose)>,
    /// Sorted by (frame, object id); only states whose ground center is in view.
    pub objects: Vec<TruthState>,
    /// True positions of the bundle adjustment points and cameras.
    pub ba_truth: BaProblem,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub truth: SynthTruth,
    pub detections: Vec<Detection3D>,
    /// Object id behind each detection.
    pub detection_ids: Vec<u64>,
    pub correspondences: Vec<(u64, Vec<Correspondence>)>,
    pub gps_tags: Vec<(u64, LocalPoint)>,
    pub initial_pose: Pose,
    pub ba_problem: BaProblem,
}

/// Independent random stream `stream` of a scenario seed.
fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_CORRESPONDENCES: u64 = 1;
const STREAM_DETECTIONS: u64 = 2;
const STREAM_GPS: u64 = 3;
const STREAM_MAPPING: u64 = 4;
const STREAM_INIT: u64 = 5;

/// Pose of the hovering camera at time t.
pub fn camera_pose(scenario: &SynthScenario, t: f64) -> Pose {
    let rig = &scenario.camera;
    let phase = 2.0 * PI * t / rig.wobble_period;
    let center = Point3::new(
        rig.wobble_amplitude * phase.sin(),
        rig.wobble_amplitude * (0.7 * phase).cos() - rig.wobble_amplitude,
        scenario.terrain.height(0.0, 0.0) + rig.altitude + 0.5 * rig.wobble_amplitude * (1.3 * phase).sin(),
    );
    let wobble = Vector3::new(phase.sin(), (phase + 1.0).sin(), 0.5 * (0.5 * phase).sin()) * rig.wobble_angle;
    let rotation = exp_so3(&wobble) * rot_x(rig.tilt_deg.to_radians()) * nadir_rotation();
    Pose::from_center(rotation, &center)
}

/// World orientation angles of an object heading `yaw` resting on a ground
/// with upward normal `n`: (pitch, roll) tilt the box so its up-axis is `n`.
pub fn ground_attitude(yaw: f64, n: &Vector3<f64>) -> (f64, f64) {
    let m = rot_z(yaw).inverse() * n;
    let roll = (-m.y).clamp(-1.0, 1.0).asin();
    let pitch = m.x.atan2(m.z);
    (pitch, roll)
}

fn object_state(scenario: &SynthScenario, o: &ObjectScript, frame: u64) -> Option<TruthState> {
    let t = frame as f64 / scenario.rate_hz;
    if t < o.start_time || o.end_time.is_some_and(|e| t > e) {
        return None;
    }
    let s = o.motion.state(t - o.start_time);
    let terrain = &scenario.terrain;
    let (x, y) = (s.position.x, s.position.y);
    let g = terrain.gradient(x, y);
    let (pitch, roll) = ground_attitude(s.heading, &terrain.normal(x, y));
    Some(TruthState {
        frame_index: frame,
        object_id: o.id,
        category: o.category,
        position: Point3::new(x, y, terrain.height(x, y)),
        velocity: Vector3::new(s.velocity.x, s.velocity.y, g.dot(&s.velocity)),
        yaw: s.heading,
        pitch,
        roll,
        dimensions: Vector3::from(o.dimensions),
    })
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

fn box_corners(center: &LocalPoint, r_w: &Rotation3<f64>, dims: &Vector3<f64>) -> [LocalPoint; 8] {
    // Box frame has z pointing down, so "up" is −z.
    let mut out = [Point3::origin(); 8];
    let mut i = 0;
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [0.0, -1.0] {
                out[i] = center + r_w * Vector3::new(sx * dims.x, sy * dims.y, sz * dims.z);
                i += 1;
            }
        }
    }
    out
}

fn perturb_pose(pose: &Pose, rng: &mut ChaCha8Rng, meters: f64, degrees: f64) -> Pose {
    let mut unit = || {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
    };
    let dc = unit() * meters;
    let dr = unit() * degrees.to_radians();
    Pose::from_center(exp_so3(&dr) * pose.rotation, &(pose.center() + dc))
}

pub fn generate(scenario: &SynthScenario) -> Result<SynthOutput, SynthError> {
    scenario.validate()?;
    let terrain = scenario.terrain;
    let steps = (2.0 * scenario.extent / scenario.mesh_step).round() as usize;
    let mesh = grid_mesh(
        -scenario.extent,
        -scenario.extent,
        2.0 * scenario.extent / steps as f64,
        steps,
        steps,
        |x, y| terrain.height(x, y),
    );
    let anchor = GeoCoordinate::new(scenario.anchor[0], scenario.anchor[1], scenario.anchor[2])
        .map_err(|e| SynthError::InvalidScenario(format!("anchor: {e}")))?;
    let local_frame =
        LocalFrame::from_anchor(&anchor).map_err(|e| SynthError::InvalidScenario(format!("anchor: {e}")))?;
    let k = scenario.camera.intrinsics();
    let frames: Vec<u64> = (0..scenario.frame_count()).collect();
    let poses: Vec<(u64, Pose)> = frames
        .iter()
        .map(|&f| (f, camera_pose(scenario, f as f64 / scenario.rate_hz)))
        .collect();
    let noise = scenario.noise;

    // Correspondences: mesh vertices visible from the first pose.
    let margin = 20.0;
    let candidates: Vec<usize> = mesh
        .vertices()
        .iter()
        .enumerate()
        .filter(|(_, v)| {
            let xc = poses[0].1.to_camera(v);
            if xc.z <= 0.0 {
                return false;
            }
            let px = k.apply(&xc);
            px.x > margin && px.y > margin && px.x < k.width as f64 - margin && px.y < k.height as f64 - margin
        })
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < scenario.correspondences_per_frame {
        return Err(SynthError::InvalidScenario(format!(
            "only {} mesh vertices in view, {} correspondences requested",
            candidates.len(),
            scenario.correspondences_per_frame
        )));
    }
    let mut corr_rng = rng(scenario.seed, STREAM_CORRESPONDENCES);
    let mut correspondences = Vec::with_capacity(frames.len());
    for (f, pose) in &poses {
        let picks = sample(&mut corr_rng, candidates.len(), scenario.correspondences_per_frame);
        let n_out = (noise.outlier_fraction * picks.len() as f64).round() as usize;
        let mut list = Vec::with_capacity(picks.len());
        for (j, pi) in picks.iter().enumerate() {
            let world = mesh.vertices()[candidates[pi]];
            let exact = k.apply(&pose.to_camera(&world));
            let pixel = if j < n_out {
                Point2::new(
                    corr_rng.random_range(0.0..k.width as f64),
                    corr_rng.random_range(0.0..k.height as f64),
                )
            } else {
                exact
                    + Vector2::new(
                        gaussian(&mut corr_rng, noise.pixel_std),
                        gaussian(&mut corr_rng, noise.pixel_std),
                    )
            };
            if k.contains(&pixel) {
                list.push(Correspondence { pixel, world });
            }
        }
        correspondences.push((*f, list));
    }

    // Detections and truth.
    let mut det_rng = rng(scenario.seed, STREAM_DETECTIONS);
    let mut truth_states = Vec::new();
    let mut detections = Vec::new();
    let mut detection_ids = Vec::new();
    for (f, pose) in &poses {
        for o in &scenario.objects {
            let Some(state) = object_state(scenario, o, *f) else {
                continue;
            };
            let xc_true = pose.to_camera(&state.position);
            if xc_true.z <= 0.0 || !k.contains(&k.apply(&xc_true)) {
                continue;
            }
            truth_states.push(state);
            // Draw every random number even for dropped detections so that
            // the streams of the remaining ones do not depend on dropout.
            let drop = det_rng.random::<f64>() < noise.dropout;
            let dx = gaussian(&mut det_rng, noise.detection_std);
            let dy = gaussian(&mut det_rng, noise.detection_std);
            let du = gaussian(&mut det_rng, noise.pixel_std);
            let dv = gaussian(&mut det_rng, noise.pixel_std);
            let dz = gaussian(&mut det_rng, noise.depth_std);
            let dyaw = gaussian(&mut det_rng, noise.yaw_std);
            let score = det_rng.random_range(0.5..1.0);
            if drop {
                continue;
            }
            let (nx, ny) = (state.position.x + dx, state.position.y + dy);
            let seen = Point3::new(nx, ny, terrain.height(nx, ny));
            let xc = pose.to_camera(&seen);
            let px = k.apply(&xc) + Vector2::new(du, dv);
            if !k.contains(&px) {
                continue;
            }
            let r_w = if dyaw == 0.0 {
                state.orientation()
            } else {
                let (p, r) = ground_attitude(state.yaw + dyaw, &terrain.normal(nx, ny));
                from_world_attitude(state.yaw + dyaw, p, r)
            };
            let corners = box_corners(&state.position, &r_w, &state.dimensions);
            let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for c in &corners {
                let p = k.apply(&pose.to_camera(c));
                bbox = [bbox[0].min(p.x), bbox[1].min(p.y), bbox[2].max(p.x), bbox[3].max(p.y)];
            }
            detections.push(Detection3D {
                frame_index: *f,
                category: o.category,
                score,
                bbox2d: bbox,
                dimensions: state.dimensions,
                orientation_cam: pose.rotation * r_w,
                depth: (xc_true.z + noise.depth_bias + dz).max(1e-3),
                ground_center_px: px,
            });
            detection_ids.push(o.id);
        }
    }

    let mut gps_rng = rng(scenario.seed, STREAM_GPS);
    let gps_tags: Vec<(u64, LocalPoint)> = poses
        .iter()
        .map(|(f, p)| {
            let n = Vector3::new(
                gaussian(&mut gps_rng, noise.gps_std),
                gaussian(&mut gps_rng, noise.gps_std),
                gaussian(&mut gps_rng, noise.gps_std),
            );
            (*f, p.center() + n)
        })
        .collect();

    let (ba_truth, ba_problem) = mapping_problem(scenario, &mesh, &k)?;
    let mut init_rng = rng(scenario.seed, STREAM_INIT);
    let initial_pose = perturb_pose(
        &poses[0].1,
        &mut init_rng,
        scenario.ba_perturbation_m,
        scenario.ba_perturbation_deg,
    );

    Ok(SynthOutput {
        truth: SynthTruth {
            terrain,
            mesh,
            local_frame,
            intrinsics: k,
            camera_poses: poses,
            objects: truth_states,
            ba_truth,
        },
        detections,
        detection_ids,
        correspondences,
        gps_tags,
        initial_pose,
        ba_problem,
    })
}

/// Mapping flight for the bundle adjustment: a 3×3 grid of slightly tilted
/// views 20 m apart at the rig's altitude, observing mesh vertices. Returns
/// the truth and the perturbed, noisy problem.
fn mapping_problem(
    scenario: &SynthScenario,
    mesh: &TriangleMesh,
    k: &Intrinsics,
) -> Result<(BaProblem, BaProblem), SynthError> {
    let mut r = rng(scenario.seed, STREAM_MAPPING);
    let z = scenario.terrain.height(0.0, 0.0) + scenario.camera.altitude;
    let mut cameras = Vec::new();
    for i in -1..=1 {
        for j in -1..=1 {
            let rot = rot_y(r.random_range(-0.05..0.05)) * rot_x(r.random_range(-0.05..0.05)) * nadir_rotation();
            let pose = Pose::from_center(rot, &Point3::new(20.0 * i as f64, 20.0 * j as f64, z));
            cameras.push(BaCamera {
                intrinsics: *k,
                pose,
                gps_prior: Some(pose.center()),
            });
        }
    }
    let verts = mesh.vertices();
    let mut points = Vec::new();
    let mut observations = Vec::new();
    let mut attempts = 0;
    while points.len() < scenario.mapping_points && attempts < 100 * scenario.mapping_points.max(1) {
        attempts += 1;
        let v = verts[r.random_range(0..verts.len())];
        if points.contains(&v) {
            continue;
        }
        let obs: Vec<BaObservation> = cameras
            .iter()
            .enumerate()
            .filter_map(|(ci, c)| {
                let xc = c.pose.to_camera(&v);
                let px = k.apply(&xc);
                (xc.z > 0.0 && k.contains(&px)).then_some(BaObservation {
                    camera: ci,
                    point: points.len(),
                    pixel: px,
                })
            })
            .collect();
        if obs.len() >= 2 {
            points.push(v);
            observations.extend(obs);
        }
    }
    if points.len() < scenario.mapping_points {
        return Err(SynthError::InvalidScenario("mapping views see too few points".into()));
    }
    let truth = BaProblem {
        cameras,
        points,
        observations,
        lambda: 1.0,
    };
    let mut noisy = truth.clone();
    let noise = scenario.noise;
    for c in &mut noisy.cameras {
        let g = c.pose.center();
        c.gps_prior = Some(
            g + Vector3::new(
                gaussian(&mut r, noise.gps_std),
                gaussian(&mut r, noise.gps_std),
                gaussian(&mut r, noise.gps_std),
            ),
        );
        c.pose = perturb_pose(
            &c.pose,
            &mut r,
            scenario.ba_perturbation_m,
            scenario.ba_perturbation_deg,
        );
    }
    for o in &mut noisy.observations {
        o.pixel += Vector2::new(gaussian(&mut r, noise.pixel_std), gaussian(&mut r, noise.pixel_std));
    }
    for p in &mut noisy.points {
        *p += Vector3::new(
            gaussian(&mut r, scenario.ba_perturbation_m * 0.5),
            gaussian(&mut r, scenario.ba_perturbation_m * 0.5),
            gaussian(&mut r, scenario.ba_perturbation_m * 0.5),
        );
    }
    Ok((truth, noisy))
}

#[cfg(test)]
mod tests;
