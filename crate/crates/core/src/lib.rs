//! Geo-referenced 6-DoF trajectory extraction for quasi-stationary aerial cameras.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`geodesy`]: WGS84 / UTM / local metric frame conversions
//! - [`camera`]: pinhole model, robust PnP localization and pose smoothing
//! - [`georef_ba`]: bundle adjustment with a GPS-alignment penalty
//! - [`mesh`]: triangle meshes, BVH ray casting, surface sampling
//! - [`ground`]: road point filtering and smooth B-spline ground surfaces
//! - [`refine`]: ground-consistent refinement of monocular 3D detections
//! - [`tracker`]: Hungarian association, Kalman filtering and RTS smoothing
//! - [`analytics`]: per-class statistics and TTC / PET / parking mining
//! - [`synth`]: synthetic scenes with exact ground truth, and evaluation
//! - [`io`]: versioned columnar text formats for every artifact

pub mod analytics;
pub mod camera;
pub mod category;
pub mod geodesy;
pub mod georef_ba;
pub mod ground;
pub mod io;
pub mod mesh;
pub mod refine;
pub mod rotation;
pub mod synth;
pub mod tracker;

pub use category::Category;
pub use geodesy::{GeoCoordinate, LocalFrame, LocalPoint};

/// Default recording rate of the drone videos, in Hz.
pub const DEFAULT_RATE_HZ: f64 = 25.0;
