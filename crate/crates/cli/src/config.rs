//! Pipeline configuration: a TOML file with every section optional, plus
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skytrack::analytics::MiningConfig;
use skytrack::camera::{IntrinsicsMode, PoseSmoothingConfig, RansacConfig};
use skytrack::georef_ba::BaConfig;
use skytrack::ground::{GroundFitConfig, RoadFilterConfig};
use skytrack::io::ValidationConfig;
use skytrack::synth::{SynthScenario, Terrain};
use skytrack::tracker::TrackerConfig;

use crate::PipelineError;

/// Fixed names of the files stages read and write inside the output directory.
pub mod files {
    pub const BA_PROBLEM: &str = "ba_problem.tsv";
    pub const BA_SOLUTION: &str = "ba_solution.tsv";
    pub const CORRESPONDENCES: &str = "correspondences.tsv";
    pub const CAMERA_INIT: &str = "camera_init.tsv";
    pub const GPS: &str = "gps.tsv";
    pub const MESH: &str = "mesh.tsv";
    pub const DETECTIONS: &str = "detections.tsv";
    pub const TRUTH: &str = "truth.tsv";
    pub const SCENARIO: &str = "scenario.toml";
    pub const CAMERA_FRAMES: &str = "camera_frames.tsv";
    pub const GROUND: &str = "ground.tsv";
    pub const REFINED: &str = "refined.tsv";
    pub const TRAJECTORIES: &str = "trajectories.tsv";
    pub const CLASS_STATS: &str = "class_stats.tsv";
    pub const EVENTS: &str = "events.tsv";
    pub const TTC_HISTOGRAM: &str = "ttc_histogram.tsv";
    pub const PET_HISTOGRAM: &str = "pet_histogram.tsv";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: InputPaths,
    pub synth: SynthSettings,
    pub ba: BaSettings,
    pub calibrate: CalibrateSettings,
    pub ground: GroundSettings,
    pub tracker: TrackerConfig,
    pub mining: MiningSettings,
    pub validation: ValidationConfig,
    pub evaluation: EvaluationSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            inputs: InputPaths::default(),
            synth: SynthSettings::default(),
            ba: BaSettings::default(),
            calibrate: CalibrateSettings::default(),
            ground: GroundSettings::default(),
            tracker: TrackerConfig::default(),
            mining: MiningSettings::default(),
            validation: ValidationConfig::default(),
            evaluation: EvaluationSettings::default(),
        }
    }
}

/// External inputs. Unset entries default to the fixed file name inside the
/// output directory, which is where `synth` writes them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub ba_problem: Option<PathBuf>,
    pub correspondences: Option<PathBuf>,
    /// Camera frames file whose first row gives the initial intrinsics and pose.
    pub camera_init: Option<PathBuf>,
    /// Per-frame drone GPS; optional unless set explicitly.
    pub gps: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Directory of trajectory files checked by `validate`.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Exact,
    Benchmark,
    Accuracy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub preset: Preset,
    /// Replaces the preset's terrain.
    pub terrain: Option<Terrain>,
    /// Full scenario file; takes precedence over the preset.
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaSettings {
    /// Replaces the GPS weight stored in the problem file.
    pub lambda: Option<f64>,
    pub solver: BaConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSettings {
    pub intrinsics: IntrinsicsMode,
    /// The seed field is ignored; the pipeline seed is used instead.
    pub ransac: RansacConfig,
    pub smooth: bool,
    pub smoothing: PoseSmoothingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSettings {
    /// Mesh sampling density, points per m².
    pub sample_density: f64,
    pub filter: RoadFilterConfig,
    pub fit: GroundFitConfig,
}

impl Default for GroundSettings {
    fn default() -> Self {
        Self {
            sample_density: 4.0,
            filter: RoadFilterConfig::default(),
            fit: GroundFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSettings {
    pub thresholds: MiningConfig,
    /// Histogram bin widths, seconds.
    pub ttc_bin: f64,
    pub pet_bin: f64,
    /// Parking regions as plan-view polygons in local coordinates.
    pub parking_regions: Vec<Vec<[f64; 2]>>,
}

impl Default for MiningSettings {
    fn default() -> Self {
        Self {
            thresholds: MiningConfig::default(),
            ttc_bin: 0.5,
            pet_bin: 0.5,
            parking_regions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Matching distance between tracks and truth, meters.
    pub gate: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            gate: skytrack::synth::EVALUATION_GATE,
        }
    }
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub scenario: Option<PathBuf>,
}

fn config_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(config_error)
    }

    /// Reads `path` (defaults when `None`), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, PipelineError> {
        let mut cfg = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.dataset {
            self.inputs.dataset = Some(p.clone());
        }
        if let Some(p) = o.preset {
            self.synth.preset = p;
        }
        if let Some(p) = &o.scenario {
            self.synth.scenario = Some(p.clone());
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some(l) = self.ba.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(config_error(format!(
                    "ba.lambda must be finite and non-negative, got {l}"
                )));
            }
        }
        let r = &self.calibrate.ransac;
        if r.max_iterations == 0 || !(r.confidence > 0.0 && r.confidence < 1.0) {
            return Err(config_error(
                "calibrate.ransac needs max_iterations ≥ 1 and confidence in (0, 1)",
            ));
        }
        if !(r.inlier_threshold > 0.0 && r.huber_threshold > 0.0) {
            return Err(config_error("calibrate.ransac thresholds must be positive"));
        }
        let s = &self.calibrate.smoothing;
        let stds = [
            s.position_process_std,
            s.position_measurement_std,
            s.rotation_process_std,
            s.rotation_measurement_std,
        ];
        if !stds.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(config_error("calibrate.smoothing standard deviations must be positive"));
        }
        let d = self.ground.sample_density;
        if !(d > 0.0 && d.is_finite()) {
            return Err(config_error(format!("ground.sample_density must be positive, got {d}")));
        }
        self.ground.filter.validate().map_err(config_error)?;
        let f = &self.ground.fit;
        if f.degree == 0 || !(f.control_spacing > 0.0) || !(f.smoothing_weight >= 0.0) {
            return Err(config_error(
                "ground.fit needs degree ≥ 1, positive control_spacing and non-negative smoothing_weight",
            ));
        }
        self.tracker.validate().map_err(config_error)?;
        self.mining.thresholds.validate().map_err(config_error)?;
        for (name, w) in [
            ("mining.ttc_bin", self.mining.ttc_bin),
            ("mining.pet_bin", self.mining.pet_bin),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(config_error(format!("{name} must be positive, got {w}")));
            }
        }
        for region in &self.mining.parking_regions {
            skytrack::analytics::Polygon::new(region.iter().map(|p| (*p).into()).collect()).map_err(config_error)?;
        }
        let v = &self.validation;
        if !(v.max_speed > 0.0 && v.max_acceleration > 0.0) {
            return Err(config_error("validation bounds must be positive"));
        }
        if !(self.evaluation.gate > 0.0) {
            return Err(config_error("evaluation.gate must be positive"));
        }
        Ok(())
    }

    /// Path of an output file.
    pub fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Path of an external input: the configured one or `name` in the output directory.
    pub fn input(&self, configured: &Option<PathBuf>, name: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.output(name))
    }

    /// Scenario for `synth`, seeded with the pipeline seed.
    pub fn scenario(&self) -> Result<SynthScenario, PipelineError> {
        let mut s = match &self.synth.scenario {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<SynthScenario>(&text)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => {
                let terrain = self.synth.terrain.clone().unwrap_or(Terrain::Flat);
                match self.synth.preset {
                    Preset::Exact => {
                        let mut s = SynthScenario::exact(self.seed);
                        if let Some(t) = &self.synth.terrain {
                            s.terrain = t.clone();
                        }
                        s
                    }
                    Preset::Benchmark => SynthScenario::benchmark(self.seed, terrain),
                    Preset::Accuracy => SynthScenario::accuracy(self.seed, terrain),
                }
            }
        };
        s.seed = self.seed;
        s.validate().map_err(config_error)?;
        Ok(s)
    }
}

impl CalibrateSettings {
    pub fn ransac_config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            seed,
            ..self.ransac.clone()
        }
    }
}
