//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use nalgebra::{DMatrix, Point2, Point3, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skytrack::analytics::{
    mine_parking, mine_pet, occupancy_intervals, parent_class_counts, time_to_contact, trajectories_from_records,
    EventValue, MiningConfig, Polygon, Trajectory,
};
use skytrack::camera::{localize_frame, project, CameraFrame, FrameStatus, Pose, RansacConfig};
use skytrack::category::{Category, ParentClass};
use skytrack::georef_ba::{align_similarity, finite_diff_check, solve_ba, BaConfig};
use skytrack::ground::{filter_road_points, fit_ground, GroundFitConfig, GroundSurface, RoadFilterConfig};
use skytrack::io::{self, FileHeader, FindingKind, ValidationConfig};
use skytrack::mesh::{ray_intersect, ray_intersect_brute_force, sample_surface};
use skytrack::refine::{
    backproject, compose_euler, decompose_euler, from_world_attitude, refine_all, RefinedDetection, RefinementFlag,
};
use skytrack::rotation::angle_between;
use skytrack::synth::{generate, NoiseConfig, SynthOutput, SynthScenario, Terrain, TruthState};
use skytrack::tracker::{filter_observations, hungarian, rts_smooth, Observation, TrackerConfig, TrajectoryRecord};
use skytrack::{GeoCoordinate, LocalFrame, LocalPoint};
use skytrack_cli::{files, run_all, run_stage, PipelineConfig, Preset, Stage};

// ---- pinned tolerances ----

const EXACT_MEDIAN_ERROR: f64 = 1e-6;
const EXACT_RUNTIME_S: f64 = 60.0;
/// Stated accuracy bound, meters.
const ACCURACY_BOUND: f64 = 0.05;
/// 1.2 × the worst per-seed median (0.0207 m) of a calibration run on seeds
/// 1000–1009 over both terrains.
const FROZEN_ACCURACY_BOUND: f64 = 0.025;
const ACCURACY_SEEDS: std::ops::RangeInclusive<u64> = 1..=100;
const PROCRUSTES_RMSE: f64 = 1e-3;
const JACOBIAN_RELATIVE: f64 = 1e-5;
/// 1.2 × the 99th percentile (0.0977 m) of the center error over calibration
/// seeds 1000–1099, 200 correspondences, 30% outliers, 1 px noise.
const FROZEN_PNP_BOUND: f64 = 0.117;
const PNP_REQUIRED: usize = 99;
const PROJECTION_INVERSE: f64 = 1e-9;
const EULER_ROUND_TRIP: f64 = 1e-10;
const ON_SURFACE: f64 = 1e-6;
const NORMAL_ANGLE: f64 = 1e-6;
const DEPTH_RECOVERY: f64 = 1e-6;
const BVH_AGREEMENT: f64 = 1e-9;
const PLANE_REPRODUCTION: f64 = 1e-6;
const DERIVATIVE_RELATIVE: f64 = 1e-6;
const MIN_MOTA: f64 = 0.99;
const EXACT_TIME: f64 = 1e-12;
const DENSE_TTC: f64 = 2e-3;
/// Declared text precision: half a unit in the 6th decimal for meters and the
/// 9th for radians, plus float slack.
const METER_PRECISION: f64 = 5e-7 + 1e-9;
const RADIAN_PRECISION: f64 = 5e-10 + 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---- shared helpers ----

fn skytrack(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skytrack"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("cannot start the skytrack binary")
}

fn succeeded(o: &Output) -> Result<(), String> {
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn summary(path: &Path) -> toml::Table {
    let text = std::fs::read_to_string(path).unwrap();
    text.parse::<toml::Table>().unwrap()["results"]
        .as_table()
        .unwrap()
        .clone()
}

fn true_frames(out: &SynthOutput) -> Vec<CameraFrame> {
    out.truth
        .camera_poses
        .iter()
        .map(|&(f, pose)| CameraFrame {
            frame_index: f,
            timestamp: f as f64 / 25.0,
            intrinsics: out.truth.intrinsics,
            pose,
            gps_prior: None,
            inlier_count: 0,
            rms_reprojection: 0.0,
            status: FrameStatus::Localized,
        })
        .collect()
}

fn truth_index(out: &SynthOutput) -> HashMap<(u64, u64), &TruthState> {
    out.truth
        .objects
        .iter()
        .map(|t| ((t.frame_index, t.object_id), t))
        .collect()
}

fn fitted_ground(out: &SynthOutput, seed: u64) -> GroundSurface {
    let samples = sample_surface(&out.truth.mesh, 4.0, seed).unwrap();
    let road = filter_road_points(&samples, &RoadFilterConfig::default()).unwrap();
    fit_ground(&road, &GroundFitConfig::default()).unwrap()
}

fn grade(percent: f64) -> Terrain {
    Terrain::Inclined {
        grade_percent: percent,
        azimuth_deg: 0.0,
    }
}

// ---- 1: end-to-end exactness ----

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let run = || -> Result<(f64, toml::Table), String> {
        succeeded(&skytrack(&["synth", "--seed", "1", "--preset", "exact"], out))?;
        let t = Instant::now();
        succeeded(&skytrack(&["run-all", "--seed", "1"], out))?;
        let elapsed = t.elapsed().as_secs_f64();
        succeeded(&skytrack(&["evaluate", "--seed", "1"], out))?;
        Ok((elapsed, summary(&out.join("evaluate_summary.toml"))))
    };
    match run() {
        Ok((elapsed, r)) => {
            let median = r["median_position_error"].as_float().unwrap();
            let switches = r["id_switches"].as_integer().unwrap();
            Outcome::new(
                median < EXACT_MEDIAN_ERROR && switches == 0 && elapsed < EXACT_RUNTIME_S,
                format!("median error {median:.2e} m, {switches} ID switches, run-all {elapsed:.1} s"),
            )
        }
        Err(e) => Outcome::new(false, e),
    }
}

// ---- 2: accuracy over seeds (also feeds the MOTA part of 7) ----

struct AccuracyRun {
    median: f64,
    mota: f64,
    switches: i64,
}

fn accuracy_runs() -> Vec<(String, Vec<AccuracyRun>)> {
    let mut all = Vec::new();
    for (name, terrain) in [("flat", Terrain::Flat), ("20% grade", grade(20.0))] {
        let mut runs = Vec::new();
        for seed in ACCURACY_SEEDS {
            let dir = tempfile::tempdir().unwrap();
            let cfg = PipelineConfig {
                seed,
                out: dir.path().to_path_buf(),
                synth: skytrack_cli::config::SynthSettings {
                    preset: Preset::Accuracy,
                    terrain: Some(terrain.clone()),
                    scenario: None,
                },
                ..Default::default()
            };
            run_stage(Stage::Synth, &cfg).unwrap();
            run_all(&cfg).unwrap();
            let r = run_stage(Stage::Evaluate, &cfg).unwrap().results;
            runs.push(AccuracyRun {
                median: r["median_position_error"].as_float().unwrap(),
                mota: r["mota"].as_float().unwrap(),
                switches: r["id_switches"].as_integer().unwrap(),
            });
        }
        all.push((name.to_string(), runs));
    }
    all
}

fn criterion_2(runs: &[(String, Vec<AccuracyRun>)]) -> Outcome {
    let bound = ACCURACY_BOUND.min(FROZEN_ACCURACY_BOUND);
    let expected = ACCURACY_SEEDS.count();
    let mut pass = runs.len() == 2;
    let mut parts = Vec::new();
    for (name, rs) in runs {
        pass &= rs.len() == expected;
        let mut medians: Vec<f64> = rs.iter().map(|r| r.median).collect();
        medians.sort_by(f64::total_cmp);
        let worst = *medians.last().unwrap();
        pass &= worst <= bound;
        parts.push(format!(
            "{name}: typical {:.4} m, worst {worst:.4} m over {} seeds",
            skytrack::synth::median(&medians),
            medians.len()
        ));
    }
    Outcome::new(pass, format!("{} (bound {bound} m)", parts.join("; ")))
}

// ---- 3: geo-registered bundle adjustment ----

fn criterion_3() -> Outcome {
    let noisy = generate(&SynthScenario::accuracy(11, Terrain::Flat)).unwrap();
    let mut rmse = Vec::new();
    for lambda in [0.01, 1.0, 100.0] {
        let mut p = noisy.ba_problem.clone();
        p.lambda = lambda;
        let (_, report) = solve_ba(&p, &BaConfig::default()).unwrap();
        rmse.push(report.final_gps_rmse.unwrap());
    }
    let monotone = rmse.windows(2).all(|w| w[1] < w[0]);

    let exact = generate(&SynthScenario::exact(11)).unwrap();
    let mut p = exact.ba_problem.clone();
    p.lambda = 0.0;
    let (solved, report) = solve_ba(&p, &BaConfig::default()).unwrap();
    let procrustes = align_similarity(&solved.points, &exact.truth.ba_truth.points)
        .unwrap()
        .rmse;

    let fd = finite_diff_check(&noisy.ba_problem);
    Outcome::new(
        monotone && report.gauge_fixed && procrustes < PROCRUSTES_RMSE && fd < JACOBIAN_RELATIVE,
        format!(
            "GPS RMSE {:.4} > {:.4} > {:.4} m, λ=0 point RMSE {procrustes:.1e} m (gauge fixed: {}), Jacobian rel. error {fd:.1e}",
            rmse[0], rmse[1], rmse[2], report.gauge_fixed
        ),
    )
}

// ---- 4: robust PnP ----

fn criterion_4() -> Outcome {
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for seed in 1..=100u64 {
        let mut s = SynthScenario::accuracy(seed, Terrain::Flat);
        s.duration = 0.04;
        s.correspondences_per_frame = 200;
        let out = generate(&s).unwrap();
        let cfg = RansacConfig {
            seed,
            ..Default::default()
        };
        let err = match localize_frame(
            &out.correspondences[0].1,
            &out.truth.intrinsics,
            &out.initial_pose,
            &cfg,
        ) {
            Ok(l) => (l.pose.center() - out.truth.camera_poses[0].1.center()).norm(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
        if err <= FROZEN_PNP_BOUND {
            within += 1;
        }
    }
    Outcome::new(
        within >= PNP_REQUIRED,
        format!("{within}/100 centers within {FROZEN_PNP_BOUND} m (worst {worst:.4} m)"),
    )
}

// ---- 5: projection, Euler angles, ground snapping ----

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = skytrack::camera::Intrinsics::new(2800.0, 2800.0, 1920.0, 1080.0, 3840, 2160).unwrap();
    let mut proj_err: f64 = 0.0;
    for _ in 0..1000 {
        let px = Point2::new(rng.random_range(0.0..3840.0), rng.random_range(0.0..2160.0));
        let z = rng.random_range(20.0..200.0);
        let x = backproject(&k, &px, z).unwrap();
        let back = project(&k, &Pose::identity(), &Point3::from(x)).unwrap();
        proj_err = proj_err.max((back - px).norm()).max((x.z - z).abs());
    }

    let mut euler_err: f64 = 0.0;
    for _ in 0..1000 {
        let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix();
        let (phi, theta, psi) = decompose_euler(&r);
        euler_err = euler_err.max((compose_euler(phi, theta, psi).matrix() - r.matrix()).norm());
    }

    // Snapped boxes on a fitted 20% grade.
    let mut s = SynthScenario::exact(5);
    s.terrain = grade(20.0);
    let out = generate(&s).unwrap();
    let ground = fitted_ground(&out, 5);
    let refined = refine_all(&out.detections, &true_frames(&out), &ground);
    let (mut height_err, mut angle_err): (f64, f64) = (0.0, 0.0);
    for r in &refined {
        let q = ground.query(r.position_world.x, r.position_world.y).unwrap();
        height_err = height_err.max((r.position_world.z - q.z).abs());
        // The box z-axis points down.
        let up = -(r.orientation_world * Vector3::z());
        angle_err = angle_err.max(up.angle(&q.normal));
    }
    let all_snapped =
        refined.len() == out.detections.len() && refined.iter().all(|r| r.flag == RefinementFlag::GroundSnapped);

    // Depth corrupted by +5 m, pixel exact.
    let s = SynthScenario {
        noise: NoiseConfig {
            depth_bias: 5.0,
            ..Default::default()
        },
        ..SynthScenario::exact(6)
    };
    let out = generate(&s).unwrap();
    let refined = refine_all(&out.detections, &true_frames(&out), &out.truth.mesh);
    let truth = truth_index(&out);
    let mut depth_err: f64 = 0.0;
    let mut depth_ok = refined.len() == out.detections.len();
    for (r, id) in refined.iter().zip(&out.detection_ids) {
        depth_ok &= r.flag == RefinementFlag::GroundSnapped;
        depth_err = depth_err.max((r.position_world - truth[&(r.frame_index, *id)].position).norm());
    }

    Outcome::new(
        proj_err < PROJECTION_INVERSE
            && euler_err < EULER_ROUND_TRIP
            && all_snapped
            && height_err < ON_SURFACE
            && angle_err < NORMAL_ANGLE
            && depth_ok
            && depth_err < DEPTH_RECOVERY,
        format!(
            "projection {proj_err:.1e}, Euler {euler_err:.1e}, on surface {height_err:.1e} m, normal {angle_err:.1e} rad, +5 m depth recovered to {depth_err:.1e} m"
        ),
    )
}

// ---- 6: geometry oracles ----

fn criterion_6() -> Outcome {
    let mut s = SynthScenario::exact(6);
    s.terrain = Terrain::Rolling {
        amplitude: 1.0,
        wavelength: 40.0,
    };
    let out = generate(&s).unwrap();
    let mesh = &out.truth.mesh;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut hits, mut disagreements, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    for _ in 0..10_000 {
        let origin = Point3::new(
            rng.random_range(-90.0..90.0),
            rng.random_range(-90.0..90.0),
            rng.random_range(5.0..150.0),
        );
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..0.3),
        );
        let a = ray_intersect(mesh, &origin, &dir);
        let b = ray_intersect_brute_force(mesh, &origin, &dir);
        match (a, b) {
            (Some(a), Some(b)) => {
                hits += 1;
                let d = (a.distance - b.distance).abs().max((a.point - b.point).norm());
                worst = worst.max(d);
            }
            (None, None) => {}
            _ => disagreements += 1,
        }
    }

    let plane = |x: f64, y: f64| 3.0 + 0.2 * x - 0.1 * y;
    let pts: Vec<LocalPoint> = (0..4000)
        .map(|_| {
            let (x, y) = (rng.random_range(-40.0..40.0), rng.random_range(-30.0..30.0));
            Point3::new(x, y, plane(x, y))
        })
        .collect();
    let surface = fit_ground(&pts, &GroundFitConfig::default()).unwrap();
    let d = surface.domain();
    let mut plane_err: f64 = 0.0;
    for i in 0..=50 {
        for j in 0..=50 {
            let x = d.min_x + (d.max_x - d.min_x) * i as f64 / 50.0;
            let y = d.min_y + (d.max_y - d.min_y) * j as f64 / 50.0;
            plane_err = plane_err.max((surface.query(x, y).unwrap().z - plane(x, y)).abs());
        }
    }

    let rolling = fitted_ground(&out, 6);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let mut deriv_err: f64 = 0.0;
    for _ in 0..200 {
        let (x, y) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let dv = rolling.derivatives(x, y).unwrap();
        let z = |x: f64, y: f64| rolling.query(x, y).unwrap().z;
        let g = |x: f64, y: f64| rolling.derivatives(x, y).unwrap();
        deriv_err = deriv_err
            .max(rel(dv.zx, (z(x + h, y) - z(x - h, y)) / (2.0 * h)))
            .max(rel(dv.zy, (z(x, y + h) - z(x, y - h)) / (2.0 * h)))
            .max(rel(dv.zxx, (g(x + h, y).zx - g(x - h, y).zx) / (2.0 * h)))
            .max(rel(dv.zxy, (g(x, y + h).zx - g(x, y - h).zx) / (2.0 * h)))
            .max(rel(dv.zyy, (g(x, y + h).zy - g(x, y - h).zy) / (2.0 * h)));
    }

    Outcome::new(
        disagreements == 0
            && hits > 1000
            && worst <= BVH_AGREEMENT
            && plane_err < PLANE_REPRODUCTION
            && deriv_err < DERIVATIVE_RELATIVE,
        format!(
            "BVH vs brute force: {hits} hits, {disagreements} hit/miss disagreements, max diff {worst:.1e}; plane error {plane_err:.1e} m; derivative rel. error {deriv_err:.1e}"
        ),
    )
}

// ---- 7: tracking ----

fn exhaustive(cost: &DMatrix<f64>) -> f64 {
    fn go(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.ncols() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[(row, c)] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.ncols()])
}

fn criterion_7(runs: &[(String, Vec<AccuracyRun>)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hungarian_err: f64 = 0.0;
    let mut instances = 0;
    for rows in 1..=8 {
        for cols in rows..=8 {
            for _ in 0..5 {
                let cost = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..10.0));
                hungarian_err = hungarian_err.max((hungarian(&cost).cost - exhaustive(&cost)).abs());
                instances += 1;
            }
        }
    }

    let cfg = TrackerConfig::default();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut smoother_wins = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<u64> = (0..150).collect();
        let truth: Vec<LocalPoint> = frames
            .iter()
            .map(|&f| {
                let t = f as f64 / 25.0;
                Point3::new(8.0 * t, 0.5 * t * t, 0.0)
            })
            .collect();
        let obs: Vec<Observation> = truth
            .iter()
            .map(|p| {
                let noisy = p + Vector3::from_fn(|_, _| noise.sample(&mut rng));
                Observation::from_detection(&RefinedDetection {
                    frame_index: 0,
                    category: Category::Car,
                    score: 0.9,
                    position_world: noisy,
                    orientation_world: from_world_attitude(0.0, 0.0, 0.0),
                    dimensions: Vector3::new(4.5, 1.8, 1.5),
                    flag: RefinementFlag::GroundSnapped,
                })
            })
            .collect();
        let filtered = filter_observations(1, &frames, &obs, &cfg).unwrap();
        let smoothed = rts_smooth(&filtered).unwrap();
        let rmse = |t: &skytrack::tracker::Track| {
            let s: f64 = truth
                .iter()
                .zip(&t.states)
                .map(|(p, s)| (p - s.position).norm_squared())
                .sum();
            (s / truth.len() as f64).sqrt()
        };
        if rmse(&smoothed) < rmse(&filtered) {
            smoother_wins += 1;
        }
    }

    let min_mota = runs
        .iter()
        .flat_map(|(_, r)| r.iter().map(|x| x.mota))
        .fold(f64::INFINITY, f64::min);
    let switches: i64 = runs.iter().flat_map(|(_, r)| r.iter().map(|x| x.switches)).sum();
    Outcome::new(
        hungarian_err < 1e-9 && smoother_wins == 100 && min_mota.is_finite() && min_mota >= MIN_MOTA,
        format!(
            "Hungarian vs exhaustive on {instances} instances max diff {hungarian_err:.1e}; RTS better on {smoother_wins}/100 seeds; 20-object scenes min MOTA {min_mota:.4} ({switches} ID switches in total)"
        ),
    )
}

// ---- 8: analytics ----

fn sampled(id: u64, frames: std::ops::Range<u64>, rate: f64, p0: Vector3<f64>, v: Vector3<f64>) -> Trajectory {
    let frames: Vec<u64> = frames.collect();
    let n = frames.len();
    Trajectory {
        track_id: id,
        category: Category::Car,
        dimensions: Vector3::new(4.0, 2.0, 1.5),
        positions: frames
            .iter()
            .map(|&k| Point3::from(p0 + v * (k as f64 / rate)))
            .collect(),
        velocities: vec![v; n],
        yaws: vec![v.y.atan2(v.x); n],
        frames,
    }
}

/// Forward, reverse, forward, then at rest, along +x at 25 Hz.
fn parking_maneuver(segments: &[(f64, f64)], rest: f64) -> Trajectory {
    let rate = 25.0;
    let total: f64 = segments.iter().map(|s| s.0).sum::<f64>() + rest;
    let n = (total * rate).round() as u64 + 1;
    let state = |time: f64| {
        let (mut x, mut start) = (0.0, 0.0);
        for &(d, v) in segments {
            if time < start + d - 1e-9 {
                return (x + v * (time - start), v);
            }
            x += v * d;
            start += d;
        }
        (x, 0.0)
    };
    let frames: Vec<u64> = (0..n).collect();
    let states: Vec<(f64, f64)> = frames.iter().map(|&k| state(k as f64 / rate)).collect();
    Trajectory {
        track_id: 5,
        category: Category::Car,
        dimensions: Vector3::new(4.5, 1.8, 1.5),
        positions: states.iter().map(|s| Point3::new(s.0, 0.0, 0.0)).collect(),
        velocities: states.iter().map(|s| Vector3::new(s.1, 0.0, 0.0)).collect(),
        yaws: vec![0.0; n as usize],
        frames,
    }
}

fn criterion_8() -> Outcome {
    let ttc = time_to_contact(Vector2::new(-30.0, 0.0), Vector2::new(10.0, 0.0), 0.0);
    let ttc_ok = ttc.is_some_and(|t| (t - 3.0).abs() <= EXACT_TIME);

    // A's last sample inside the zone is at t = 10.0 s, B's first at 11.1 s.
    let rate = 10.0;
    let zone = Polygon::square(Point2::new(0.0, 0.0), 2.0);
    let a = sampled(
        1,
        0..300,
        rate,
        Vector3::new(-49.1, 0.0, 0.0),
        Vector3::new(5.0, 0.0, 0.0),
    );
    let b = sampled(
        2,
        0..300,
        rate,
        Vector3::new(0.0, -56.4, 0.0),
        Vector3::new(0.0, 5.0, 0.0),
    );
    let exit_a = a.frames[occupancy_intervals(&a, &zone)[0].1];
    let pet = mine_pet(&[a, b], &[zone], rate, &MiningConfig::default());
    let pet_value = pet.first().map(|e| e.value.seconds());
    let pet_ok = exit_a == 100 && pet.len() == 1 && pet_value.is_some_and(|v| (v - 1.1).abs() <= EXACT_TIME);

    let lot = Polygon::new(vec![
        Point2::new(-1.0, -5.0),
        Point2::new(100.0, -5.0),
        Point2::new(100.0, 5.0),
        Point2::new(-1.0, 5.0),
    ])
    .unwrap();
    let park = mine_parking(
        &[parking_maneuver(&[(5.0, 2.0), (3.0, -1.5), (2.0, 1.0)], 4.0)],
        &lot,
        25.0,
        &MiningConfig::default(),
    );
    let switches = match park.as_slice() {
        [e] => match e.value {
            EventValue::Parking { direction_switches, .. } => Some(direction_switches),
            _ => None,
        },
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut compared, mut dense_err, mut mismatched): (usize, f64, usize) = (0, 0.0, 0);
    for _ in 0..300 {
        let dp = Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let mut dv = Vector2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
        if rng.random_bool(0.5) {
            dv = dv * 0.2 - dp.normalize() * rng.random_range(1.0..15.0);
        }
        let r = rng.random_range(0.0..4.0);
        if dp.norm() <= r {
            continue;
        }
        let step = 1e-4;
        let stepped = (1..200_000)
            .map(|k| k as f64 * step)
            .find(|t| (dp + dv * *t).norm() <= r);
        match (time_to_contact(dp, dv, r), stepped) {
            (Some(a), Some(b)) => {
                compared += 1;
                dense_err = dense_err.max((a - b).abs());
            }
            (None, None) => {}
            // Contact beyond the stepping horizon.
            (Some(a), None) if a > 19.9 => {}
            _ => mismatched += 1,
        }
    }

    Outcome::new(
        ttc_ok && pet_ok && switches == Some(2) && mismatched == 0 && compared > 30 && dense_err < DENSE_TTC,
        format!(
            "TTC {ttc:?} s, PET {pet_value:?} s, parking switches {switches:?}, dense stepping max diff {dense_err:.1e} s over {compared} contacts"
        ),
    )
}

// ---- 9: data fidelity ----

/// Trajectories per parent class and recording.
const PER_RECORDING: [(ParentClass, [usize; 5]); 9] = [
    (ParentClass::Animal, [144, 301, 9, 121, 102]),
    (ParentClass::Bicycle, [39, 8631, 280, 8666, 120]),
    (ParentClass::Bus, [26, 63, 75, 27, 0]),
    (ParentClass::Car, [1471, 684, 2103, 7711, 1272]),
    (ParentClass::Motorcycle, [78, 322, 59, 446, 149]),
    (ParentClass::Pedestrian, [3006, 120833, 3824, 10007, 2557]),
    (ParentClass::Scooter, [17, 1366, 4, 86, 2]),
    (ParentClass::Truck, [37, 12, 38, 190, 198]),
    (ParentClass::Other, [238, 276, 237, 1227, 97]),
];

const PUBLISHED: [(ParentClass, usize); 9] = [
    (ParentClass::Pedestrian, 140_227),
    (ParentClass::Bicycle, 17_736),
    (ParentClass::Car, 13_241),
    (ParentClass::Scooter, 1_475),
    (ParentClass::Motorcycle, 1_054),
    (ParentClass::Animal, 677),
    (ParentClass::Truck, 475),
    (ParentClass::Bus, 191),
    (ParentClass::Other, 2_075),
];
const PUBLISHED_TOTAL: usize = 177_151;

fn record(
    track_id: u64,
    frame: u64,
    category: Category,
    position: LocalPoint,
    velocity: Vector3<f64>,
) -> TrajectoryRecord {
    TrajectoryRecord {
        frame_index: frame,
        track_id,
        category,
        position,
        velocity,
        acceleration: Vector3::zeros(),
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
        dimensions: Vector3::new(1.0, 1.0, 1.0),
    }
}

fn local_frame() -> LocalFrame {
    LocalFrame::from_anchor(&GeoCoordinate::new(48.1, 11.6, 500.0).unwrap()).unwrap()
}

fn write_records(path: &Path, rate: f64, records: &[TrajectoryRecord]) {
    let header = FileHeader::new("fixture", rate, local_frame());
    let mut w = io::create(path).unwrap();
    io::write_trajectories(&mut w, &header, records).unwrap();
}

fn fixture_counts() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for rec in 0..5 {
        let mut records = Vec::new();
        let mut id = 0u64;
        for (parent, counts) in PER_RECORDING {
            let kids: Vec<Category> = Category::ALL.iter().copied().filter(|c| c.parent() == parent).collect();
            for i in 0..counts[rec] {
                id += 1;
                let c = kids[i % kids.len()];
                let f0 = id % 500;
                let v = Vector3::new(1.0, 0.0, 0.0);
                records.push(record(id, f0, c, Point3::origin(), v));
                records.push(record(id, f0 + 1, c, Point3::new(0.04, 0.0, 0.0), v));
            }
        }
        records.sort_by_key(|r| (r.frame_index, r.track_id));
        let path = dir.path().join(format!("rec{rec}.tsv"));
        write_records(&path, 25.0, &records);
        paths.push(path);
    }
    let report = io::validate_dataset(dir.path(), &ValidationConfig::default()).map_err(|e| e.to_string())?;
    if !report.is_clean() {
        return Err(format!("fixture has {} findings", report.finding_count()));
    }
    let mut totals: BTreeMap<ParentClass, usize> = BTreeMap::new();
    let mut fine: BTreeMap<Category, usize> = BTreeMap::new();
    let mut n = 0;
    for p in &paths {
        let (_, records) = io::read_trajectories(io::open(p).unwrap()).map_err(|e| e.to_string())?;
        let trajs = trajectories_from_records(&records);
        n += trajs.len();
        for t in &trajs {
            *fine.entry(t.category).or_default() += 1;
        }
        for (p, c) in parent_class_counts(trajs.iter().map(|t| t.category)) {
            *totals.entry(p).or_default() += c;
        }
    }
    if n != PUBLISHED_TOTAL {
        return Err(format!("{n} trajectories instead of {PUBLISHED_TOTAL}"));
    }
    for (p, c) in PUBLISHED {
        if totals.get(&p).copied().unwrap_or(0) != c {
            return Err(format!("{p:?}: {:?} instead of {c}", totals.get(&p)));
        }
    }
    Ok(format!(
        "{n} trajectories, 9 parent-class totals match, {} categories present",
        fine.len()
    ))
}

fn close3(a: &Point3<f64>, b: &Point3<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol
}

/// Writes every schema from a pipeline run and compares what reads back.
fn round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        seed: 9,
        out: dir.path().to_path_buf(),
        synth: skytrack_cli::config::SynthSettings {
            preset: Preset::Accuracy,
            terrain: Some(grade(10.0)),
            scenario: None,
        },
        ..Default::default()
    };
    let out = generate(&cfg.scenario().map_err(|e| e.to_string())?).unwrap();
    run_stage(Stage::Synth, &cfg).map_err(|e| e.to_string())?;
    run_all(&cfg).map_err(|e| e.to_string())?;
    let path = |name: &str| cfg.output(name);
    let (m, r) = (METER_PRECISION, RADIAN_PRECISION);
    let mut checked = Vec::new();
    let mut check = |name: &str, ok: bool| -> Result<(), String> {
        checked.push(name.to_string());
        if ok {
            Ok(())
        } else {
            Err(format!("{name} does not round-trip"))
        }
    };
    let err = |e: io::IoError| e.to_string();

    let (_, truth) = io::read_truth(io::open(&path(files::TRUTH)).unwrap()).map_err(err)?;
    check(
        "truth",
        truth.len() == out.truth.objects.len()
            && truth.iter().zip(&out.truth.objects).all(|(a, b)| {
                a.object_id == b.object_id
                    && a.category == b.category
                    && close3(&a.position, &b.position, m)
                    && (a.velocity - b.velocity).amax() <= m
                    && (a.yaw - b.yaw).abs() <= r
                    && (a.pitch - b.pitch).abs() <= r
                    && (a.roll - b.roll).abs() <= r
            }),
    )?;

    let (_, dets) = io::read_detections(io::open(&path(files::DETECTIONS)).unwrap()).map_err(err)?;
    check(
        "detections",
        dets.len() == out.detections.len()
            && dets.iter().zip(&out.detections).all(|(a, b)| {
                a.frame_index == b.frame_index
                    && a.category == b.category
                    && (a.ground_center_px - b.ground_center_px).amax() <= m
                    && (a.depth - b.depth).abs() <= m
                    && a.bbox2d.iter().zip(&b.bbox2d).all(|(x, y)| (x - y).abs() <= m)
                    && angle_between(&a.orientation_cam, &b.orientation_cam) <= 4.0 * r
                    && (a.dimensions - b.dimensions).amax() <= m
            }),
    )?;

    let (_, corr) = io::read_correspondences(io::open(&path(files::CORRESPONDENCES)).unwrap()).map_err(err)?;
    check(
        "correspondences",
        corr.len() == out.correspondences.len()
            && corr.iter().zip(&out.correspondences).all(|((fa, a), (fb, b))| {
                fa == fb
                    && a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| (x.pixel - y.pixel).amax() <= m && close3(&x.world, &y.world, m))
            }),
    )?;

    let (_, gps) = io::read_gps_tags(io::open(&path(files::GPS)).unwrap()).map_err(err)?;
    // Stored as latitude/longitude at 1e-9 degrees, about 0.1 mm.
    check(
        "gps",
        gps.len() == out.gps_tags.len()
            && gps
                .iter()
                .zip(&out.gps_tags)
                .all(|((fa, a), (fb, b))| fa == fb && (a - b).norm() < 2e-4),
    )?;

    let (_, mesh) = io::read_mesh(io::open(&path(files::MESH)).unwrap()).map_err(err)?;
    check(
        "mesh",
        mesh.faces() == out.truth.mesh.faces()
            && mesh
                .vertices()
                .iter()
                .zip(out.truth.mesh.vertices())
                .all(|(a, b)| close3(a, b, m)),
    )?;

    let (_, ba) = io::read_ba_problem(io::open(&path(files::BA_PROBLEM)).unwrap()).map_err(err)?;
    let p = &out.ba_problem;
    check(
        "ba_problem",
        ba.lambda == p.lambda
            && ba.cameras.len() == p.cameras.len()
            && ba.cameras.iter().zip(&p.cameras).all(|(a, b)| {
                close3(&a.pose.center(), &b.pose.center(), m)
                    && angle_between(&a.pose.rotation, &b.pose.rotation) <= 4.0 * r
                    && a.gps_prior.is_some() == b.gps_prior.is_some()
            })
            && ba.points.iter().zip(&p.points).all(|(a, b)| close3(a, b, m))
            && ba.observations.len() == p.observations.len()
            && ba
                .observations
                .iter()
                .zip(&p.observations)
                .all(|(a, b)| a.camera == b.camera && a.point == b.point && (a.pixel - b.pixel).amax() <= m),
    )?;

    // Derived files: read, write again, read again; values must be stable.
    let header = FileHeader::new("round-trip", 25.0, out.truth.local_frame);
    let again = dir.path().join("again.tsv");

    let (_, frames) = io::read_camera_frames(io::open(&path(files::CAMERA_FRAMES)).unwrap()).map_err(err)?;
    io::write_camera_frames(&mut io::create(&again).unwrap(), &header, &frames).map_err(err)?;
    let (_, frames2) = io::read_camera_frames(io::open(&again).unwrap()).map_err(err)?;
    check(
        "camera_frames",
        frames.len() == frames2.len()
            && frames.iter().zip(&frames2).all(|(a, b)| {
                a.frame_index == b.frame_index
                    && a.status == b.status
                    && a.inlier_count == b.inlier_count
                    && close3(&a.pose.center(), &b.pose.center(), m)
                    && angle_between(&a.pose.rotation, &b.pose.rotation) <= 4.0 * r
            }),
    )?;

    let (_, refined) = io::read_refined(io::open(&path(files::REFINED)).unwrap()).map_err(err)?;
    io::write_refined(&mut io::create(&again).unwrap(), &header, &refined).map_err(err)?;
    let (_, refined2) = io::read_refined(io::open(&again).unwrap()).map_err(err)?;
    check(
        "refined",
        refined.len() == refined2.len()
            && refined.iter().zip(&refined2).all(|(a, b)| {
                a.frame_index == b.frame_index
                    && a.flag == b.flag
                    && close3(&a.position_world, &b.position_world, m)
                    && angle_between(&a.orientation_world, &b.orientation_world) <= 4.0 * r
            }),
    )?;

    let (_, records) = io::read_trajectories(io::open(&path(files::TRAJECTORIES)).unwrap()).map_err(err)?;
    io::write_trajectories(&mut io::create(&again).unwrap(), &header, &records).map_err(err)?;
    let (_, records2) = io::read_trajectories(io::open(&again).unwrap()).map_err(err)?;
    check("trajectories", records == records2)?;

    let (_, ground) = io::read_ground(io::open(&path(files::GROUND)).unwrap()).map_err(err)?;
    io::write_ground(&mut io::create(&again).unwrap(), &header, &ground).map_err(err)?;
    let (_, ground2) = io::read_ground(io::open(&again).unwrap()).map_err(err)?;
    check("ground", ground == ground2)?;

    let (_, events) = io::read_events(io::open(&path(files::EVENTS)).unwrap()).map_err(err)?;
    io::write_events(&mut io::create(&again).unwrap(), &header, &events).map_err(err)?;
    let (_, events2) = io::read_events(io::open(&again).unwrap()).map_err(err)?;
    check("events", events == events2)?;

    Ok(format!("{} schemas round-trip", checked.len()))
}

/// One file per defect class; each must be reported with its kind.
fn seeded_defects() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let v = Vector3::new(1.0, 0.0, 0.0);
    let track = |id: u64, n: u64| -> Vec<TrajectoryRecord> {
        (0..n)
            .map(|f| record(id, f, Category::Car, Point3::new(f as f64 * 0.04, 0.0, 0.0), v))
            .collect()
    };
    write_records(&dir.path().join("a_clean.tsv"), 25.0, &track(1, 10));

    let mut dup = track(1, 10);
    dup.insert(5, dup[4]);
    write_records(&dir.path().join("b_duplicate.tsv"), 25.0, &dup);

    let mut back = track(1, 10);
    back.swap(3, 6);
    write_records(&dir.path().join("c_non_monotone.tsv"), 25.0, &back);

    let mut teleport = vec![record(1, 0, Category::Car, Point3::origin(), Vector3::zeros())];
    teleport.push(record(
        1,
        1,
        Category::Car,
        Point3::new(100.0, 0.0, 0.0),
        Vector3::zeros(),
    ));
    write_records(&dir.path().join("d_speed.tsv"), 25.0, &teleport);

    let mut jerk = track(1, 10);
    jerk[5].acceleration = Vector3::new(40.0, 0.0, 0.0);
    write_records(&dir.path().join("e_acceleration.tsv"), 25.0, &jerk);

    write_records(&dir.path().join("f_rate.tsv"), 0.0, &track(1, 3));

    std::fs::write(dir.path().join("g_schema.tsv"), "not a trajectory file\n").unwrap();

    let report = io::validate_dataset(dir.path(), &ValidationConfig::default()).map_err(|e| e.to_string())?;
    let expect: [(&str, fn(&FindingKind) -> bool); 7] = [
        ("a_clean.tsv", |_| false),
        ("b_duplicate.tsv", |k| matches!(k, FindingKind::Duplicate { .. })),
        ("c_non_monotone.tsv", |k| matches!(k, FindingKind::NonMonotone { .. })),
        (
            "d_speed.tsv",
            |k| matches!(k, FindingKind::Speed { value, .. } if *value == 2500.0),
        ),
        ("e_acceleration.tsv", |k| matches!(k, FindingKind::Acceleration { .. })),
        ("f_rate.tsv", |k| matches!(k, FindingKind::BadRate(_))),
        ("g_schema.tsv", |k| matches!(k, FindingKind::Schema(_))),
    ];
    if report.files.len() != expect.len() {
        return Err(format!("{} files reported", report.files.len()));
    }
    for (f, (name, is_expected)) in report.files.iter().zip(expect) {
        let file: PathBuf = f.path.file_name().unwrap().into();
        if file != Path::new(name) {
            return Err(format!("unexpected file order at {name}"));
        }
        let flagged = f.findings.iter().any(|x| is_expected(&x.kind));
        let clean_expected = name == "a_clean.tsv";
        if clean_expected != f.findings.is_empty() || (!clean_expected && !flagged) {
            return Err(format!("{name}: {:?}", f.findings));
        }
    }
    Ok("6 defect classes flagged, clean file passes".into())
}

fn criterion_9() -> Outcome {
    let parts = [fixture_counts(), round_trips(), seeded_defects()];
    let pass = parts.iter().all(|p| p.is_ok());
    let detail: Vec<String> = parts
        .into_iter()
        .map(|p| p.unwrap_or_else(|e| format!("FAILED: {e}")))
        .collect();
    Outcome::new(pass, detail.join("; "))
}

// ---- 10: determinism ----

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn criterion_10() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let run = succeeded(&skytrack(&["synth", "--seed", "5", "--preset", "accuracy"], d))
            .and_then(|_| succeeded(&skytrack(&["run-all", "--seed", "5"], d)));
        if let Err(e) = run {
            return Outcome::new(false, e);
        }
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    Outcome::new(
        ta.keys().eq(tb.keys()) && differing.is_empty(),
        format!("{} files compared, {} differ", ta.len(), differing.len()),
    )
}

fn report(index: usize, name: &str, o: Outcome) -> bool {
    println!(
        "criterion {index:>2} {}: {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    let start = Instant::now();
    let mut passed = Vec::new();
    passed.push(report(1, "end-to-end exactness", criterion_1()));
    let accuracy = accuracy_runs();
    passed.push(report(2, "accuracy over seeds and terrains", criterion_2(&accuracy)));
    passed.push(report(3, "geo-registered bundle adjustment", criterion_3()));
    passed.push(report(4, "robust PnP", criterion_4()));
    passed.push(report(5, "projection, Euler and ground refinement", criterion_5()));
    passed.push(report(6, "BVH and B-spline oracles", criterion_6()));
    passed.push(report(7, "tracking", criterion_7(&accuracy)));
    passed.push(report(8, "analytics", criterion_8()));
    passed.push(report(9, "data fidelity", criterion_9()));
    passed.push(report(10, "determinism", criterion_10()));
    let failed = passed.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        passed.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
