use super::*;
use crate::camera::{CameraFrame, FrameStatus};
use crate::refine::{backproject, refine_all, world_attitude};
use crate::rotation::angle_between;
use crate::tracker::{run_tracker, to_records, TrackerConfig};

fn true_frames(out: &SynthOutput) -> Vec<CameraFrame> {
    out.truth
        .camera_poses
        .iter()
        .map(|(f, pose)| CameraFrame {
            frame_index: *f,
            timestamp: *f as f64 / 25.0,
            intrinsics: out.truth.intrinsics,
            pose: *pose,
            gps_prior: None,
            inlier_count: 0,
            rms_reprojection: 0.0,
            status: FrameStatus::Localized,
        })
        .collect()
}

fn truth_of(out: &SynthOutput, frame: u64, id: u64) -> TruthState {
    *out.truth
        .objects
        .iter()
        .find(|t| t.frame_index == frame && t.object_id == id)
        .unwrap()
}

#[test]
fn generation_is_deterministic() {
    let s = SynthScenario::accuracy(3, Terrain::Flat);
    let a = generate(&s).unwrap();
    let b = generate(&s).unwrap();
    assert_eq!(a.detections, b.detections);
    assert_eq!(a.correspondences, b.correspondences);
    assert_eq!(a.gps_tags, b.gps_tags);
    assert_eq!(a.ba_problem, b.ba_problem);
    let c = generate(&SynthScenario::accuracy(4, Terrain::Flat)).unwrap();
    assert_ne!(a.detections, c.detections);
}

#[test]
fn motions_have_consistent_velocity() {
    let motions = [
        Motion::Line {
            start: [1.0, 2.0],
            heading_deg: 30.0,
            speed: 3.0,
            acceleration: 0.5,
        },
        Motion::Arc {
            center: [0.0, 0.0],
            radius: 10.0,
            start_angle_deg: 45.0,
            speed: 5.0,
        },
        Motion::StopAndGo {
            start: [0.0, 0.0],
            heading_deg: 0.0,
            speed: 6.0,
            stop_at: 1.0,
            stop_for: 1.0,
        },
    ];
    let h = 1e-6;
    for m in &motions {
        for t in [0.3, 2.7, 4.1] {
            let fd = (m.state(t + h).position - m.state(t - h).position) / (2.0 * h);
            assert!((fd - m.state(t).velocity).norm() < 1e-6, "{m:?} at {t}");
        }
    }
    let arc = &motions[1];
    assert!(((arc.state(1.0).position.coords).norm() - 10.0).abs() < 1e-12);
    // Stop-and-go stands still while stopped.
    let sg = &motions[2];
    assert_eq!(sg.state(1.2).position, sg.state(1.9).position);
    assert!((sg.state(3.0).position.x - 12.0).abs() < 1e-12);
}

#[test]
fn park_segments_accumulate() {
    let m = Motion::Park {
        start: [0.0, 0.0],
        heading_deg: 90.0,
        segments: vec![[2.0, 3.0], [1.0, -2.0]],
    };
    assert!((m.state(2.0).position.y - 6.0).abs() < 1e-12);
    assert!((m.state(3.0).position.y - 4.0).abs() < 1e-12);
    assert!((m.state(10.0).position.y - 4.0).abs() < 1e-12);
    assert_eq!(m.state(10.0).velocity, Vector2::zeros());
    assert_eq!(m.state(2.5).velocity.y, -2.0);
}

#[test]
fn ground_attitude_puts_the_box_on_the_surface() {
    for terrain in [
        Terrain::Inclined {
            grade_percent: 20.0,
            azimuth_deg: 70.0,
        },
        Terrain::Rolling {
            amplitude: 1.0,
            wavelength: 60.0,
        },
    ] {
        for yaw in [0.0, 1.0, -2.5, 3.0] {
            let n = terrain.normal(7.0, -4.0);
            let (p, r) = ground_attitude(yaw, &n);
            let rw = from_world_attitude(yaw, p, r);
            // Box z points down.
            assert!((rw * Vector3::z() + n).norm() < 1e-12);
            let (y2, p2, r2) = world_attitude(&rw);
            assert!((wrap_angle_diff(y2, yaw)).abs() < 1e-12);
            assert!((p2 - p).abs() < 1e-12 && (r2 - r).abs() < 1e-12);
        }
    }
}

fn wrap_angle_diff(a: f64, b: f64) -> f64 {
    crate::rotation::wrap_angle(a - b)
}

#[test]
fn steep_terrain_is_rejected() {
    let s = SynthScenario {
        terrain: Terrain::Inclined {
            grade_percent: 30.0,
            azimuth_deg: 0.0,
        },
        ..SynthScenario::exact(1)
    };
    assert!(matches!(generate(&s), Err(SynthError::InvalidScenario(_))));
}

#[test]
fn noiseless_backprojection_hits_the_truth() {
    let s = SynthScenario::exact(5);
    let out = generate(&s).unwrap();
    assert!(!out.detections.is_empty());
    for (d, id) in out.detections.iter().zip(&out.detection_ids) {
        let pose = out.truth.camera_poses[d.frame_index as usize].1;
        let xc = backproject(&out.truth.intrinsics, &d.ground_center_px, d.depth).unwrap();
        let world = pose.camera_to_world().apply(&Point3::from(xc));
        let t = truth_of(&out, d.frame_index, *id);
        assert!((world - t.position).norm() < 1e-9);
    }
}

#[test]
fn zero_gps_noise_tags_the_true_centers() {
    let out = generate(&SynthScenario::exact(6)).unwrap();
    for ((f, g), (f2, pose)) in out.gps_tags.iter().zip(&out.truth.camera_poses) {
        assert_eq!(f, f2);
        assert!((g - pose.center()).norm() < 1e-12);
    }
    for (c, t) in out.ba_problem.cameras.iter().zip(&out.truth.ba_truth.cameras) {
        assert!((c.gps_prior.unwrap() - t.pose.center()).norm() < 1e-12);
    }
}

#[test]
fn refinement_removes_a_depth_bias() {
    let s = SynthScenario {
        noise: NoiseConfig {
            depth_bias: 5.0,
            ..Default::default()
        },
        ..SynthScenario::exact(7)
    };
    let out = generate(&s).unwrap();
    let refined = refine_all(&out.detections, &true_frames(&out), &out.truth.mesh);
    assert_eq!(refined.len(), out.detections.len());
    for (r, id) in refined.iter().zip(&out.detection_ids) {
        let t = truth_of(&out, r.frame_index, *id);
        assert!((r.position_world - t.position).norm() < 1e-6, "{r:?} {t:?}");
        assert!(angle_between(&r.orientation_world, &t.orientation()) < 1e-6);
    }
}

#[test]
fn correspondences_respect_the_outlier_fraction() {
    let s = SynthScenario {
        noise: NoiseConfig {
            outlier_fraction: 0.25,
            pixel_std: 1.0,
            ..Default::default()
        },
        ..SynthScenario::exact(8)
    };
    let out = generate(&s).unwrap();
    let (_, pose) = out.truth.camera_poses[0];
    let k = out.truth.intrinsics;
    let corr = &out.correspondences[0].1;
    let outliers = corr
        .iter()
        .filter(|c| (k.apply(&pose.to_camera(&c.world)) - c.pixel).norm() > 10.0)
        .count();
    let expected = (0.25 * s.correspondences_per_frame as f64).round() as usize;
    // Random outliers can land near their true pixel by chance.
    assert!(
        outliers <= expected && outliers + 2 >= expected,
        "{outliers} vs {expected}"
    );
}

#[test]
fn tracking_noiseless_refinements_scores_perfectly() {
    let out = generate(&SynthScenario::exact(9)).unwrap();
    let refined = refine_all(&out.detections, &true_frames(&out), &out.truth.mesh);
    let tracks = run_tracker(&refined, &TrackerConfig::default()).unwrap();
    let records = to_records(&tracks);
    let report = evaluate(&records, &out.truth.objects, EVALUATION_GATE).unwrap();
    assert_eq!(report.id_switches, 0);
    assert_eq!(report.false_positives, 0);
    assert!(report.mota > 0.99, "{report:?}");
    assert!(report.max_position_error < 0.01, "{report:?}");
}

fn record(frame: u64, id: u64, x: f64, yaw: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        frame_index: frame,
        track_id: id,
        category: Category::Car,
        position: Point3::new(x, 0.0, 0.0),
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
        yaw,
        pitch: 0.0,
        roll: 0.0,
        dimensions: Vector3::new(4.0, 2.0, 1.5),
    }
}

fn state(frame: u64, id: u64, x: f64) -> TruthState {
    TruthState {
        frame_index: frame,
        object_id: id,
        category: Category::Car,
        position: Point3::new(x, 0.0, 0.0),
        velocity: Vector3::zeros(),
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
        dimensions: Vector3::new(4.0, 2.0, 1.5),
    }
}

use crate::tracker::TrajectoryRecord;

#[test]
fn evaluation_of_identity_and_shift() {
    let truth: Vec<TruthState> = (0..10).flat_map(|f| [state(f, 1, 0.0), state(f, 2, 20.0)]).collect();
    let exact: Vec<TrajectoryRecord> = truth
        .iter()
        .map(|t| record(t.frame_index, t.object_id + 100, t.position.x, 0.0))
        .collect();
    let r = evaluate(&exact, &truth, 2.0).unwrap();
    assert_eq!((r.matched, r.misses, r.false_positives, r.id_switches), (20, 0, 0, 0));
    assert_eq!(r.mota, 1.0);
    assert_eq!(r.median_position_error, 0.0);

    // Half the records shifted by 0.1 m: median of ten zeros and ten 0.1s.
    let shifted: Vec<TrajectoryRecord> = truth
        .iter()
        .map(|t| {
            record(
                t.frame_index,
                t.object_id,
                t.position.x + if t.object_id == 1 { 0.1 } else { 0.0 },
                0.0,
            )
        })
        .collect();
    let r = evaluate(&shifted, &truth, 2.0).unwrap();
    assert!((r.median_position_error - 0.05).abs() < 1e-12);
    assert!((r.max_position_error - 0.1).abs() < 1e-12);
    assert!((r.mean_position_error - 0.05).abs() < 1e-12);
}

#[test]
fn evaluation_counts_by_hand() {
    // Frame 0: both matched. Frame 1: truth 2 missed, track 9 spurious.
    // Frame 2: truth 1 picked up by track 12, an identity switch.
    let truth = vec![
        state(0, 1, 0.0),
        state(0, 2, 10.0),
        state(1, 1, 0.0),
        state(1, 2, 10.0),
        state(2, 1, 0.0),
    ];
    let records = vec![
        record(0, 11, 0.5, 0.2),
        record(0, 22, 10.0, -0.1),
        record(1, 11, 0.0, 0.0),
        record(1, 9, 30.0, 0.0),
        record(2, 12, 1.0, 0.0),
    ];
    let r = evaluate(&records, &truth, 2.0).unwrap();
    assert_eq!(r.ground_truth, 5);
    assert_eq!(r.matched, 4);
    assert_eq!(r.misses, 1);
    assert_eq!(r.false_positives, 1);
    assert_eq!(r.id_switches, 1);
    assert!((r.mota - 0.4).abs() < 1e-12);
    // Errors 0.5, 0, 0, 1 → median 0.25.
    assert!((r.median_position_error - 0.25).abs() < 1e-12);
    assert!((r.median_yaw_error - 0.05).abs() < 1e-12);
}

#[test]
fn evaluation_rejects_bad_input() {
    let truth = vec![state(0, 1, 0.0)];
    assert_eq!(evaluate(&[], &[], 2.0), Err(EvaluationError::NoTruth));
    assert_eq!(evaluate(&[], &truth, 0.0), Err(EvaluationError::BadGate(0.0)));
    assert!(matches!(
        evaluate(&[record(50, 1, 0.0, 0.0)], &truth, 2.0),
        Err(EvaluationError::DisjointFrames { .. })
    ));
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert!(median(&[]).is_nan());
}
