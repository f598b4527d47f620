use super::*;
use crate::refine::{from_world_attitude, RefinementFlag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

fn det(frame: u64, p: LocalPoint, yaw: f64, category: Category) -> RefinedDetection {
    RefinedDetection {
        frame_index: frame,
        category,
        score: 0.9,
        position_world: p,
        orientation_world: from_world_attitude(yaw, 0.0, 0.0),
        dimensions: Vector3::new(4.5, 1.8, 1.5),
        flag: RefinementFlag::GroundSnapped,
    }
}

fn obs(p: LocalPoint) -> Observation {
    Observation::from_detection(&det(0, p, 0.0, Category::Car))
}

fn cfg() -> TrackerConfig {
    TrackerConfig::default()
}

#[test]
fn close_detection_matches_and_far_one_does_not() {
    let t = [(Point3::origin(), Category::Car)];
    let m = associate(&t, &[(Point3::new(0.3, 0.0, 0.0), Category::Car)], 2.0, 1.0);
    assert_eq!(m.pairs, vec![(0, 0)]);
    let m = associate(&t, &[(Point3::new(5.0, 0.0, 0.0), Category::Car)], 2.0, 1.0);
    assert!(m.pairs.is_empty());
    assert_eq!(m.unmatched_tracks, vec![0]);
    assert_eq!(m.unmatched_detections, vec![0]);
}

#[test]
fn category_mismatch_is_penalized() {
    let t = [(Point3::origin(), Category::Car)];
    let d = [
        (Point3::new(0.2, 0.0, 0.0), Category::Truck),
        (Point3::new(0.9, 0.0, 0.0), Category::Car),
    ];
    let m = associate(&t, &d, 2.0, 1.0);
    assert_eq!(m.pairs, vec![(0, 1)]);
}

#[test]
fn gated_pairs_do_not_distort_the_assignment() {
    // Track 0 could take either detection, track 1 only the first. Gating
    // must not force track 0 onto the second when that loses a match.
    let t = [
        (Point3::new(0.0, 0.0, 0.0), Category::Car),
        (Point3::new(1.5, 0.0, 0.0), Category::Car),
    ];
    let d = [
        (Point3::new(0.4, 0.0, 0.0), Category::Car),
        (Point3::new(-1.5, 0.0, 0.0), Category::Car),
    ];
    let m = associate(&t, &d, 2.0, 1.0);
    let mut pairs = m.pairs.clone();
    pairs.sort();
    assert_eq!(pairs, vec![(0, 1), (1, 0)]);
}

#[test]
fn prediction_without_motion_keeps_position() {
    let p = Point3::new(3.0, -2.0, 1.0);
    let mut s = TrackState::from_mean(&StateVector::zeros(), StateCovariance::identity());
    s.position = p;
    let next = kalman_step(&s, 0.04, None, &cfg()).unwrap();
    assert_eq!(next.position, p);
    assert!(next.covariance[(0, 0)] > 1.0);
    assert!(kalman_step(&s, 0.0, None, &cfg()).is_err());
}

#[test]
fn stationary_velocity_converges() {
    let p = Point3::new(10.0, 5.0, 0.0);
    let mut s = TrackState::from_mean(&StateVector::zeros(), StateCovariance::identity() * 100.0);
    s.position = p;
    s.velocity = Vector3::new(1.0, -0.5, 0.0);
    for _ in 0..50 {
        s = kalman_step(&s, 0.04, Some(&p), &cfg()).unwrap();
    }
    assert!(s.velocity.norm() < 1e-3, "{}", s.velocity.norm());
}

fn straight(n: usize, speed: f64) -> (Vec<u64>, Vec<Observation>) {
    let frames: Vec<u64> = (0..n as u64).collect();
    let o = frames
        .iter()
        .map(|&f| obs(Point3::new(speed * f as f64 / 25.0, 2.0, 0.0)))
        .collect();
    (frames, o)
}

#[test]
fn constant_velocity_is_recovered() {
    let (frames, o) = straight(100, 10.0);
    let t = filter_observations(1, &frames, &o, &cfg()).unwrap();
    for s in &t.states[10..] {
        assert!((s.velocity - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-3);
    }
}

#[test]
fn noiseless_smoothing_is_identity() {
    let (frames, o) = straight(80, 10.0);
    let filtered = filter_observations(1, &frames, &o, &cfg()).unwrap();
    let smoothed = rts_smooth(&filtered).unwrap();
    for (a, b) in filtered.states.iter().zip(&smoothed.states) {
        assert!((a.mean() - b.mean()).norm() < 1e-9);
    }
    assert_eq!(filtered.states.last(), smoothed.states.last());
}

#[test]
fn smoothing_requires_history_and_passes_single_states() {
    let (frames, o) = straight(10, 1.0);
    let mut t = filter_observations(4, &frames, &o, &cfg()).unwrap();
    let mut single = t.clone();
    single.states.truncate(1);
    single.frames.truncate(1);
    single.observations.truncate(1);
    single.priors.clear();
    assert_eq!(rts_smooth(&single).unwrap(), single);
    t.priors.pop();
    assert_eq!(rts_smooth(&t), Err(TrackerError::MissingHistory(4)));
}

fn noisy_track(seed: u64) -> (Vec<LocalPoint>, Track) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let frames: Vec<u64> = (0..150).collect();
    let truth: Vec<LocalPoint> = frames
        .iter()
        .map(|&f| {
            let t = f as f64 / 25.0;
            Point3::new(8.0 * t, 0.5 * t * t, 0.0)
        })
        .collect();
    let o: Vec<Observation> = truth
        .iter()
        .map(|p| obs(p + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))))
        .collect();
    (truth, filter_observations(1, &frames, &o, &cfg()).unwrap())
}

fn rmse(truth: &[LocalPoint], t: &Track) -> f64 {
    let s: f64 = truth
        .iter()
        .zip(&t.states)
        .map(|(p, s)| (p - s.position).norm_squared())
        .sum();
    (s / truth.len() as f64).sqrt()
}

#[test]
fn smoothing_reduces_error_on_every_seed() {
    for seed in 0..100 {
        let (truth, filtered) = noisy_track(seed);
        let smoothed = rts_smooth(&filtered).unwrap();
        let (ef, es) = (rmse(&truth, &filtered), rmse(&truth, &smoothed));
        assert!(es < ef, "seed {seed}: smoothed {es} vs filtered {ef}");
    }
}

#[test]
fn smoothed_covariance_is_bounded_by_filtered() {
    let (_, filtered) = noisy_track(7);
    let smoothed = rts_smooth(&filtered).unwrap();
    for (f, s) in filtered.states.iter().zip(&smoothed.states) {
        let diff = f.covariance - s.covariance;
        let min = diff.symmetric_eigen().eigenvalues.min();
        assert!(min > -1e-12 * f.covariance.norm(), "{min}");
        assert!(s.covariance.cholesky().is_some());
    }
}

fn two_vehicles(gap: Option<std::ops::Range<u64>>) -> Vec<RefinedDetection> {
    let mut out = Vec::new();
    for f in 0..200u64 {
        let x = 12.0 * f as f64 / 25.0;
        out.push(det(f, Point3::new(x, 0.0, 0.0), 0.0, Category::Car));
        if gap.as_ref().is_some_and(|g| g.contains(&f)) {
            continue;
        }
        out.push(det(f, Point3::new(x, 5.0, 0.0), 0.0, Category::Van));
    }
    out
}

#[test]
fn parallel_vehicles_keep_their_identities() {
    let tracks = run_tracker(&two_vehicles(None), &cfg()).unwrap();
    assert_eq!(tracks.len(), 2);
    for t in &tracks {
        assert_eq!(t.len(), 200);
        let y = t.observations[0].unwrap().position.y;
        assert!(t.observations.iter().all(|o| o.unwrap().position.y == y));
    }
    assert_eq!(tracks[0].track_id, 1);
    assert_eq!(tracks[1].track_id, 2);
}

#[test]
fn coasting_bridges_a_gap() {
    let tracks = run_tracker(&two_vehicles(Some(80..88)), &cfg()).unwrap();
    assert_eq!(tracks.len(), 2);
    let van = tracks.iter().find(|t| t.category == Category::Van).unwrap();
    assert_eq!(van.len(), 200);
    assert_eq!(van.observations.iter().filter(|o| o.is_none()).count(), 8);
    for (f, s) in van.frames.iter().zip(&van.states) {
        let x = 12.0 * *f as f64 / 25.0;
        assert!((s.position - Point3::new(x, 5.0, 0.0)).norm() < 1e-6);
    }
}

#[test]
fn empty_and_unsorted_input() {
    assert!(run_tracker(&[], &cfg()).unwrap().is_empty());
    let d = vec![
        det(3, Point3::origin(), 0.0, Category::Car),
        det(1, Point3::origin(), 0.0, Category::Car),
    ];
    assert_eq!(
        run_tracker(&d, &cfg()),
        Err(TrackerError::Unsorted { previous: 3, found: 1 })
    );
}

#[test]
fn short_lived_and_broken_tentatives_are_dropped() {
    // Two detections never confirm; a one-frame hole resets a tentative.
    let d = vec![
        det(0, Point3::origin(), 0.0, Category::Car),
        det(1, Point3::origin(), 0.0, Category::Car),
        det(3, Point3::origin(), 0.0, Category::Car),
        det(4, Point3::origin(), 0.0, Category::Car),
    ];
    assert!(run_tracker(&d, &cfg()).unwrap().is_empty());
}

#[test]
fn straight_track_reports_exact_speed() {
    let d: Vec<_> = (0..120u64)
        .map(|f| det(f, Point3::new(10.0 * f as f64 / 25.0, 0.0, 0.0), 0.0, Category::Car))
        .collect();
    let tracks = run_tracker(&d, &cfg()).unwrap();
    assert_eq!(tracks.len(), 1);
    for s in &tracks[0].states {
        assert!((s.speed() - 10.0).abs() < 1e-3, "{}", s.speed());
    }
}

#[test]
fn circular_motion_has_centripetal_acceleration() {
    let (r, v) = (20.0, 8.0);
    let d: Vec<_> = (0..400u64)
        .map(|f| {
            let a = v / r * f as f64 / 25.0;
            det(
                f,
                Point3::new(r * a.cos(), r * a.sin(), 0.0),
                a + PI / 2.0,
                Category::Car,
            )
        })
        .collect();
    let tracks = run_tracker(&d, &cfg()).unwrap();
    assert_eq!(tracks.len(), 1);
    let expected = v * v / r;
    for s in &tracks[0].states {
        let a = s.acceleration.norm();
        assert!((a - expected).abs() < 0.02 * expected, "{a} vs {expected}");
    }
}

#[test]
fn yaw_is_unwrapped_across_pi() {
    let d: Vec<_> = (0..60u64)
        .map(|f| {
            det(
                f,
                Point3::new(-0.4 * f as f64, 0.0, 0.0),
                PI - 0.3 + 0.01 * f as f64,
                Category::Car,
            )
        })
        .collect();
    let tracks = run_tracker(&d, &cfg()).unwrap();
    let yaw: Vec<f64> = tracks[0].states.iter().map(|s| s.yaw).collect();
    assert!(yaw.windows(2).all(|w| (w[1] - w[0]).abs() < 0.1));
    assert!(yaw.last().unwrap() > &PI);
}

#[test]
fn unwrap_contract() {
    let raw = [3.0, -3.1, 3.1, -3.0];
    let u = unwrap_angles(&raw);
    assert!(u.windows(2).all(|w| (w[1] - w[0]).abs() <= PI));
    assert_eq!(u[0], 3.0);
}

#[test]
fn majority_category_and_median_dimensions() {
    let mut d: Vec<_> = (0..10u64)
        .map(|f| det(f, Point3::new(f as f64 * 0.1, 0.0, 0.0), 0.0, Category::Car))
        .collect();
    d[4].category = Category::Van;
    d[6].dimensions = Vector3::new(100.0, 1.0, 1.0);
    let tracks = run_tracker(&d, &cfg()).unwrap();
    assert_eq!(tracks[0].category, Category::Car);
    assert_eq!(tracks[0].dimensions, Vector3::new(4.5, 1.8, 1.5));
}

#[test]
fn records_are_unique_and_ordered() {
    let tracks = run_tracker(&two_vehicles(None), &cfg()).unwrap();
    let recs = to_records(&tracks);
    assert_eq!(recs.len(), 400);
    assert!(recs
        .windows(2)
        .all(|w| (w[0].frame_index, w[0].track_id) < (w[1].frame_index, w[1].track_id)));
    let grouped = group_by_track(&recs);
    assert_eq!(grouped.len(), 2);
}

#[test]
fn tracker_is_deterministic_and_covariances_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut d = two_vehicles(Some(50..55));
    for x in &mut d {
        x.position_world += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), 0.0);
    }
    let a = run_tracker(&d, &cfg()).unwrap();
    let b = run_tracker(&d, &cfg()).unwrap();
    assert_eq!(a, b);
    for t in &a {
        assert!(t.frames.windows(2).all(|w| w[0] < w[1]));
        for s in &t.states {
            assert!(s.covariance.cholesky().is_some());
        }
    }
}
