//! Trajectory statistics and scenario mining.
//!
//! Everything here works on [`Trajectory`], a plain per-track view that can be
//! built from tracker output or from a trajectory file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::category::{Category, ParentClass};
use crate::geodesy::LocalPoint;
use crate::tracker::{group_by_track, Track, TrajectoryRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("no values to bin")]
    EmptyInput,
    #[error("bin width must be positive, got {0}")]
    BadBinWidth(f64),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("polygon needs at least 3 vertices, got {0}")]
    DegeneratePolygon(usize),
    #[error("invalid analytics configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: u64,
    pub category: Category,
    pub dimensions: Vector3<f64>,
    pub frames: Vec<u64>,
    pub positions: Vec<LocalPoint>,
    pub velocities: Vec<Vector3<f64>>,
    pub yaws: Vec<f64>,
}

impl Trajectory {
    pub fn from_track(t: &Track) -> Self {
        Self {
            track_id: t.track_id,
            category: t.category,
            dimensions: t.dimensions,
            frames: t.frames.clone(),
            positions: t.states.iter().map(|s| s.position).collect(),
            velocities: t.states.iter().map(|s| s.velocity).collect(),
            yaws: t.states.iter().map(|s| s.yaw).collect(),
        }
    }

    /// Records of a single track, sorted by frame.
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let first = &records[0];
        Self {
            track_id: first.track_id,
            category: first.category,
            dimensions: first.dimensions,
            frames: records.iter().map(|r| r.frame_index).collect(),
            positions: records.iter().map(|r| r.position).collect(),
            velocities: records.iter().map(|r| r.velocity).collect(),
            yaws: records.iter().map(|r| r.yaw).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time between first and last frame.
    pub fn duration(&self, rate_hz: f64) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (b - a) as f64 / rate_hz,
            _ => 0.0,
        }
    }

    /// Arc length of the position polyline.
    pub fn distance(&self) -> f64 {
        self.positions.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn mean_speed(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.velocities.iter().map(|v| v.norm()).sum::<f64>() / self.len() as f64
    }

    /// Plan-view bounding-circle radius: half the box diagonal.
    pub fn radius(&self) -> f64 {
        0.5 * self.dimensions.x.hypot(self.dimensions.y)
    }
}

pub fn trajectories_from_records(records: &[TrajectoryRecord]) -> Vec<Trajectory> {
    group_by_track(records)
        .values()
        .map(|r| Trajectory::from_records(r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub category: Category,
    pub trajectory_count: usize,
    pub mean_duration: f64,
    pub mean_distance: f64,
    pub mean_speed: f64,
}

/// Per-category averages, in [`Category::ALL`] order; categories without
/// trajectories are omitted.
pub fn class_stats(trajectories: &[Trajectory], rate_hz: f64) -> Vec<ClassStats> {
    let mut acc: BTreeMap<Category, (usize, f64, f64, f64)> = BTreeMap::new();
    for t in trajectories {
        let e = acc.entry(t.category).or_default();
        e.0 += 1;
        e.1 += t.duration(rate_hz);
        e.2 += t.distance();
        e.3 += t.mean_speed();
    }
    acc.into_iter()
        .map(|(category, (n, d, s, v))| {
            let n_f = n as f64;
            ClassStats {
                category,
                trajectory_count: n,
                mean_duration: d / n_f,
                mean_distance: s / n_f,
                mean_speed: v / n_f,
            }
        })
        .collect()
}

/// Trajectory counts merged into parent classes.
pub fn parent_class_counts<I: IntoIterator<Item = Category>>(categories: I) -> BTreeMap<ParentClass, usize> {
    let mut out = BTreeMap::new();
    for c in categories {
        *out.entry(c.parent()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Ttc,
    Pet,
    Parking,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Ttc => "TTC",
            EventKind::Pet => "PET",
            EventKind::Parking => "PARKING",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TTC" => Some(EventKind::Ttc),
            "PET" => Some(EventKind::Pet),
            "PARKING" => Some(EventKind::Parking),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventValue {
    Seconds(f64),
    Parking { time_to_park: f64, direction_switches: u32 },
}

impl EventValue {
    /// The time value: TTC, PET or time to park.
    pub fn seconds(&self) -> f64 {
        match *self {
            EventValue::Seconds(s) => s,
            EventValue::Parking { time_to_park, .. } => time_to_park,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub kind: EventKind,
    pub track_ids: Vec<u64>,
    pub t_event: f64,
    pub value: EventValue,
    pub location: LocalPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub ttc_threshold: f64,
    /// Pairs farther apart than this in plan view are not examined.
    pub ttc_max_distance: f64,
    pub pet_threshold: f64,
    /// Side of the square conflict zones placed at path crossings.
    pub zone_cell: f64,
    pub stop_speed: f64,
    pub stop_duration: f64,
    pub switch_hysteresis: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            ttc_threshold: 4.0,
            ttc_max_distance: 50.0,
            pet_threshold: 10.0,
            zone_cell: 2.0,
            stop_speed: 0.2,
            stop_duration: 3.0,
            switch_hysteresis: 0.15,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let all_positive = [
            self.ttc_threshold,
            self.ttc_max_distance,
            self.pet_threshold,
            self.zone_cell,
            self.stop_speed,
            self.stop_duration,
        ]
        .iter()
        .all(|v| *v > 0.0);
        if !all_positive || !(self.switch_hysteresis >= 0.0) {
            return Err(AnalyticsError::BadConfig(
                "thresholds must be positive and the hysteresis non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Smallest τ > 0 at which two discs with centers `dp` apart, closing at
/// relative velocity `dv`, touch. `None` when they never touch in the future
/// or already overlap.
pub fn time_to_contact(dp: Vector2<f64>, dv: Vector2<f64>, radius_sum: f64) -> Option<f64> {
    let c = dp.norm_squared() - radius_sum * radius_sum;
    if c <= 0.0 {
        return None;
    }
    let a = dv.norm_squared();
    let b = 2.0 * dp.dot(&dv);
    if a == 0.0 || b >= 0.0 {
        return None;
    }
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // Grazing contact can come out marginally negative.
        if disc < -1e-12 * b * b {
            return None;
        }
        disc = 0.0;
    }
    // Stable form of the smaller root (-b - √disc) / 2a, with b < 0.
    let tau = 2.0 * c / (-b + disc.sqrt());
    (tau > 0.0).then_some(tau)
}

fn xy(p: &LocalPoint) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

fn vxy(v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}

/// Per track pair, the frame with the smallest constant-velocity TTC;
/// reported when at most `cfg.ttc_threshold`.
pub fn mine_ttc(trajectories: &[Trajectory], rate_hz: f64, cfg: &MiningConfig) -> Vec<ScenarioEvent> {
    let mut by_frame: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, t) in trajectories.iter().enumerate() {
        for (k, &f) in t.frames.iter().enumerate() {
            by_frame.entry(f).or_default().push((ti, k));
        }
    }
    let mut best: BTreeMap<(usize, usize), (f64, u64, LocalPoint)> = BTreeMap::new();
    for (&frame, present) in &by_frame {
        for (a, &(ti, ki)) in present.iter().enumerate() {
            for &(tj, kj) in &present[a + 1..] {
                let (i, j) = (&trajectories[ti], &trajectories[tj]);
                let dp = xy(&i.positions[ki]) - xy(&j.positions[kj]);
                if dp.norm() > cfg.ttc_max_distance {
                    continue;
                }
                let dv = vxy(&i.velocities[ki]) - vxy(&j.velocities[kj]);
                let Some(tau) = time_to_contact(dp, dv, i.radius() + j.radius()) else {
                    continue;
                };
                let key = if i.track_id < j.track_id { (ti, tj) } else { (tj, ti) };
                let mid = Point3::from((i.positions[ki].coords + j.positions[kj].coords) * 0.5);
                match best.get(&key) {
                    Some(&(b, _, _)) if b <= tau => {}
                    _ => {
                        best.insert(key, (tau, frame, mid));
                    }
                }
            }
        }
    }
    let mut out: Vec<ScenarioEvent> = best
        .into_iter()
        .filter(|(_, (tau, _, _))| *tau <= cfg.ttc_threshold)
        .map(|((a, b), (tau, frame, loc))| ScenarioEvent {
            kind: EventKind::Ttc,
            track_ids: vec![trajectories[a].track_id, trajectories[b].track_id],
            t_event: frame as f64 / rate_hz,
            value: EventValue::Seconds(tau),
            location: loc,
        })
        .collect();
    sort_events(&mut out);
    out
}

fn sort_events(events: &mut [ScenarioEvent]) {
    events.sort_by(|a, b| {
        a.t_event
            .total_cmp(&b.t_event)
            .then_with(|| a.track_ids.cmp(&b.track_ids))
            .then_with(|| a.value.seconds().total_cmp(&b.value.seconds()))
    });
}

/// Simple plan-view polygon, either winding.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2<f64>>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2<f64>>) -> Result<Self, AnalyticsError> {
        if vertices.len() < 3 {
            return Err(AnalyticsError::DegeneratePolygon(vertices.len()));
        }
        if let Some(v) = vertices.iter().flat_map(|p| [p.x, p.y]).find(|v| !v.is_finite()) {
            return Err(AnalyticsError::NonFinite(v));
        }
        Ok(Self { vertices })
    }

    pub fn square(center: Point2<f64>, side: f64) -> Self {
        let h = side / 2.0;
        Self {
            vertices: vec![
                Point2::new(center.x - h, center.y - h),
                Point2::new(center.x + h, center.y - h),
                Point2::new(center.x + h, center.y + h),
                Point2::new(center.x - h, center.y + h),
            ],
        }
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    /// Even-odd rule; points on the boundary may fall either way.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn centroid(&self) -> Point2<f64> {
        let s: Vector2<f64> = self.vertices.iter().map(|p| p.coords).sum();
        Point2::from(s / self.vertices.len() as f64)
    }
}

/// Maximal runs of consecutive samples inside `zone`, as (first, last)
/// sample indices. A frame gap ends a run.
pub fn occupancy_intervals(t: &Trajectory, zone: &Polygon) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..t.len() {
        let inside = zone.contains(&Point2::new(t.positions[k].x, t.positions[k].y));
        let contiguous = k > 0 && t.frames[k] == t.frames[k - 1] + 1;
        if let Some(s) = start {
            if !inside || !contiguous {
                out.push((s, k - 1));
                start = None;
            }
        }
        if inside && start.is_none() {
            start = Some(k);
        }
    }
    if let Some(s) = start {
        out.push((s, t.len() - 1));
    }
    out
}

fn segment_intersection(p: Point2<f64>, p2: Point2<f64>, q: Point2<f64>, q2: Point2<f64>) -> Option<Point2<f64>> {
    let r = p2 - p;
    let s = q2 - q;
    let denom = r.perp(&s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = q - p;
    let t = qp.perp(&s) / denom;
    let u = qp.perp(&r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| p + r * t)
}

/// Square zones of side `cell`, snapped to a grid, at every point where the
/// plan-view paths of two different trajectories cross.
pub fn crossing_zones(trajectories: &[Trajectory], cell: f64) -> Vec<Polygon> {
    let key = |p: &Point2<f64>| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    // Spatial hash of segments by the cells their bounding boxes cover.
    let mut grid: HashMap<(i64, i64), Vec<(usize, usize)>> = HashMap::new();
    for (ti, t) in trajectories.iter().enumerate() {
        for k in 0..t.len().saturating_sub(1) {
            let (a, b) = (
                Point2::new(t.positions[k].x, t.positions[k].y),
                Point2::new(t.positions[k + 1].x, t.positions[k + 1].y),
            );
            let lo = key(&Point2::new(a.x.min(b.x), a.y.min(b.y)));
            let hi = key(&Point2::new(a.x.max(b.x), a.y.max(b.y)));
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    grid.entry((cx, cy)).or_default().push((ti, k));
                }
            }
        }
    }
    let seg = |ti: usize, k: usize| {
        let t = &trajectories[ti];
        (
            Point2::new(t.positions[k].x, t.positions[k].y),
            Point2::new(t.positions[k + 1].x, t.positions[k + 1].y),
        )
    };
    let mut cells = BTreeSet::new();
    for segs in grid.values() {
        for (a, &(ti, ki)) in segs.iter().enumerate() {
            for &(tj, kj) in &segs[a + 1..] {
                if ti == tj {
                    continue;
                }
                let (p, p2) = seg(ti, ki);
                let (q, q2) = seg(tj, kj);
                if let Some(x) = segment_intersection(p, p2, q, q2) {
                    cells.insert(key(&x));
                }
            }
        }
    }
    cells
        .into_iter()
        .map(|(cx, cy)| Polygon::square(Point2::new((cx as f64 + 0.5) * cell, (cy as f64 + 0.5) * cell), cell))
        .collect()
}

/// Post-encroachment times in each zone: entry of the later road user minus
/// exit of the earlier one, both at frame resolution (time of the first and
/// last sample inside). Overlapping occupancies are conflicts, not PET events.
pub fn mine_pet(
    trajectories: &[Trajectory],
    zones: &[Polygon],
    rate_hz: f64,
    cfg: &MiningConfig,
) -> Vec<ScenarioEvent> {
    let mut out = Vec::new();
    for zone in zones {
        let occ: Vec<Vec<(usize, usize)>> = trajectories.iter().map(|t| occupancy_intervals(t, zone)).collect();
        for i in 0..trajectories.len() {
            for j in i + 1..trajectories.len() {
                for &(ai, bi) in &occ[i] {
                    for &(aj, bj) in &occ[j] {
                        let ti = &trajectories[i];
                        let tj = &trajectories[j];
                        let (ei, xi) = (ti.frames[ai], ti.frames[bi]);
                        let (ej, xj) = (tj.frames[aj], tj.frames[bj]);
                        let (first, exit, second, entry, k_entry) = if xi < ej {
                            (ti, xi, tj, ej, aj)
                        } else if xj < ei {
                            (tj, xj, ti, ei, ai)
                        } else {
                            log::debug!(
                                "tracks {} and {} occupy a zone simultaneously; skipped",
                                ti.track_id,
                                tj.track_id
                            );
                            continue;
                        };
                        let pet = (entry - exit) as f64 / rate_hz;
                        if pet > cfg.pet_threshold {
                            continue;
                        }
                        out.push(ScenarioEvent {
                            kind: EventKind::Pet,
                            track_ids: vec![first.track_id, second.track_id],
                            t_event: entry as f64 / rate_hz,
                            value: EventValue::Seconds(pet),
                            location: second.positions[k_entry],
                        });
                    }
                }
            }
        }
    }
    sort_events(&mut out);
    out
}

/// Number of sign changes of `values`, where a sign only registers once a
/// value leaves the band [-h, h].
pub fn direction_switches(values: &[f64], hysteresis: f64) -> u32 {
    let mut sign = 0i8;
    let mut switches = 0;
    for &v in values {
        let s = if v > hysteresis {
            1
        } else if v < -hysteresis {
            -1
        } else {
            continue;
        };
        if sign != 0 && s != sign {
            switches += 1;
        }
        sign = s;
    }
    switches
}

/// Parking maneuvers of vehicle-class trajectories inside `region`. A
/// maneuver starts at the last entry into the region (or the first sample
/// when the track begins inside) and ends when the speed drops below
/// `stop_speed` for at least `stop_duration`.
pub fn mine_parking(
    trajectories: &[Trajectory],
    region: &Polygon,
    rate_hz: f64,
    cfg: &MiningConfig,
) -> Vec<ScenarioEvent> {
    let mut out = Vec::new();
    for t in trajectories.iter().filter(|t| t.category.is_vehicle()) {
        for (start, end) in occupancy_intervals(t, region) {
            let mut k = start;
            let mut from = start;
            while k <= end {
                if t.velocities[k].norm() >= cfg.stop_speed {
                    k += 1;
                    continue;
                }
                let stop = k;
                while k <= end && t.velocities[k].norm() < cfg.stop_speed {
                    k += 1;
                }
                let held = (t.frames[k - 1] - t.frames[stop]) as f64 / rate_hz;
                if held < cfg.stop_duration || stop == from {
                    continue;
                }
                let longitudinal: Vec<f64> = (from..=stop)
                    .map(|i| t.velocities[i].x * t.yaws[i].cos() + t.velocities[i].y * t.yaws[i].sin())
                    .collect();
                out.push(ScenarioEvent {
                    kind: EventKind::Parking,
                    track_ids: vec![t.track_id],
                    t_event: t.frames[stop] as f64 / rate_hz,
                    value: EventValue::Parking {
                        time_to_park: (t.frames[stop] - t.frames[from]) as f64 / rate_hz,
                        direction_switches: direction_switches(&longitudinal, cfg.switch_hysteresis),
                    },
                    location: t.positions[stop],
                });
                from = k.min(end);
            }
        }
    }
    sort_events(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of the first bin, a multiple of the width.
    pub start: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let lo = self.start + i as f64 * self.bin_width;
        (lo, lo + self.bin_width)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Tab-separated `bin_start bin_end count` rows with a header.
    pub fn to_columns(&self) -> String {
        let mut s = String::from("bin_start\tbin_end\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            let _ = writeln!(s, "{lo}\t{hi}\t{c}");
        }
        s
    }
}

/// Fixed-width, left-closed bins aligned to multiples of `bin_width`.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram, AnalyticsError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(AnalyticsError::BadBinWidth(bin_width));
    }
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite(*v));
    }
    let index = |v: f64| (v / bin_width).floor() as i64;
    let lo = values.iter().map(|&v| index(v)).min().unwrap();
    let hi = values.iter().map(|&v| index(v)).max().unwrap();
    let mut counts = vec![0; (hi - lo + 1) as usize];
    for &v in values {
        counts[(index(v) - lo) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        start: lo as f64 * bin_width,
        counts,
    })
}
