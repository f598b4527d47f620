//! Scoring of trajectories against synthetic truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use super::TruthState;
use crate::rotation::wrap_angle;
use crate::tracker::TrajectoryRecord;

/// Default matching distance between a track and a truth object, meters.
pub const EVALUATION_GATE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("no ground-truth states")]
    NoTruth,
    #[error("gate must be positive, got {0}")]
    BadGate(f64),
    #[error("trajectories cover frames {tracks:?} but the truth covers {truth:?}")]
    DisjointFrames { tracks: (u64, u64), truth: (u64, u64) },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub ground_truth: usize,
    pub matched: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    /// 1 − (misses + false positives + id switches) / ground truth.
    pub mota: f64,
    pub median_position_error: f64,
    pub mean_position_error: f64,
    pub max_position_error: f64,
    pub median_yaw_error: f64,
}

/// Median with the two middle values averaged for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-frame greedy matching on 3D distance, ties broken
/// by truth id then track id. A truth object whose match moves to a different
/// track than its previous match counts as an identity switch.
pub fn evaluate(
    records: &[TrajectoryRecord],
    truth: &[TruthState],
    gate: f64,
) -> Result<EvaluationReport, EvaluationError> {
    if !(gate > 0.0) {
        return Err(EvaluationError::BadGate(gate));
    }
    if truth.is_empty() {
        return Err(EvaluationError::NoTruth);
    }
    let span = |it: &mut dyn Iterator<Item = u64>| it.fold((u64::MAX, 0), |(lo, hi), f| (lo.min(f), hi.max(f)));
    let truth_span = span(&mut truth.iter().map(|t| t.frame_index));
    if !records.is_empty() {
        let track_span = span(&mut records.iter().map(|r| r.frame_index));
        if track_span.1 < truth_span.0 || track_span.0 > truth_span.1 {
            return Err(EvaluationError::DisjointFrames {
                tracks: track_span,
                truth: truth_span,
            });
        }
    }

    let mut truth_by_frame: BTreeMap<u64, Vec<&TruthState>> = BTreeMap::new();
    for t in truth {
        truth_by_frame.entry(t.frame_index).or_default().push(t);
    }
    let mut recs_by_frame: BTreeMap<u64, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        recs_by_frame.entry(r.frame_index).or_default().push(r);
    }
    let frames: BTreeSet<u64> = truth_by_frame.keys().chain(recs_by_frame.keys()).copied().collect();

    let mut matched = 0;
    let mut misses = 0;
    let mut false_positives = 0;
    let mut id_switches = 0;
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut pos_err = Vec::new();
    let mut yaw_err = Vec::new();
    for f in frames {
        let ts = truth_by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let rs = recs_by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let mut pairs = Vec::new();
        for t in ts {
            for r in rs {
                let d = (r.position - t.position).norm();
                if d <= gate {
                    pairs.push((d, t.object_id, r.track_id, *t, *r));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_t = BTreeSet::new();
        let mut used_r = BTreeSet::new();
        for (d, tid, rid, t, r) in pairs {
            if used_t.contains(&tid) || used_r.contains(&rid) {
                continue;
            }
            used_t.insert(tid);
            used_r.insert(rid);
            matched += 1;
            pos_err.push(d);
            yaw_err.push(wrap_angle(r.yaw - t.yaw).abs());
            if let Some(prev) = last_match.insert(tid, rid) {
                if prev != rid {
                    id_switches += 1;
                }
            }
        }
        misses += ts.len() - used_t.len();
        false_positives += rs.len() - used_r.len();
    }
    let n = truth.len();
    let mean = if pos_err.is_empty() {
        f64::NAN
    } else {
        pos_err.iter().sum::<f64>() / pos_err.len() as f64
    };
    Ok(EvaluationReport {
        ground_truth: n,
        matched,
        misses,
        false_positives,
        id_switches,
        mota: 1.0 - (misses + false_positives + id_switches) as f64 / n as f64,
        median_position_error: median(&pos_err),
        mean_position_error: mean,
        max_position_error: pos_err.iter().copied().fold(f64::NAN, f64::max),
        median_yaw_error: median(&yaw_err),
    })
}
