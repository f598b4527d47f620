//! Multi-object tracking of refined detections.
//!
//! Per frame, live tracks are predicted with a constant-acceleration Kalman
//! filter, associated to detections by minimum-cost assignment, updated or
//! coasted, and new tentative tracks are started from leftovers. Finished
//! tracks are smoothed offline by a Rauch–Tung–Striebel pass.

mod hungarian;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Point3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hungarian::{hungarian, Assignment};

use crate::category::Category;
use crate::geodesy::LocalPoint;
use crate::refine::{world_attitude, RefinedDetection};

pub type StateVector = SVector<f64, 9>;
pub type StateCovariance = SMatrix<f64, 9, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("detections not sorted by frame: frame {found} after {previous}")]
    Unsorted { previous: u64, found: u64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("track {0} has no stored filter history")]
    MissingHistory(u64),
    #[error("invalid tracker configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Association gate on the assignment cost, meters.
    pub gate: f64,
    /// Cost added when track and detection categories differ, meters.
    pub category_penalty: f64,
    pub min_hits: usize,
    pub max_coast: usize,
    pub min_track_length: usize,
    pub measurement_std: f64,
    /// Spectral density (square root) of the white jerk driving the
    /// acceleration, in m/s² per √s.
    pub acceleration_std: f64,
    /// Centered moving-average window for the orientation angles, frames.
    pub orientation_window: usize,
    pub rate_hz: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.0,
            category_penalty: 1.0,
            min_hits: 3,
            max_coast: 12,
            min_track_length: 3,
            measurement_std: 0.05,
            acceleration_std: 2.0,
            orientation_window: 5,
            rate_hz: crate::DEFAULT_RATE_HZ,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::BadConfig(m.to_string()));
        if !(self.gate > 0.0) || !(self.category_penalty >= 0.0) {
            return bad("gate must be positive and category_penalty non-negative");
        }
        if self.min_hits < 3 {
            return bad("min_hits must be at least 3");
        }
        if !(self.measurement_std > 0.0) || !(self.acceleration_std > 0.0) {
            return bad("noise levels must be positive");
        }
        if !(self.rate_hz > 0.0) || self.orientation_window == 0 {
            return bad("rate_hz and orientation_window must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub position: LocalPoint,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Over (position, velocity, acceleration).
    pub covariance: StateCovariance,
}

impl TrackState {
    pub fn mean(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position.coords);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(6).copy_from(&self.acceleration);
        x
    }

    pub fn from_mean(x: &StateVector, covariance: StateCovariance) -> Self {
        Self {
            position: Point3::from(x.fixed_rows::<3>(0).into_owned()),
            velocity: x.fixed_rows::<3>(3).into_owned(),
            acceleration: x.fixed_rows::<3>(6).into_owned(),
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            covariance,
        }
    }

    fn with_kinematics(&self, x: &StateVector, covariance: StateCovariance) -> Self {
        Self {
            yaw: self.yaw,
            pitch: self.pitch,
            roll: self.roll,
            ..Self::from_mean(x, covariance)
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackStatus {
    Active,
    Coasting,
    Terminated,
}

/// The detection associated to a track at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: LocalPoint,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub category: Category,
    pub dimensions: Vector3<f64>,
    pub score: f64,
}

impl Observation {
    pub fn from_detection(d: &RefinedDetection) -> Self {
        let (yaw, pitch, roll) = world_attitude(&d.orientation_world);
        Self {
            position: d.position_world,
            yaw,
            pitch,
            roll,
            category: d.category,
            dimensions: d.dimensions,
            score: d.score,
        }
    }
}

/// Prediction made by the forward filter when stepping into a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPrior {
    pub dt: f64,
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub category: Category,
    /// Per-axis median of the associated detections' (l, w, h).
    pub dimensions: Vector3<f64>,
    pub status: TrackStatus,
    /// One state per frame, strictly increasing.
    pub frames: Vec<u64>,
    pub states: Vec<TrackState>,
    /// `None` where the track coasted.
    pub observations: Vec<Option<Observation>>,
    /// `priors[k]` is the prediction that led to `states[k + 1]`.
    pub priors: Vec<FilterPrior>,
}

impl Track {
    pub fn first_frame(&self) -> u64 {
        self.frames[0]
    }

    pub fn last_frame(&self) -> u64 {
        self.frames[self.frames.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Bookkeeping for the result of one association round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-cost assignment between predicted positions and detections on
/// Euclidean ground-center distance plus a category-mismatch penalty. Pairs
/// costing more than `gate` are never matched.
pub fn associate(
    predicted: &[(LocalPoint, Category)],
    detections: &[(LocalPoint, Category)],
    gate: f64,
    category_penalty: f64,
) -> Matching {
    let cost_of = |t: &(LocalPoint, Category), d: &(LocalPoint, Category)| {
        (t.0 - d.0).norm() + if t.1 == d.1 { 0.0 } else { category_penalty }
    };
    // Gated pairs get a cost no optimal solution would trade for, so the
    // assignment among admissible pairs is unaffected.
    let forbidden = 1e3 * gate * (predicted.len() + detections.len() + 1) as f64;
    let cost = DMatrix::from_fn(predicted.len(), detections.len(), |i, j| {
        let c = cost_of(&predicted[i], &detections[j]);
        if c > gate {
            forbidden
        } else {
            c
        }
    });
    let a = hungarian(&cost);
    let pairs: Vec<(usize, usize)> = a.pairs.into_iter().filter(|&(i, j)| cost[(i, j)] <= gate).collect();
    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detections.len()];
    for &(i, j) in &pairs {
        track_used[i] = true;
        det_used[j] = true;
    }
    Matching {
        pairs,
        unmatched_tracks: (0..predicted.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&j| !det_used[j]).collect(),
    }
}

pub fn transition(dt: f64) -> StateCovariance {
    let mut f = StateCovariance::identity();
    for a in 0..3 {
        f[(a, 3 + a)] = dt;
        f[(a, 6 + a)] = 0.5 * dt * dt;
        f[(3 + a, 6 + a)] = dt;
    }
    f
}

/// Discretized white-jerk process noise with spectral density σ².
pub fn process_noise(dt: f64, sigma: f64) -> StateCovariance {
    let q = sigma * sigma;
    let block = [
        [dt.powi(5) / 20.0, dt.powi(4) / 8.0, dt.powi(3) / 6.0],
        [dt.powi(4) / 8.0, dt.powi(3) / 3.0, dt.powi(2) / 2.0],
        [dt.powi(3) / 6.0, dt.powi(2) / 2.0, dt],
    ];
    let mut m = StateCovariance::zeros();
    for a in 0..3 {
        for (i, row) in block.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(3 * i + a, 3 * j + a)] = q * v;
            }
        }
    }
    m
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Returns `p` if it admits a Cholesky factorization, else its projection
/// onto the PSD cone (eigenvalues clamped to a small positive floor).
fn ensure_psd(p: StateCovariance) -> StateCovariance {
    let p = symmetrize(&p);
    if p.cholesky().is_some() {
        return p;
    }
    log::warn!("covariance lost positive definiteness; projecting");
    let eig = p.symmetric_eigen();
    let floor = 1e-12 * eig.eigenvalues.amax().max(1e-300);
    let d = eig.eigenvalues.map(|l| l.max(floor));
    symmetrize(&(eig.eigenvectors * StateCovariance::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

pub fn predict(x: &StateVector, p: &StateCovariance, dt: f64, cfg: &TrackerConfig) -> (StateVector, StateCovariance) {
    let f = transition(dt);
    (
        f * x,
        symmetrize(&(f * p * f.transpose() + process_noise(dt, cfg.acceleration_std))),
    )
}

pub fn update(
    x: &StateVector,
    p: &StateCovariance,
    z: &LocalPoint,
    cfg: &TrackerConfig,
) -> (StateVector, StateCovariance) {
    let r = cfg.measurement_std * cfg.measurement_std;
    let s: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0) + Matrix3::identity() * r;
    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
    let pht: SMatrix<f64, 9, 3> = p.fixed_columns::<3>(0).into_owned();
    let k = pht * s_inv;
    let innovation = z.coords - x.fixed_rows::<3>(0);
    let x_new = x + k * innovation;
    let mut i_kh = StateCovariance::identity();
    i_kh.fixed_columns_mut::<3>(0)
        .copy_from(&(SMatrix::<f64, 9, 3>::identity() - k));
    let p_new = i_kh * p * i_kh.transpose() + k * k.transpose() * r;
    (x_new, ensure_psd(p_new))
}

/// One filter step: predict over `dt`, then update with the measured
/// position when present.
pub fn kalman_step(
    state: &TrackState,
    dt: f64,
    measurement: Option<&LocalPoint>,
    cfg: &TrackerConfig,
) -> Result<TrackState, TrackerError> {
    if !(dt > 0.0) {
        return Err(TrackerError::NonPositiveDt(dt));
    }
    let (mut x, mut p) = predict(&state.mean(), &state.covariance, dt, cfg);
    if let Some(z) = measurement {
        (x, p) = update(&x, &p, z, cfg);
    }
    Ok(state.with_kinematics(&x, ensure_psd(p)))
}

/// Initial state from the first three observations at offsets 0, t1, t1+t2:
/// the quadratic through them gives velocity and acceleration at the first.
fn initial_state(p: [&LocalPoint; 3], t1: f64, t2: f64) -> (StateVector, StateCovariance) {
    let d1 = (p[1] - p[0]) / t1;
    let total = t1 + t2;
    let acc = ((p[2] - p[0]) / total - d1) * (2.0 / t2);
    let vel = d1 - acc * (t1 / 2.0);
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&p[0].coords);
    x.fixed_rows_mut::<3>(3).copy_from(&vel);
    x.fixed_rows_mut::<3>(6).copy_from(&acc);
    // Weak prior on the derivatives; the following updates dominate.
    let mut cov = StateCovariance::zeros();
    for a in 0..3 {
        cov[(a, a)] = 1.0;
        cov[(3 + a, 3 + a)] = 100.0;
        cov[(6 + a, 6 + a)] = 100.0;
    }
    (x, cov)
}

/// Rauch–Tung–Striebel backward pass over a filtered track. The last state
/// is unchanged and smoothed covariances never exceed filtered ones.
pub fn rts_smooth(track: &Track) -> Result<Track, TrackerError> {
    let n = track.states.len();
    if n <= 1 {
        return Ok(track.clone());
    }
    if track.priors.len() != n - 1 {
        return Err(TrackerError::MissingHistory(track.track_id));
    }
    let mut out = track.clone();
    let mut next_x = track.states[n - 1].mean();
    let mut next_p = track.states[n - 1].covariance;
    for k in (0..n - 1).rev() {
        let prior = &track.priors[k];
        let filtered = &track.states[k];
        let f = transition(prior.dt);
        let pf = filtered.covariance;
        // C = Pf Fᵀ Pp⁻¹, computed as (Pp⁻¹ F Pf)ᵀ.
        let c = match prior.covariance.cholesky() {
            Some(ch) => ch.solve(&(f * pf)).transpose(),
            None => return Err(TrackerError::MissingHistory(track.track_id)),
        };
        let x = filtered.mean() + c * (next_x - prior.mean);
        let p = ensure_psd(pf + c * (next_p - prior.covariance) * c.transpose());
        out.states[k] = filtered.with_kinematics(&x, p);
        next_x = x;
        next_p = p;
    }
    Ok(out)
}

/// Unwraps a sequence of angles so consecutive values differ by at most π.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut offset = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        if i > 0 {
            let prev = angles[i - 1];
            let d = crate::rotation::wrap_angle(a - prev);
            offset += d - (a - prev);
        }
        out.push(a + offset);
    }
    out
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Fills gaps by linear interpolation (constant extrapolation at the ends).
fn fill_gaps(values: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return vec![0.0; values.len()];
    }
    (0..values.len())
        .map(|i| {
            let pos = known.partition_point(|&(k, _)| k < i);
            if pos < known.len() && known[pos].0 == i {
                return known[pos].1;
            }
            if pos == 0 {
                return known[0].1;
            }
            if pos == known.len() {
                return known[known.len() - 1].1;
            }
            let (i0, v0) = known[pos - 1];
            let (i1, v1) = known[pos];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        })
        .collect()
}

/// Orientation angles from the observations: unwrapped over the observed
/// frames, interpolated across coasted frames and smoothed with a centered
/// moving average. Kinematics come from the (smoothed) filter states as is.
pub fn finalize_kinematics(track: &Track, window: usize) -> Track {
    let mut out = track.clone();
    let observed: Vec<usize> = (0..track.len()).filter(|&i| track.observations[i].is_some()).collect();
    let angle = |f: fn(&Observation) -> f64| -> Vec<f64> {
        let raw: Vec<f64> = observed
            .iter()
            .map(|&i| f(track.observations[i].as_ref().unwrap()))
            .collect();
        let unwrapped = unwrap_angles(&raw);
        let mut sparse = vec![None; track.len()];
        for (k, &i) in observed.iter().enumerate() {
            sparse[i] = Some(unwrapped[k]);
        }
        moving_average(&fill_gaps(&sparse), window)
    };
    let yaw = angle(|o| o.yaw);
    let pitch = angle(|o| o.pitch);
    let roll = angle(|o| o.roll);
    for (i, s) in out.states.iter_mut().enumerate() {
        s.yaw = yaw[i];
        s.pitch = pitch[i];
        s.roll = roll[i];
    }
    out
}

struct Live {
    track: Track,
    misses: usize,
    votes: Vec<(Category, usize)>,
}

impl Live {
    fn category(&self) -> Category {
        let mut best = self.votes[0];
        for &v in &self.votes[1..] {
            if v.1 > best.1 {
                best = v;
            }
        }
        best.0
    }

    fn vote(&mut self, c: Category) {
        match self.votes.iter_mut().find(|v| v.0 == c) {
            Some(v) => v.1 += 1,
            None => self.votes.push((c, 1)),
        }
    }
}

struct Tentative {
    frames: Vec<u64>,
    observations: Vec<Observation>,
}

impl Tentative {
    fn predicted(&self) -> (LocalPoint, Category) {
        let n = self.observations.len();
        let last = &self.observations[n - 1];
        let pos = if n >= 2 {
            last.position + (last.position - self.observations[n - 2].position)
        } else {
            last.position
        };
        (pos, last.category)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Full tracking pass over detections sorted by frame.
pub fn run_tracker(detections: &[RefinedDetection], cfg: &TrackerConfig) -> Result<Vec<Track>, TrackerError> {
    cfg.validate()?;
    for w in detections.windows(2) {
        if w[1].frame_index < w[0].frame_index {
            return Err(TrackerError::Unsorted {
                previous: w[0].frame_index,
                found: w[1].frame_index,
            });
        }
    }
    let Some(first) = detections.first() else {
        return Ok(Vec::new());
    };
    let last = detections[detections.len() - 1].frame_index;
    let dt = 1.0 / cfg.rate_hz;

    let mut live: Vec<Live> = Vec::new();
    let mut tentative: Vec<Tentative> = Vec::new();
    let mut finished: Vec<Track> = Vec::new();
    let mut next_id = 1u64;
    let mut cursor = 0usize;

    for frame in first.frame_index..=last {
        let start = cursor;
        while cursor < detections.len() && detections[cursor].frame_index == frame {
            cursor += 1;
        }
        let obs: Vec<Observation> = detections[start..cursor]
            .iter()
            .map(Observation::from_detection)
            .collect();

        // Confirmed tracks.
        let priors: Vec<(StateVector, StateCovariance)> = live
            .iter()
            .map(|l| {
                let s = l.track.states.last().expect("live tracks have states");
                predict(&s.mean(), &s.covariance, dt, cfg)
            })
            .collect();
        let predicted: Vec<(LocalPoint, Category)> = priors
            .iter()
            .zip(&live)
            .map(|(p, l)| (Point3::from(p.0.fixed_rows::<3>(0).into_owned()), l.category()))
            .collect();
        let det_keys: Vec<(LocalPoint, Category)> = obs.iter().map(|o| (o.position, o.category)).collect();
        let m = associate(&predicted, &det_keys, cfg.gate, cfg.category_penalty);
        for &(ti, di) in &m.pairs {
            let (xp, pp) = priors[ti];
            let (x, p) = update(&xp, &pp, &obs[di].position, cfg);
            let l = &mut live[ti];
            let prev = *l.track.states.last().unwrap();
            l.track.states.push(prev.with_kinematics(&x, p));
            l.track.priors.push(FilterPrior {
                dt,
                mean: xp,
                covariance: pp,
            });
            l.track.frames.push(frame);
            l.track.observations.push(Some(obs[di]));
            l.track.status = TrackStatus::Active;
            l.misses = 0;
            l.vote(obs[di].category);
        }
        for &ti in &m.unmatched_tracks {
            let (xp, pp) = priors[ti];
            let l = &mut live[ti];
            let prev = *l.track.states.last().unwrap();
            l.track.states.push(prev.with_kinematics(&xp, pp));
            l.track.priors.push(FilterPrior {
                dt,
                mean: xp,
                covariance: pp,
            });
            l.track.frames.push(frame);
            l.track.observations.push(None);
            l.track.status = TrackStatus::Coasting;
            l.misses += 1;
        }
        let mut k = 0;
        while k < live.len() {
            if live[k].misses > cfg.max_coast {
                let l = live.remove(k);
                finished.push(close(l));
            } else {
                k += 1;
            }
        }

        // Tentative tracks take the leftovers.
        let left: Vec<usize> = m.unmatched_detections;
        let tent_keys: Vec<(LocalPoint, Category)> = tentative.iter().map(Tentative::predicted).collect();
        let left_keys: Vec<(LocalPoint, Category)> = left.iter().map(|&j| det_keys[j]).collect();
        let mt = associate(&tent_keys, &left_keys, cfg.gate, cfg.category_penalty);
        let mut keep = vec![false; tentative.len()];
        for &(ti, dj) in &mt.pairs {
            let t = &mut tentative[ti];
            t.frames.push(frame);
            t.observations.push(obs[left[dj]]);
            keep[ti] = true;
        }
        let mut survivors = Vec::new();
        for (t, kept) in tentative.into_iter().zip(keep) {
            if !kept {
                continue;
            }
            if t.observations.len() >= cfg.min_hits {
                live.push(confirm(t, next_id, cfg));
                next_id += 1;
            } else {
                survivors.push(t);
            }
        }
        for &dj in &mt.unmatched_detections {
            survivors.push(Tentative {
                frames: vec![frame],
                observations: vec![obs[left[dj]]],
            });
        }
        tentative = survivors;
    }
    finished.extend(live.into_iter().map(close));

    let mut out = Vec::new();
    for t in finished {
        if t.len() < cfg.min_track_length {
            continue;
        }
        let smoothed = rts_smooth(&t)?;
        out.push(finalize_kinematics(&smoothed, cfg.orientation_window));
    }
    out.sort_by_key(|t| t.track_id);
    log::info!("tracker: {} tracks from {} detections", out.len(), detections.len());
    Ok(out)
}

/// Forward-filters a sequence of observations at strictly increasing frames
/// (at least three), initializing from the quadratic through the first three.
pub fn filter_observations(
    track_id: u64,
    frames: &[u64],
    observations: &[Observation],
    cfg: &TrackerConfig,
) -> Result<Track, TrackerError> {
    assert!(frames.len() == observations.len() && frames.len() >= 3);
    let dt = 1.0 / cfg.rate_hz;
    let o = observations;
    let step_at = |k: usize| -> Result<f64, TrackerError> {
        if frames[k] <= frames[k - 1] {
            return Err(TrackerError::Unsorted {
                previous: frames[k - 1],
                found: frames[k],
            });
        }
        Ok((frames[k] - frames[k - 1]) as f64 * dt)
    };
    let (x0, p0) = initial_state(
        [&o[0].position, &o[1].position, &o[2].position],
        step_at(1)?,
        step_at(2)?,
    );
    let mut states = vec![TrackState::from_mean(&x0, p0)];
    let mut priors = Vec::new();
    for k in 1..o.len() {
        let step = step_at(k)?;
        let prev = states[k - 1];
        let (xp, pp) = predict(&prev.mean(), &prev.covariance, step, cfg);
        let (x, p) = update(&xp, &pp, &o[k].position, cfg);
        priors.push(FilterPrior {
            dt: step,
            mean: xp,
            covariance: pp,
        });
        states.push(TrackState::from_mean(&x, p));
    }
    Ok(Track {
        track_id,
        category: o[0].category,
        dimensions: o[0].dimensions,
        status: TrackStatus::Active,
        frames: frames.to_vec(),
        states,
        observations: o.iter().copied().map(Some).collect(),
        priors,
    })
}

fn confirm(t: Tentative, id: u64, cfg: &TrackerConfig) -> Live {
    let track = filter_observations(id, &t.frames, &t.observations, cfg).expect("tentative frames are consecutive");
    let mut live = Live {
        track,
        misses: 0,
        votes: Vec::new(),
    };
    for ob in &t.observations {
        live.vote(ob.category);
    }
    live
}

/// Terminates a live track: trailing coasted states are dropped and the
/// category and dimensions are fixed from the observations.
fn close(mut l: Live) -> Track {
    while l.track.observations.last().is_some_and(Option::is_none) {
        l.track.observations.pop();
        l.track.states.pop();
        l.track.frames.pop();
        l.track.priors.pop();
    }
    l.track.category = l.category();
    let dims: Vec<Vector3<f64>> = l.track.observations.iter().flatten().map(|o| o.dimensions).collect();
    let mut d = Vector3::zeros();
    for a in 0..3 {
        let mut v: Vec<f64> = dims.iter().map(|x| x[a]).collect();
        d[a] = median(&mut v);
    }
    l.track.dimensions = d;
    l.track.status = TrackStatus::Terminated;
    l.track
}

/// One row of a trajectory file: the state of one track at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub frame_index: u64,
    pub track_id: u64,
    pub category: Category,
    pub position: LocalPoint,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub dimensions: Vector3<f64>,
}

/// Flattens tracks into records ordered by (frame, track id).
pub fn to_records(tracks: &[Track]) -> Vec<TrajectoryRecord> {
    let mut out: Vec<TrajectoryRecord> = tracks
        .iter()
        .flat_map(|t| {
            t.frames.iter().zip(&t.states).map(move |(&f, s)| TrajectoryRecord {
                frame_index: f,
                track_id: t.track_id,
                category: t.category,
                position: s.position,
                velocity: s.velocity,
                acceleration: s.acceleration,
                yaw: s.yaw,
                pitch: s.pitch,
                roll: s.roll,
                dimensions: t.dimensions,
            })
        })
        .collect();
    out.sort_by_key(|r| (r.frame_index, r.track_id));
    out
}

/// Groups records per track id, each group sorted by frame.
pub fn group_by_track(records: &[TrajectoryRecord]) -> BTreeMap<u64, Vec<TrajectoryRecord>> {
    let mut map: BTreeMap<u64, Vec<TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.track_id).or_default().push(*r);
    }
    for v in map.values_mut() {
        v.sort_by_key(|r| r.frame_index);
    }
    map
}

#[cfg(test)]
mod tests;
