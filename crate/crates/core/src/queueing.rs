//! Queued states, per-lane queue profiles, maximum queues, spillbacks and
//! signal-phase estimates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{distance_from_upstream, GeoPoint, LaneAssignment, StudyArea};
use crate::ingest::{Dataset, Trajectory};

/// Pedestrian walking speed, m/s.
pub const QUEUE_SPEED_MS: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    /// m/s; a vehicle at or below this speed is queued.
    pub queue_speed: f64,
    /// Queued runs with fewer samples are ignored.
    pub min_queue_dwell: usize,
    /// m
    pub spillback_eps: f64,
    /// s; later spillbacks in the same lane within this window are suppressed.
    pub spillback_dedup: f64,
    /// m; aggregate extent an episode must reach to count as a red phase.
    pub phase_threshold: f64,
    /// m; backward jump of the queue head that marks a discharge.
    pub head_release: f64,
    /// s; shorter queue episodes are not counted as red phases.
    pub phase_min_duration: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            queue_speed: QUEUE_SPEED_MS,
            min_queue_dwell: 2,
            spillback_eps: 5.0,
            spillback_dedup: 10.0,
            phase_threshold: 10.0,
            head_release: 3.0,
            phase_min_duration: 5.0,
        }
    }
}

pub fn is_queued(speed: f64) -> bool {
    speed <= QUEUE_SPEED_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub t: f64,
    /// Meters from the upstream edge.
    pub x: f64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueInterval {
    pub track_id: u64,
    pub lane_id: u32,
    pub t_enter: f64,
    pub t_exit: f64,
    pub x_enter: f64,
    pub x_exit: f64,
    /// The vehicle was already queued at its first in-area sample.
    pub at_entry: bool,
    pub samples: Vec<QueueSample>,
}

impl QueueInterval {
    pub fn duration(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

fn sample_at(traj: &Trajectory, i: usize, area: &StudyArea) -> QueueSample {
    let p = &traj.points[i];
    QueueSample {
        t: p.t,
        x: distance_from_upstream(area.to_local(p.lat, p.lon), area),
        lat: p.lat,
        lon: p.lon,
    }
}

/// Maximal runs of queued samples between the vehicle's area entry and exit.
pub fn extract_queue_intervals(
    traj: &Trajectory,
    assignment: &LaneAssignment,
    area: &StudyArea,
    sample_interval: f64,
    cfg: &QueueConfig,
) -> Vec<QueueInterval> {
    let (entry, exit) = (assignment.entry_index, assignment.exit_index);
    let queued = |i: usize| traj.points[i].speed <= cfg.queue_speed;
    let mut out = Vec::new();
    let mut i = entry;
    while i <= exit {
        if !queued(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i <= exit && queued(i) {
            i += 1;
        }
        let end = i - 1;
        if end - start + 1 < cfg.min_queue_dwell {
            continue;
        }
        let samples: Vec<QueueSample> = (start..=end).map(|k| sample_at(traj, k, area)).collect();
        let (t_exit, x_exit) = if end + 1 < traj.points.len() {
            let s = sample_at(traj, end + 1, area);
            (s.t, s.x)
        } else {
            (samples[samples.len() - 1].t + sample_interval, samples[samples.len() - 1].x)
        };
        out.push(QueueInterval {
            track_id: traj.track_id,
            lane_id: assignment.labels[start],
            t_enter: samples[0].t,
            t_exit,
            x_enter: samples[0].x,
            x_exit,
            at_entry: start == entry,
            samples,
        });
    }
    out
}

/// Queue onsets just upstream of the area: the vehicle starts a queued run
/// (of at least `min_queue_dwell` samples) within `spillback_eps` before the
/// upstream edge. The lane comes from the lateral position.
pub fn edge_queue_onsets(traj: &Trajectory, area: &StudyArea, cfg: &QueueConfig) -> Vec<SpillbackEvent> {
    let n = traj.points.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if traj.points[i].speed > cfg.queue_speed {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && traj.points[i].speed <= cfg.queue_speed {
            i += 1;
        }
        if i - start < cfg.min_queue_dwell {
            continue;
        }
        let p = &traj.points[start];
        if !area.projection.in_range(p.lat, p.lon) {
            continue;
        }
        let local = area.to_local(p.lat, p.lon);
        let s = area.signed_distance_from_upstream(local);
        if s < -cfg.spillback_eps || s >= 0.0 {
            continue;
        }
        let lane_id = area.lane_by_lateral(local);
        if lane_id != 0 {
            out.push(SpillbackEvent {
                lane_id,
                t: p.t,
                location: GeoPoint::new(p.lat, p.lon),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    /// Meters from the downstream edge to the furthest-upstream queued vehicle.
    pub extent: f64,
    pub queued: usize,
    /// Furthest-upstream queued vehicle.
    pub tail: Option<QueueSample>,
    /// Downstream-most queued vehicle.
    pub head: Option<QueueSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneQueueProfile {
    pub lane_id: u32,
    pub points: Vec<ProfilePoint>,
}

fn time_key(t: f64, dt: f64) -> i64 {
    (t / dt).round() as i64
}

/// Queue extent on a regular grid of step `sample_interval` covering `span`
/// (or the intervals themselves when `span` is `None`).
pub fn lane_queue_profile(
    lane_id: u32,
    intervals: &[QueueInterval],
    area: &StudyArea,
    sample_interval: f64,
    span: Option<(f64, f64)>,
) -> LaneQueueProfile {
    let dt = sample_interval;
    let mut at: BTreeMap<i64, (usize, QueueSample, QueueSample)> = BTreeMap::new();
    for s in intervals
        .iter()
        .filter(|iv| iv.lane_id == lane_id)
        .flat_map(|iv| iv.samples.iter())
    {
        at.entry(time_key(s.t, dt))
            .and_modify(|(n, tail, head)| {
                *n += 1;
                if s.x < tail.x {
                    *tail = *s;
                }
                if s.x > head.x {
                    *head = *s;
                }
            })
            .or_insert((1, *s, *s));
    }
    let bounds = match span {
        Some((a, b)) => Some((time_key(a, dt), time_key(b, dt))),
        None => at
            .keys()
            .next()
            .zip(at.keys().next_back())
            .map(|(a, b)| (*a, *b)),
    };
    let Some((k0, k1)) = bounds else {
        return LaneQueueProfile {
            lane_id,
            points: Vec::new(),
        };
    };
    let points = (k0..=k1)
        .map(|k| match at.get(&k) {
            Some(&(n, tail, head)) => ProfilePoint {
                t: k as f64 * dt,
                extent: (area.length - tail.x).clamp(0.0, area.length),
                queued: n,
                tail: Some(tail),
                head: Some(head),
            },
            None => ProfilePoint {
                t: k as f64 * dt,
                extent: 0.0,
                queued: 0,
                tail: None,
                head: None,
            },
        })
        .collect();
    LaneQueueProfile { lane_id, points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxQueue {
    pub lane_id: u32,
    pub length: f64,
    pub t: f64,
    /// Furthest-upstream queued vehicle.
    pub start: GeoPoint,
    /// Downstream-most queued vehicle.
    pub end: GeoPoint,
}

/// Largest extent, earliest on ties; `None` when the lane never queued.
pub fn max_queue_length(profile: &LaneQueueProfile) -> Option<MaxQueue> {
    let mut best: Option<&ProfilePoint> = None;
    for p in &profile.points {
        if p.extent > best.map_or(0.0, |b| b.extent) {
            best = Some(p);
        }
    }
    let p = best?;
    let (tail, head) = (p.tail?, p.head?);
    Some(MaxQueue {
        lane_id: profile.lane_id,
        length: p.extent,
        t: p.t,
        start: GeoPoint::new(tail.lat, tail.lon),
        end: GeoPoint::new(head.lat, head.lon),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpillbackEvent {
    pub lane_id: u32,
    pub t: f64,
    /// Triggering queued point.
    pub location: GeoPoint,
}

/// Queues entered at (or just before) the upstream edge, at most one per lane
/// per `spillback_dedup` seconds.
pub fn detect_spillbacks(
    intervals: &[QueueInterval],
    edge_onsets: &[SpillbackEvent],
    cfg: &QueueConfig,
) -> Vec<SpillbackEvent> {
    let mut candidates: Vec<SpillbackEvent> = intervals
        .iter()
        .filter(|iv| iv.x_enter <= cfg.spillback_eps || iv.at_entry)
        .map(|iv| SpillbackEvent {
            lane_id: iv.lane_id,
            t: iv.t_enter,
            location: GeoPoint::new(iv.samples[0].lat, iv.samples[0].lon),
        })
        .chain(edge_onsets.iter().copied())
        .collect();
    candidates.sort_by(|a, b| a.lane_id.cmp(&b.lane_id).then(a.t.total_cmp(&b.t)));
    let mut out: Vec<SpillbackEvent> = Vec::new();
    let mut last: BTreeMap<u32, f64> = BTreeMap::new();
    for c in candidates {
        if last.get(&c.lane_id).is_some_and(|&t| c.t - t < cfg.spillback_dedup) {
            continue;
        }
        last.insert(c.lane_id, c.t);
        out.push(c);
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.lane_id.cmp(&b.lane_id)));
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalPhaseEstimate {
    pub red_onsets: Vec<f64>,
    pub green_onsets: Vec<f64>,
    pub low_confidence: bool,
    pub note: String,
}

/// Red onset: the aggregate extent (max over lanes) leaves zero in an episode
/// that reaches `phase_threshold` and lasts `phase_min_duration`. Green onset:
/// the first discharge of a queue head during that episode.
pub fn infer_signal_phases(profiles: &[LaneQueueProfile], sample_interval: f64, cfg: &QueueConfig) -> SignalPhaseEstimate {
    let dt = sample_interval;
    // key -> (aggregate extent, released)
    let mut grid: BTreeMap<i64, (f64, bool)> = BTreeMap::new();
    for prof in profiles {
        for (i, p) in prof.points.iter().enumerate() {
            let released = i > 0
                && match (prof.points[i - 1].head, p.head) {
                    (Some(prev), Some(cur)) => cur.x < prev.x - cfg.head_release,
                    (Some(_), None) => true,
                    _ => false,
                };
            let e = grid.entry(time_key(p.t, dt)).or_insert((0.0, false));
            e.0 = e.0.max(p.extent);
            e.1 |= released;
        }
    }

    let mut est = SignalPhaseEstimate::default();
    let cells: Vec<(i64, f64, bool)> = grid.into_iter().map(|(k, (e, r))| (k, e, r)).collect();
    let mut i = 0;
    while i < cells.len() {
        if cells[i].1 <= 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        let mut peak = 0.0f64;
        let mut green = None;
        while i < cells.len() && cells[i].1 > 0.0 {
            peak = peak.max(cells[i].1);
            if green.is_none() && i > start && cells[i].2 {
                green = Some(cells[i].0);
            }
            i += 1;
        }
        // the episode ends when the last queued vehicle leaves
        let end_key = cells.get(i).map_or(cells[i - 1].0 + 1, |c| c.0);
        let duration = (end_key - cells[start].0) as f64 * dt;
        if peak >= cfg.phase_threshold && duration >= cfg.phase_min_duration {
            est.red_onsets.push(cells[start].0 as f64 * dt);
            est.green_onsets.push(green.unwrap_or(end_key) as f64 * dt);
        }
    }

    let mut notes = Vec::new();
    if est.red_onsets.len() < 2 {
        est.low_confidence = true;
        notes.push("fewer than two queue episodes");
    } else {
        let cycles: Vec<f64> = est.red_onsets.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = cycles.iter().sum::<f64>() / cycles.len() as f64;
        let sd = (cycles.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / cycles.len() as f64).sqrt();
        if sd > 0.2 * mean {
            est.low_confidence = true;
            notes.push("cycle lengths vary by more than 20%");
        }
    }
    est.note = if notes.is_empty() {
        "consistent cycles".to_string()
    } else {
        notes.join("; ")
    };
    est
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueAnalysis {
    pub intervals: Vec<QueueInterval>,
    pub profiles: Vec<LaneQueueProfile>,
    pub max_queues: Vec<MaxQueue>,
    pub spillbacks: Vec<SpillbackEvent>,
    pub phases: SignalPhaseEstimate,
}

/// Runs every queue stage over a lane-assigned dataset.
pub fn analyze_queues(
    dataset: &Dataset,
    assignments: &[LaneAssignment],
    area: &StudyArea,
    cfg: &QueueConfig,
) -> QueueAnalysis {
    let dt = dataset.sample_interval;
    let mut intervals: Vec<QueueInterval> = assignments
        .par_iter()
        .filter_map(|a| dataset.get(a.track_id).map(|t| (t, a)))
        .flat_map_iter(|(t, a)| extract_queue_intervals(t, a, area, dt, cfg))
        .collect();
    intervals.sort_by(|a, b| a.t_enter.total_cmp(&b.t_enter).then(a.track_id.cmp(&b.track_id)));

    let trajs: Vec<&Trajectory> = dataset.iter().collect();
    let edge: Vec<SpillbackEvent> = trajs
        .par_iter()
        .flat_map_iter(|t| edge_queue_onsets(t, area, cfg))
        .collect();

    let span = dataset.time_span();
    let profiles: Vec<LaneQueueProfile> = area
        .lane_ids()
        .into_iter()
        .map(|lane| lane_queue_profile(lane, &intervals, area, dt, span))
        .collect();
    let max_queues = profiles.iter().filter_map(max_queue_length).collect();
    let spillbacks = detect_spillbacks(&intervals, &edge, cfg);
    let phases = infer_signal_phases(&profiles, dt, cfg);
    QueueAnalysis {
        intervals,
        profiles,
        max_queues,
        spillbacks,
        phases,
    }
}
