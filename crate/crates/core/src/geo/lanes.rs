//! Per-point lane labelling, lane-change counting and origin/destination
//! cross-checks.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::area::StudyArea;
use crate::ingest::{Dataset, Trajectory, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    /// Lane visits shorter than this (seconds) are merged into a neighbour.
    pub min_lane_dwell: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig { min_lane_dwell: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAssignment {
    pub track_id: u64,
    pub vehicle_class: VehicleClass,
    /// One label per trajectory point; 0 means outside the area.
    pub labels: Vec<u32>,
    pub entry_index: usize,
    pub exit_index: usize,
    pub origin_lane: u32,
    pub destination_lane: u32,
}

impl LaneAssignment {
    pub fn in_area(&self) -> std::ops::RangeInclusive<usize> {
        self.entry_index..=self.exit_index
    }

    /// Transitions between distinct nonzero labels.
    pub fn lane_changes(&self) -> usize {
        let in_area = &self.labels[self.in_area()];
        in_area
            .iter()
            .filter(|&&l| l != 0)
            .collect::<Vec<_>>()
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count()
    }

    pub fn visited_lanes(&self) -> BTreeSet<u32> {
        self.labels[self.in_area()]
            .iter()
            .copied()
            .filter(|&l| l != 0)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub assignments: Vec<LaneAssignment>,
    /// Trajectories that never touched a lane polygon.
    pub excluded: Vec<u64>,
}

/// Labels every point of every trajectory with the lane it lies in.
pub fn assign_lanes(dataset: &Dataset, area: &StudyArea, cfg: &AssignConfig) -> AssignmentResult {
    let trajs: Vec<&Trajectory> = dataset.iter().collect();
    let results: Vec<Result<LaneAssignment, u64>> = trajs
        .par_iter()
        .map(|t| assign_one(t, area, dataset.sample_interval, cfg).ok_or(t.track_id))
        .collect();
    let mut out = AssignmentResult::default();
    for r in results {
        match r {
            Ok(a) => out.assignments.push(a),
            Err(id) => out.excluded.push(id),
        }
    }
    out
}

pub fn raw_labels(traj: &Trajectory, area: &StudyArea) -> Vec<u32> {
    traj.points
        .iter()
        .map(|p| {
            if area.projection.in_range(p.lat, p.lon) {
                area.lane_at(area.to_local(p.lat, p.lon))
            } else {
                0
            }
        })
        .collect()
}

fn assign_one(
    traj: &Trajectory,
    area: &StudyArea,
    sample_interval: f64,
    cfg: &AssignConfig,
) -> Option<LaneAssignment> {
    let mut labels = raw_labels(traj, area);
    let entry = labels.iter().position(|&l| l != 0)?;
    let exit = labels.iter().rposition(|&l| l != 0)?;

    // gaps between sub-polygons inside the area inherit the previous lane
    for i in entry + 1..exit {
        if labels[i] == 0 {
            labels[i] = labels[i - 1];
        }
    }
    let times: Vec<f64> = traj.points[entry..=exit].iter().map(|p| p.t).collect();
    smooth_labels(&mut labels[entry..=exit], &times, sample_interval, cfg.min_lane_dwell);

    Some(LaneAssignment {
        track_id: traj.track_id,
        vehicle_class: traj.class(),
        origin_lane: labels[entry],
        destination_lane: labels[exit],
        labels,
        entry_index: entry,
        exit_index: exit,
    })
}

#[derive(Debug, Clone, Copy)]
struct Run {
    label: u32,
    start: usize,
    end: usize,
}

fn runs(labels: &[u32]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.label == l => r.end = i,
            _ => out.push(Run {
                label: l,
                start: i,
                end: i,
            }),
        }
    }
    out
}

/// Repeatedly folds the shortest lane visit under `min_dwell` into its longer
/// neighbour until every visit is long enough or only one remains.
///
/// A visit lasts from its first sample to the next visit's first sample; the
/// final visit gets one extra sample interval.
pub fn smooth_labels(labels: &mut [u32], times: &[f64], sample_interval: f64, min_dwell: f64) {
    debug_assert_eq!(labels.len(), times.len());
    loop {
        let rs = runs(labels);
        if rs.len() < 2 {
            return;
        }
        let duration = |k: usize| -> f64 {
            let r = rs[k];
            match rs.get(k + 1) {
                Some(next) => times[next.start] - times[r.start],
                None => times[r.end] - times[r.start] + sample_interval,
            }
        };
        let shortest = (0..rs.len())
            .map(|k| (k, duration(k)))
            .filter(|&(_, d)| d < min_dwell)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((k, _)) = shortest else { return };
        let target = match (k.checked_sub(1), rs.get(k + 1)) {
            (Some(p), Some(_)) if duration(k + 1) > duration(p) => rs[k + 1].label,
            (Some(p), _) => rs[p].label,
            (None, Some(n)) => n.label,
            (None, None) => return,
        };
        let r = rs[k];
        labels[r.start..=r.end].fill(target);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassLaneChanges {
    pub vehicles: usize,
    pub lane_changes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeSummary {
    pub per_class: BTreeMap<VehicleClass, ClassLaneChanges>,
}

impl LaneChangeSummary {
    pub fn total(&self) -> ClassLaneChanges {
        self.per_class
            .values()
            .fold(ClassLaneChanges::default(), |acc, c| ClassLaneChanges {
                vehicles: acc.vehicles + c.vehicles,
                lane_changes: acc.lane_changes + c.lane_changes,
            })
    }
}

pub fn detect_lane_changes(assignments: &[LaneAssignment]) -> LaneChangeSummary {
    let mut summary = LaneChangeSummary::default();
    for a in assignments {
        let entry = summary.per_class.entry(a.vehicle_class).or_default();
        entry.vehicles += 1;
        entry.lane_changes += a.lane_changes();
    }
    summary
}

/// Vehicles per lane and class; a vehicle counts once in every lane it visited.
pub fn lane_vehicle_counts(assignments: &[LaneAssignment]) -> BTreeMap<(u32, VehicleClass), usize> {
    let mut counts = BTreeMap::new();
    for a in assignments {
        for lane in a.visited_lanes() {
            *counts.entry((lane, a.vehicle_class)).or_default() += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    pub lane_ids: Vec<u32>,
    /// `counts[i][j]`: origin `lane_ids[i]`, destination `lane_ids[j]`.
    pub counts: Vec<Vec<u64>>,
}

impl OdMatrix {
    fn index(&self, lane: u32) -> Option<usize> {
        self.lane_ids.iter().position(|&l| l == lane)
    }

    pub fn get(&self, origin: u32, destination: u32) -> u64 {
        match (self.index(origin), self.index(destination)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn row_sum(&self, origin: u32) -> u64 {
        self.index(origin).map_or(0, |i| self.counts[i].iter().sum())
    }

    pub fn col_sum(&self, destination: u32) -> u64 {
        self.index(destination)
            .map_or(0, |j| self.counts.iter().map(|row| row[j]).sum())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn od_matrix(assignments: &[LaneAssignment], lane_ids: &[u32]) -> OdMatrix {
    let mut m = OdMatrix {
        lane_ids: lane_ids.to_vec(),
        counts: vec![vec![0; lane_ids.len()]; lane_ids.len()],
    };
    for a in assignments {
        if let (Some(i), Some(j)) = (m.index(a.origin_lane), m.index(a.destination_lane)) {
            m.counts[i][j] += 1;
        }
    }
    m
}
