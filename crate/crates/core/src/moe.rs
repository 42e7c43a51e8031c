//! Travel time, link counts, stops, delay, crash rates and their per-lane /
//! per-movement aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LaneAssignment, StudyArea};
use crate::ingest::{Dataset, Trajectory, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeCard {
    pub track_id: u64,
    pub lane_id: u32,
    pub t_entry: f64,
    pub t_exit: f64,
}

impl TimeCard {
    /// Card spanning the vehicle's first and last in-area samples.
    pub fn from_assignment(traj: &Trajectory, a: &LaneAssignment) -> Self {
        TimeCard {
            track_id: traj.track_id,
            lane_id: a.origin_lane,
            t_entry: traj.points[a.entry_index].t,
            t_exit: traj.points[a.exit_index].t,
        }
    }
}

pub fn travel_time(card: &TimeCard) -> f64 {
    card.t_exit - card.t_entry
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkCountSeries {
    /// Sample times `t0 + k·dt`.
    pub t: Vec<f64>,
    /// Vehicles on the link.
    pub n: Vec<i64>,
    /// Net entries during `[t − dt, t)`.
    pub u: Vec<i64>,
}

/// Conservation-law vehicle count `N(t) = N(t − dt) + u(t)`.
pub fn link_count_series(cards: &[TimeCard], dt: f64) -> Result<LinkCountSeries> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("count interval must be positive, got {dt}")));
    }
    if cards.is_empty() {
        return Ok(LinkCountSeries::default());
    }
    for c in cards {
        if !(c.t_exit >= c.t_entry) {
            return Err(Error::Consistency {
                track_id: c.track_id,
                message: format!("exit at {} precedes entry at {}", c.t_exit, c.t_entry),
            });
        }
    }
    let bucket = |t: f64| (t / dt).floor() as i64;
    let k0 = cards.iter().map(|c| bucket(c.t_entry)).min().unwrap_or(0);
    let k1 = cards.iter().map(|c| bucket(c.t_exit)).max().unwrap_or(0) + 1;
    let len = (k1 - k0 + 1) as usize;
    let mut u = vec![0i64; len];
    // an event in [k·dt, (k+1)·dt) shows up at t = (k+1)·dt
    for c in cards {
        u[(bucket(c.t_entry) - k0 + 1) as usize] += 1;
        u[(bucket(c.t_exit) - k0 + 1) as usize] -= 1;
    }
    let mut series = LinkCountSeries {
        t: Vec::with_capacity(len),
        n: Vec::with_capacity(len),
        u,
    };
    let mut n = 0i64;
    for (i, du) in series.u.iter().enumerate() {
        n += du;
        if n < 0 {
            let t = (k0 + i as i64) as f64 * dt;
            let culprit = cards
                .iter()
                .find(|c| (c.t_exit - t).abs() <= dt)
                .map_or(0, |c| c.track_id);
            return Err(Error::Consistency {
                track_id: culprit,
                message: format!("link count negative at t={t}"),
            });
        }
        series.t.push((k0 + i as i64) as f64 * dt);
        series.n.push(n);
    }
    Ok(series)
}

/// Sum of speed drops normalised by `u_f`; a full stop from `u_f` is 1.0.
pub fn partial_stops(speeds: &[f64], u_f: f64) -> f64 {
    speeds
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .sum::<f64>()
        / u_f
}

/// Per-sample delay `dt·max(0, 1 − u/u_f)` for a uniformly sampled series.
pub fn total_delay(speeds: &[f64], u_f: f64, dt: f64) -> f64 {
    speeds.iter().map(|&u| dt * (1.0 - u / u_f).max(0.0)).sum()
}

pub fn trajectory_stops(traj: &Trajectory, a: &LaneAssignment, u_f: f64) -> f64 {
    let speeds: Vec<f64> = traj.points[a.in_area()].iter().map(|p| p.speed).collect();
    partial_stops(&speeds, u_f)
}

/// Delay over the in-area samples, weighting each sample by the time to the
/// next one so that a stationary vehicle's delay equals its travel time.
pub fn trajectory_delay(traj: &Trajectory, a: &LaneAssignment, u_f: f64) -> f64 {
    traj.points[a.in_area()]
        .windows(2)
        .map(|w| (w[1].t - w[0].t) * (1.0 - w[0].speed / u_f).max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeSpeedSource {
    #[default]
    SpeedLimit,
    P95,
}

impl FromStr for FreeSpeedSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed-limit" => Ok(FreeSpeedSource::SpeedLimit),
            "p95" => Ok(FreeSpeedSource::P95),
            other => Err(Error::Config(format!("unknown free-speed source `{other}`"))),
        }
    }
}

/// Linear interpolation between order statistics; `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Free-flow speed in m/s. The 95th percentile falls back to the speed
/// limit when there are no moving samples.
pub fn free_speed(source: FreeSpeedSource, area: &StudyArea, in_area_speeds: &[f64]) -> f64 {
    match source {
        FreeSpeedSource::SpeedLimit => area.speed_limit,
        FreeSpeedSource::P95 => match percentile(in_area_speeds, 95.0) {
            Some(p) if p > 0.0 => p,
            _ => {
                log::warn!("no moving samples for the 95th-percentile speed, using the speed limit");
                area.speed_limit
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMoe {
    pub track_id: u64,
    pub vehicle_class: VehicleClass,
    pub lanes: BTreeSet<u32>,
    pub travel_time: f64,
    pub stops: f64,
    pub delay: f64,
}

pub fn vehicle_moes(dataset: &Dataset, assignments: &[LaneAssignment], u_f: f64) -> Vec<VehicleMoe> {
    assignments
        .par_iter()
        .filter_map(|a| {
            let traj = dataset.get(a.track_id)?;
            Some(VehicleMoe {
                track_id: a.track_id,
                vehicle_class: a.vehicle_class,
                lanes: a.visited_lanes(),
                travel_time: travel_time(&TimeCard::from_assignment(traj, a)),
                stops: trajectory_stops(traj, a, u_f),
                delay: trajectory_delay(traj, a, u_f),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub travel_time_sum: f64,
    pub stops_sum: f64,
    pub delay_sum: f64,
}

impl GroupStats {
    fn add(&mut self, m: &VehicleMoe) {
        self.count += 1;
        self.travel_time_sum += m.travel_time;
        self.stops_sum += m.stops;
        self.delay_sum += m.delay;
    }

    fn merge(&mut self, o: &GroupStats) {
        self.count += o.count;
        self.travel_time_sum += o.travel_time_sum;
        self.stops_sum += o.stops_sum;
        self.delay_sum += o.delay_sum;
    }

    fn mean(&self, sum: f64) -> Option<f64> {
        (self.count > 0).then(|| sum / self.count as f64)
    }

    pub fn mean_travel_time(&self) -> Option<f64> {
        self.mean(self.travel_time_sum)
    }

    pub fn mean_stops(&self) -> Option<f64> {
        self.mean(self.stops_sum)
    }

    pub fn mean_delay(&self) -> Option<f64> {
        self.mean(self.delay_sum)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub per_class: BTreeMap<VehicleClass, GroupStats>,
}

impl ClassStats {
    pub fn class(&self, c: VehicleClass) -> GroupStats {
        self.per_class.get(&c).copied().unwrap_or_default()
    }

    pub fn total(&self) -> GroupStats {
        let mut t = GroupStats::default();
        for s in self.per_class.values() {
            t.merge(s);
        }
        t
    }

    fn merge(&mut self, o: &ClassStats) {
        for (c, s) in &o.per_class {
            self.per_class.entry(*c).or_default().merge(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementGroup {
    pub name: String,
    pub lanes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovementMap(pub Vec<MovementGroup>);

impl Default for MovementMap {
    fn default() -> Self {
        MovementMap(vec![
            MovementGroup {
                name: "Left Turn".into(),
                lanes: vec![1, 2],
            },
            MovementGroup {
                name: "Through".into(),
                lanes: vec![3, 4, 5],
            },
        ])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoeAggregate {
    pub by_lane: BTreeMap<u32, ClassStats>,
    /// In movement-map order.
    pub by_movement: Vec<(String, ClassStats)>,
    /// Each vehicle once.
    pub overall: ClassStats,
}

/// Per-vehicle means by lane (every visited lane), by movement (the sum of
/// its lanes' groups), and overall.
pub fn aggregate_moes(moes: &[VehicleMoe], lane_ids: &[u32], movements: &MovementMap) -> MoeAggregate {
    let mut agg = MoeAggregate::default();
    for &l in lane_ids {
        agg.by_lane.insert(l, ClassStats::default());
    }
    for m in moes {
        agg.overall.per_class.entry(m.vehicle_class).or_default().add(m);
        for lane in &m.lanes {
            agg.by_lane
                .entry(*lane)
                .or_default()
                .per_class
                .entry(m.vehicle_class)
                .or_default()
                .add(m);
        }
    }
    for g in &movements.0 {
        let mut s = ClassStats::default();
        for lane in &g.lanes {
            if let Some(ls) = agg.by_lane.get(lane) {
                s.merge(ls);
            }
        }
        agg.by_movement.push((g.name.clone(), s));
    }
    agg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashType {
    SingleDriverRightRoadsideDeparture,
    SingleDriverLeftRoadsideDeparture,
    SingleDriverForwardImpact,
    SameDirectionRearEnd,
    SameDirectionForwardImpact,
    SameDirectionSideswipeAngle,
    OppositeDirectionHeadOn,
    OppositeDirectionForwardImpact,
    OppositeDirectionSideswipeAngle,
    TurnAcrossPath,
    TurnIntoPath,
    PerpendicularCrash,
    BackingVehicle,
    OtherOrUnknown,
}

impl CrashType {
    pub const ALL: [CrashType; 14] = [
        CrashType::SingleDriverRightRoadsideDeparture,
        CrashType::SingleDriverLeftRoadsideDeparture,
        CrashType::SingleDriverForwardImpact,
        CrashType::SameDirectionRearEnd,
        CrashType::SameDirectionForwardImpact,
        CrashType::SameDirectionSideswipeAngle,
        CrashType::OppositeDirectionHeadOn,
        CrashType::OppositeDirectionForwardImpact,
        CrashType::OppositeDirectionSideswipeAngle,
        CrashType::TurnAcrossPath,
        CrashType::TurnIntoPath,
        CrashType::PerpendicularCrash,
        CrashType::BackingVehicle,
        CrashType::OtherOrUnknown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CrashType::SingleDriverRightRoadsideDeparture => "Single Driver - Right Roadside Departure",
            CrashType::SingleDriverLeftRoadsideDeparture => "Single Driver - Left Roadside Departure",
            CrashType::SingleDriverForwardImpact => "Single Driver - Forward Impact",
            CrashType::SameDirectionRearEnd => "Same Traffic Way and Same Direction - Rear-End",
            CrashType::SameDirectionForwardImpact => "Same Traffic Way and Same Direction - Forward Impact",
            CrashType::SameDirectionSideswipeAngle => "Same Traffic Way and Same Direction - Sideswipe/Angle",
            CrashType::OppositeDirectionHeadOn => "Same Traffic Way and Opposite Direction - Head-On",
            CrashType::OppositeDirectionForwardImpact => "Same Traffic Way and Opposite Direction - Forward Impact",
            CrashType::OppositeDirectionSideswipeAngle => "Same Traffic Way and Opposite Direction - Sideswipe/Angle",
            CrashType::TurnAcrossPath => "Change Traffic Way and Vehicle Turning - Turn Across Path",
            CrashType::TurnIntoPath => "Change Traffic Way and Vehicle Turning - Turn Into Path",
            CrashType::PerpendicularCrash => "Intersecting Paths - Perpendicular Crash",
            CrashType::BackingVehicle => "Backing Vehicle",
            CrashType::OtherOrUnknown => "Other or Unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashCoefficient {
    #[serde(rename = "type")]
    pub crash_type: CrashType,
    /// h/km
    pub a1: f64,
    pub a2: f64,
}

/// Exactly one row per crash type, in [`CrashType::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CrashCoefficientTable(Vec<CrashCoefficient>);

const SHIPPED_CRASH_COEFFICIENTS: &str = include_str!("../data/crash_coefficients.json");

impl CrashCoefficientTable {
    pub fn new(mut rows: Vec<CrashCoefficient>) -> Result<Self> {
        rows.sort_by_key(|r| r.crash_type);
        for (i, t) in CrashType::ALL.iter().enumerate() {
            match rows.get(i) {
                Some(r) if r.crash_type == *t => {}
                _ => {
                    return Err(Error::Config(format!(
                        "crash table needs exactly one `{}` row among {} rows",
                        t.label(),
                        rows.len()
                    )))
                }
            }
        }
        if rows.len() != CrashType::ALL.len() {
            return Err(Error::Config(format!("crash table has {} rows, expected 14", rows.len())));
        }
        if let Some(r) = rows.iter().find(|r| !(r.a1.is_finite() && r.a2.is_finite())) {
            return Err(Error::Config(format!("non-finite coefficient for `{}`", r.crash_type.label())));
        }
        Ok(CrashCoefficientTable(rows))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<CrashCoefficient> =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("crash coefficients: {e}")))?;
        Self::new(rows)
    }

    /// Sample table with `a1 = 0`, reproducing the published rates at any speed.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CRASH_COEFFICIENTS).expect("shipped crash table is valid")
    }

    pub fn rows(&self) -> &[CrashCoefficient] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRates {
    /// km/h
    pub u_f: f64,
    /// crashes per VMT
    pub per_type: Vec<(CrashType, f64)>,
    pub total: f64,
}

impl CrashRates {
    /// Distance-based rate times free speed.
    pub fn time_based_total(&self) -> f64 {
        self.total * self.u_f
    }
}

pub fn crash_rate(u_f_kmh: f64, c: &CrashCoefficient) -> f64 {
    (c.a1 * u_f_kmh + c.a2).exp()
}

pub fn crash_rates(u_f_kmh: f64, table: &CrashCoefficientTable) -> Result<CrashRates> {
    if !(u_f_kmh >= 0.0) {
        return Err(Error::Domain(format!("free speed must be non-negative, got {u_f_kmh}")));
    }
    let per_type: Vec<(CrashType, f64)> = table
        .rows()
        .iter()
        .map(|c| (c.crash_type, crash_rate(u_f_kmh, c)))
        .collect();
    let total = per_type.iter().map(|(_, r)| r).sum();
    Ok(CrashRates {
        u_f: u_f_kmh,
        per_type,
        total,
    })
}
