//! Seeded signalized-approach generator with planted queue, spillback and
//! delay ground truth.
//!
//! Each lane runs an independent Newell-style car-following simulation on a
//! 0.05 s step: a vehicle follows its leader's trajectory shifted by the
//! reaction time `τ = h_s − s/v_f` and the jam spacing `s`, accelerates at a
//! constant rate toward `v_f`, and brakes at a constant rate toward the
//! constraint. During red the stop line acts as a stationary leader.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LanePolygon, LocalPoint, Projection, Segment, StudyArea};
use crate::ingest::{kmh_to_ms, Dataset, Trajectory, TrajectoryPoint, VehicleType};
use crate::queueing::QUEUE_SPEED_MS;

const SIM_DT: f64 = 0.05;
pub const LANE_WIDTH_M: f64 = 3.5;
/// Vehicles are dropped this far past the downstream edge.
const EXIT_RUNOUT_M: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub n_lanes: u32,
    /// s
    pub cycle: f64,
    /// s
    pub red: f64,
    /// Start of the first red within the cycle, s.
    pub red_offset: f64,
    /// Mean arrival headway per lane, s.
    pub arrival_headway: f64,
    /// Uniform jitter on each arrival, as a fraction of the headway (< 0.5).
    pub arrival_jitter: f64,
    /// s
    pub saturation_headway: f64,
    /// m
    pub jam_spacing: f64,
    /// Study-area length, m.
    pub approach_length: f64,
    /// Distance upstream of the area where vehicles appear, m.
    pub upstream_run: f64,
    /// m/s
    pub free_speed: f64,
    /// m/s²
    pub accel: f64,
    /// m/s²
    pub decel: f64,
    /// s
    pub duration: f64,
    /// Output sampling interval, s.
    pub sample_interval: f64,
    /// Spillback proximity used for the planted events, m.
    pub spillback_eps: f64,
    /// Minimum queued run, in samples, for the planted truth.
    pub min_queue_dwell: usize,
    /// s
    pub spillback_dedup: f64,
    pub origin: GeoPoint,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            n_lanes: 2,
            cycle: 60.0,
            red: 30.0,
            red_offset: 20.0,
            arrival_headway: 6.0,
            arrival_jitter: 0.2,
            saturation_headway: 2.0,
            jam_spacing: 7.0,
            approach_length: 150.0,
            upstream_run: 200.0,
            free_speed: kmh_to_ms(55.0),
            accel: 2.0,
            decel: 3.0,
            duration: 300.0,
            sample_interval: 0.5,
            spillback_eps: 5.0,
            min_queue_dwell: 2,
            spillback_dedup: 10.0,
            origin: GeoPoint::new(37.98, 23.73),
        }
    }
}

impl SynthScenario {
    pub fn reaction_time(&self) -> f64 {
        self.saturation_headway - self.jam_spacing / self.free_speed
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cycle", self.cycle),
            ("red", self.red),
            ("arrival_headway", self.arrival_headway),
            ("saturation_headway", self.saturation_headway),
            ("jam_spacing", self.jam_spacing),
            ("approach_length", self.approach_length),
            ("upstream_run", self.upstream_run),
            ("free_speed", self.free_speed),
            ("accel", self.accel),
            ("decel", self.decel),
            ("sample_interval", self.sample_interval),
            ("spillback_eps", self.spillback_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("scenario `{name}` must be positive, got {v}")));
            }
        }
        if self.n_lanes == 0 {
            return Err(Error::Config("scenario needs at least one lane".into()));
        }
        if self.red >= self.cycle {
            return Err(Error::Config(format!("red {} must be shorter than the cycle {}", self.red, self.cycle)));
        }
        if !(0.0..0.5).contains(&self.arrival_jitter) {
            return Err(Error::Config("arrival_jitter must be in [0, 0.5)".into()));
        }
        if self.reaction_time() <= 0.0 {
            return Err(Error::Config(format!(
                "saturation headway {} s is below the jam-spacing crossing time {} s",
                self.saturation_headway,
                self.jam_spacing / self.free_speed
            )));
        }
        let ratio = self.sample_interval / SIM_DT;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("sample_interval must be a multiple of {SIM_DT} s")));
        }
        if !(self.duration >= 0.0) {
            return Err(Error::Config("duration must be non-negative".into()));
        }
        Ok(())
    }

    /// More arrivals per cycle than green time can discharge.
    pub fn oversaturated(&self) -> bool {
        let green = self.cycle - self.red;
        green / self.saturation_headway < self.cycle / self.arrival_headway
    }

    pub fn is_red(&self, t: f64) -> bool {
        (t - self.red_offset).rem_euclid(self.cycle) < self.red
    }

    /// Rectangular lanes running north from the upstream edge at the origin;
    /// lane 1 is the westmost.
    pub fn area(&self) -> Result<StudyArea> {
        let l = self.approach_length;
        let w = LANE_WIDTH_M;
        let lanes = (1..=self.n_lanes)
            .map(|id| {
                let x0 = (id - 1) as f64 * w;
                LanePolygon::new(
                    id,
                    vec![
                        LocalPoint::new(x0, 0.0),
                        LocalPoint::new(x0 + w, 0.0),
                        LocalPoint::new(x0 + w, l),
                        LocalPoint::new(x0, l),
                    ],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let width = self.n_lanes as f64 * w;
        StudyArea::new(
            "synthetic approach",
            self.origin,
            lanes,
            Segment {
                a: LocalPoint::new(0.0, 0.0),
                b: LocalPoint::new(width, 0.0),
            },
            Segment {
                a: LocalPoint::new(0.0, l),
                b: LocalPoint::new(width, l),
            },
        )
        .map(|a| a.with_speed_limit(self.free_speed))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneTruth {
    pub lane_id: u32,
    /// m; 0 when the lane never queued.
    pub max_queue: f64,
    /// Every sample time at which the maximum is attained.
    pub peak_times: Vec<f64>,
    /// Queue onsets at the upstream edge, s.
    pub spillbacks: Vec<f64>,
    /// First queued sample of each red, s.
    pub queue_onsets: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lanes: Vec<LaneTruth>,
    /// In-area travel time minus free-flow time, per vehicle that crossed
    /// the whole area.
    pub vehicle_delay: BTreeMap<u64, f64>,
    /// Red starts within the simulated horizon, s.
    pub red_starts: Vec<f64>,
    pub oversaturated: bool,
}

struct SimVehicle {
    id: u64,
    vehicle_type: VehicleType,
    /// Position at every step since spawn.
    history: Vec<f64>,
    spawn_step: usize,
    v: f64,
    /// Cycle index during which this vehicle may ignore the red.
    released_cycle: Option<i64>,
    points: Vec<TrajectoryPoint>,
    /// Local positions of `points`, meters along the lane.
    ys: Vec<f64>,
    t_in: Option<f64>,
    t_out: Option<f64>,
    done: bool,
}

impl SimVehicle {
    fn x(&self) -> f64 {
        *self.history.last().expect("history starts at spawn")
    }

    fn x_at(&self, step: usize) -> f64 {
        let i = step.saturating_sub(self.spawn_step).min(self.history.len() - 1);
        self.history[i]
    }
}

fn vehicle_type(rng: &mut ChaCha8Rng) -> VehicleType {
    let r: f64 = rng.gen();
    match r {
        r if r < 0.70 => VehicleType::LightMediumDuty,
        r if r < 0.82 => VehicleType::Taxi,
        r if r < 0.92 => VehicleType::Motorcycle,
        r if r < 0.97 => VehicleType::Bus,
        _ => VehicleType::HeavyDuty,
    }
}

struct LaneRun {
    vehicles: Vec<SimVehicle>,
}

fn simulate_lane(s: &SynthScenario, lane: u32, seed: u64, proj: &Projection) -> LaneRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(lane));
    let tau_steps = (s.reaction_time() / SIM_DT).round() as usize;
    let sample_every = (s.sample_interval / SIM_DT).round() as usize;
    let total_steps = (s.duration / SIM_DT).round() as usize;
    let stop_x = s.approach_length - s.jam_spacing;
    let lateral = (f64::from(lane) - 0.5) * LANE_WIDTH_M;

    let mut arrivals = Vec::new();
    let mut n = 0u64;
    loop {
        let jitter = s.arrival_jitter * s.arrival_headway * (2.0 * rng.gen::<f64>() - 1.0);
        let t = (n as f64 + 0.5) * s.arrival_headway + jitter;
        if t > s.duration {
            break;
        }
        arrivals.push((t, vehicle_type(&mut rng)));
        n += 1;
    }

    let mut vehicles: Vec<SimVehicle> = Vec::new();
    let mut next_arrival = 0usize;
    let mut prev_red = false;
    for step in 0..=total_steps {
        let t = step as f64 * SIM_DT;
        let red = s.is_red(t);
        let cycle = ((t - s.red_offset) / s.cycle).floor() as i64;

        // a red onset releases vehicles too close to stop comfortably
        if red && !prev_red {
            for v in vehicles.iter_mut().filter(|v| !v.done) {
                let gap = stop_x - v.x();
                if gap < v.v * v.v / (2.0 * s.decel) {
                    v.released_cycle = Some(cycle);
                }
            }
        }
        prev_red = red;

        if step > 0 {
            let mut leader: Option<usize> = None;
            for i in 0..vehicles.len() {
                if vehicles[i].done {
                    continue;
                }
                let x = vehicles[i].x();
                let mut v = (vehicles[i].v + s.accel * SIM_DT).min(s.free_speed);
                let mut limit = |gap: f64| {
                    let gap = gap.max(0.0);
                    v = v.min((2.0 * s.decel * gap).sqrt()).min(gap / SIM_DT);
                };
                if let Some(l) = leader {
                    limit(vehicles[l].x_at((step - 1).saturating_sub(tau_steps)) - s.jam_spacing - x);
                }
                if red && x <= stop_x && vehicles[i].released_cycle != Some(cycle) {
                    limit(stop_x - x);
                }
                let veh = &mut vehicles[i];
                veh.v = v;
                veh.history.push(x + v * SIM_DT);
                leader = Some(i);
            }
        }

        // spawn, postponed while the entry point is blocked
        while next_arrival < arrivals.len() && arrivals[next_arrival].0 <= t {
            let back = vehicles.iter().rev().find(|v| !v.done).map(|v| v.x());
            let room = back.map_or(f64::INFINITY, |b| b + s.upstream_run - s.jam_spacing);
            if room < s.free_speed * s.reaction_time() {
                break;
            }
            let v0 = s.free_speed.min((2.0 * s.decel * room).sqrt());
            let (_, vt) = arrivals[next_arrival];
            vehicles.push(SimVehicle {
                id: u64::from(lane) * 100_000 + next_arrival as u64 + 1,
                vehicle_type: vt,
                history: vec![-s.upstream_run],
                spawn_step: step,
                v: v0,
                released_cycle: None,
                points: Vec::new(),
                ys: Vec::new(),
                t_in: None,
                t_out: None,
                done: false,
            });
            next_arrival += 1;
        }

        for veh in vehicles.iter_mut().filter(|v| !v.done) {
            let x = veh.x();
            let prev = if veh.history.len() > 1 { veh.history[veh.history.len() - 2] } else { x };
            // crossing times interpolated within the step
            for (edge, slot) in [(0.0, &mut veh.t_in), (s.approach_length, &mut veh.t_out)] {
                if slot.is_none() && x >= edge && prev < edge {
                    let frac = if x > prev { (edge - prev) / (x - prev) } else { 1.0 };
                    *slot = Some(t - SIM_DT + frac * SIM_DT);
                }
            }
            if step % sample_every == 0 {
                let acc = if veh.points.is_empty() {
                    0.0
                } else {
                    (veh.v - veh.points.last().map_or(veh.v, |p| p.speed)) / s.sample_interval
                };
                let g = proj.inverse(LocalPoint::new(lateral, x));
                veh.points.push(TrajectoryPoint {
                    t,
                    lat: g.lat,
                    lon: g.lon,
                    speed: veh.v,
                    lon_acc: acc,
                    lat_acc: 0.0,
                });
                veh.ys.push(x);
            }
            if x > s.approach_length + EXIT_RUNOUT_M {
                veh.done = true;
            }
        }
    }
    LaneRun { vehicles }
}

/// Per-sample queued flags after dropping runs shorter than `min_run`.
fn queued_runs(speeds: &[f64], min_run: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < speeds.len() {
        if speeds[i] > QUEUE_SPEED_MS {
            i += 1;
            continue;
        }
        let start = i;
        while i < speeds.len() && speeds[i] <= QUEUE_SPEED_MS {
            i += 1;
        }
        if i - start >= min_run {
            runs.push((start, i - 1));
        }
    }
    runs
}

fn lane_truth(s: &SynthScenario, lane: u32, run: &LaneRun) -> LaneTruth {
    let l = s.approach_length;
    let key = |t: f64| (t / s.sample_interval).round() as i64;
    // sample key -> furthest-upstream queued position inside the area
    let mut tail: BTreeMap<i64, f64> = BTreeMap::new();
    let mut candidates: Vec<f64> = Vec::new();
    for v in &run.vehicles {
        let speeds: Vec<f64> = v.points.iter().map(|p| p.speed).collect();
        let inside = |y: f64| (0.0..=l).contains(&y);
        for (a, b) in queued_runs(&speeds, s.min_queue_dwell) {
            if (-s.spillback_eps..=s.spillback_eps).contains(&v.ys[a]) {
                candidates.push(v.points[a].t);
            }
            for k in a..=b {
                if inside(v.ys[k]) {
                    let e = tail.entry(key(v.points[k].t)).or_insert(f64::INFINITY);
                    *e = e.min(v.ys[k]);
                }
            }
        }
        // already queued on arrival in the area
        if let Some(first_in) = v.ys.iter().position(|&y| inside(y)) {
            let last_in = v.ys.iter().rposition(|&y| inside(y)).unwrap_or(first_in);
            let in_speeds = &speeds[first_in..=last_in];
            if let Some(&(a, _)) = queued_runs(in_speeds, s.min_queue_dwell).first() {
                if a == 0 {
                    candidates.push(v.points[first_in].t);
                }
            }
        }
    }

    let mut truth = LaneTruth {
        lane_id: lane,
        ..LaneTruth::default()
    };
    for (&k, &y) in &tail {
        let extent = l - y;
        if extent > truth.max_queue + 1e-6 {
            truth.max_queue = extent;
            truth.peak_times.clear();
        }
        if (extent - truth.max_queue).abs() <= 1e-6 {
            truth.peak_times.push(k as f64 * s.sample_interval);
        }
    }
    let mut prev: Option<i64> = None;
    for &k in tail.keys() {
        if prev != Some(k - 1) {
            truth.queue_onsets.push(k as f64 * s.sample_interval);
        }
        prev = Some(k);
    }

    candidates.sort_by(f64::total_cmp);
    let mut last: Option<f64> = None;
    for t in candidates {
        if last.is_some_and(|p| t - p < s.spillback_dedup) {
            continue;
        }
        last = Some(t);
        truth.spillbacks.push(t);
    }
    truth
}

/// Generates a dataset and its planted ground truth. Deterministic for a
/// fixed scenario and seed.
pub fn synth_generate(s: &SynthScenario, seed: u64) -> Result<(Dataset, GroundTruth)> {
    s.validate()?;
    let proj = Projection::new(s.origin);
    let mut trajectories = Vec::new();
    let mut truth = GroundTruth {
        oversaturated: s.oversaturated(),
        ..GroundTruth::default()
    };
    if s.oversaturated() {
        log::warn!("scenario is oversaturated; queues will spill back");
    }
    for lane in 1..=s.n_lanes {
        let run = simulate_lane(s, lane, seed, &proj);
        truth.lanes.push(lane_truth(s, lane, &run));
        for v in run.vehicles {
            if v.points.len() < 2 {
                continue;
            }
            if let (Some(a), Some(b)) = (v.t_in, v.t_out) {
                truth
                    .vehicle_delay
                    .insert(v.id, (b - a - s.approach_length / s.free_speed).max(0.0));
            }
            let duration = v.points[v.points.len() - 1].t - v.points[0].t;
            let traveled = v.ys[v.ys.len() - 1] - v.ys[0];
            trajectories.push(Trajectory {
                track_id: v.id,
                vehicle_type: v.vehicle_type,
                traveled_d: traveled,
                avg_speed: if duration > 0.0 { traveled / duration } else { 0.0 },
                points: v.points,
            });
        }
    }
    let mut k = 0;
    loop {
        let start = s.red_offset + k as f64 * s.cycle;
        if start > s.duration {
            break;
        }
        if start >= 0.0 {
            truth.red_starts.push(start);
        }
        k += 1;
    }
    let mut dataset = Dataset::from_trajectories(trajectories)?;
    dataset.sample_interval = s.sample_interval;
    Ok((dataset, truth))
}
