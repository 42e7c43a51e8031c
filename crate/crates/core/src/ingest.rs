//! Trajectory ingestion.
//!
//! Two text formats are understood:
//!
//! * the drone "wide" format: one semicolon-delimited row per vehicle,
//!   `track_id; type; traveled_d; avg_speed;` followed by repeating
//!   `lat; lon; speed; lon_acc; lat_acc; time;` groups (speeds in km/h);
//! * a long CSV, one point per row, with header
//!   `track_id,type,t,lat,lon,speed_kmh,lon_acc,lat_acc`.
//!
//! Everything is converted to SI on the way in; speeds are stored in m/s.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMH_PER_MS: f64 = 3.6;

/// Fields before the first point group in a wide row.
const WIDE_HEADER_FIELDS: usize = 4;
/// Fields per point group in a wide row.
const WIDE_GROUP_FIELDS: usize = 6;

pub const LONG_HEADER: &str = "track_id,type,t,lat,lon,speed_kmh,lon_acc,lat_acc";

pub fn kmh_to_ms(v: f64) -> f64 {
    v / KMH_PER_MS
}

pub fn ms_to_kmh(v: f64) -> f64 {
    v * KMH_PER_MS
}

/// Vehicle type as recorded in the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleType {
    LightMediumDuty,
    Motorcycle,
    HeavyDuty,
    Bus,
    /// Reported together with light- and medium-duty vehicles.
    Taxi,
}

impl VehicleType {
    pub fn from_label(label: &str) -> Option<Self> {
        let norm = label.trim().to_ascii_lowercase().replace(['-', '_'], " ");
        let ty = match norm.as_str() {
            "car" | "medium vehicle" | "light medium duty" | "light duty" | "medium duty" => {
                VehicleType::LightMediumDuty
            }
            "taxi" => VehicleType::Taxi,
            "motorcycle" | "powered two wheeler" | "ptw" => VehicleType::Motorcycle,
            "heavy vehicle" | "heavy duty" | "truck" => VehicleType::HeavyDuty,
            "bus" => VehicleType::Bus,
            _ => return None,
        };
        Some(ty)
    }

    /// Label written back to the wide format.
    pub fn label(self) -> &'static str {
        match self {
            VehicleType::LightMediumDuty => "Car",
            VehicleType::Motorcycle => "Motorcycle",
            VehicleType::HeavyDuty => "Heavy Vehicle",
            VehicleType::Bus => "Bus",
            VehicleType::Taxi => "Taxi",
        }
    }

    pub fn class(self) -> VehicleClass {
        match self {
            VehicleType::LightMediumDuty | VehicleType::Taxi => VehicleClass::LightMediumDuty,
            VehicleType::Motorcycle => VehicleClass::Motorcycle,
            VehicleType::HeavyDuty => VehicleClass::HeavyDuty,
            VehicleType::Bus => VehicleClass::Bus,
        }
    }
}

/// Reporting category used by every output table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    LightMediumDuty,
    Motorcycle,
    HeavyDuty,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::LightMediumDuty,
        VehicleClass::Motorcycle,
        VehicleClass::HeavyDuty,
        VehicleClass::Bus,
    ];

    pub fn key(self) -> &'static str {
        match self {
            VehicleClass::LightMediumDuty => "light_medium_duty",
            VehicleClass::Motorcycle => "motorcycle",
            VehicleClass::HeavyDuty => "heavy_duty",
            VehicleClass::Bus => "bus",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Seconds since the start of the recording.
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    /// m/s
    pub speed: f64,
    /// Longitudinal acceleration, m/s².
    pub lon_acc: f64,
    /// Lateral acceleration, m/s².
    pub lat_acc: f64,
}

impl TrajectoryPoint {
    fn check(&self) -> std::result::Result<(), String> {
        let all_finite = [self.t, self.lat, self.lon, self.speed, self.lon_acc, self.lat_acc]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err("non-finite value".into());
        }
        if self.t < 0.0 {
            return Err(format!("negative time {}", self.t));
        }
        if self.speed < 0.0 {
            return Err(format!("negative speed {}", self.speed));
        }
        if self.lat.abs() > 90.0 || self.lon.abs() > 180.0 {
            return Err(format!("coordinate out of range ({}, {})", self.lat, self.lon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track_id: u64,
    pub vehicle_type: VehicleType,
    /// Meters, as reported by the source.
    pub traveled_d: f64,
    /// m/s
    pub avg_speed: f64,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// Derives `traveled_d` as the polyline length and `avg_speed` as the
    /// mean point speed.
    pub fn new(track_id: u64, vehicle_type: VehicleType, points: Vec<TrajectoryPoint>) -> Self {
        let traveled_d = points
            .windows(2)
            .map(|w| crate::geo::haversine_m(w[0].lat, w[0].lon, w[1].lat, w[1].lon))
            .sum();
        let avg_speed = if points.is_empty() {
            0.0
        } else {
            points.iter().map(|p| p.speed).sum::<f64>() / points.len() as f64
        };
        Trajectory {
            track_id,
            vehicle_type,
            traveled_d,
            avg_speed,
            points,
        }
    }

    pub fn class(&self) -> VehicleClass {
        self.vehicle_type.class()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// WGS84 bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: BTreeMap<u64, Trajectory>,
    /// Modal sampling step in seconds.
    pub sample_interval: f64,
    pub extent: Option<Extent>,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset {
            trajectories: BTreeMap::new(),
            sample_interval: 1.0,
            extent: None,
        }
    }
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate track ids and empty trajectories.
    pub fn from_trajectories(trajectories: impl IntoIterator<Item = Trajectory>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for traj in trajectories {
            if traj.points.is_empty() {
                return Err(Error::Validation(format!(
                    "track {} has no points",
                    traj.track_id
                )));
            }
            match map.entry(traj.track_id) {
                Entry::Occupied(_) => {
                    return Err(Error::Validation(format!(
                        "duplicate track_id {}",
                        traj.track_id
                    )))
                }
                Entry::Vacant(slot) => {
                    slot.insert(traj);
                }
            }
        }
        let sample_interval = modal_interval(map.values()).unwrap_or(1.0);
        let extent = compute_extent(map.values());
        Ok(Dataset {
            trajectories: map,
            sample_interval,
            extent,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    pub fn get(&self, track_id: u64) -> Option<&Trajectory> {
        self.trajectories.get(&track_id)
    }

    /// Earliest and latest timestamp over all trajectories.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for p in self.iter().flat_map(|t| t.points.iter()) {
            span = Some(match span {
                None => (p.t, p.t),
                Some((lo, hi)) => (lo.min(p.t), hi.max(p.t)),
            });
        }
        span
    }
}

/// Most frequent positive step, quantised to microseconds; ties go to the smaller step.
fn modal_interval<'a>(trajs: impl Iterator<Item = &'a Trajectory>) -> Option<f64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for traj in trajs {
        for w in traj.points.windows(2) {
            let dt = w[1].t - w[0].t;
            if dt > 0.0 {
                *counts.entry((dt * 1e6).round() as i64).or_default() += 1;
            }
        }
    }
    let mut best: Option<(i64, usize)> = None;
    for (&key, &n) in &counts {
        if key > 0 && best.is_none_or(|(_, m)| n > m) {
            best = Some((key, n));
        }
    }
    best.map(|(key, _)| key as f64 * 1e-6)
}

fn compute_extent<'a>(trajs: impl Iterator<Item = &'a Trajectory>) -> Option<Extent> {
    let mut extent: Option<Extent> = None;
    for p in trajs.flat_map(|t| t.points.iter()) {
        let e = extent.get_or_insert(Extent {
            min_lat: p.lat,
            min_lon: p.lon,
            max_lat: p.lat,
            max_lon: p.lon,
        });
        e.min_lat = e.min_lat.min(p.lat);
        e.min_lon = e.min_lon.min(p.lon);
        e.max_lat = e.max_lat.max(p.lat);
        e.max_lon = e.max_lon.max(p.lon);
    }
    extent
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{what}: `{}` is not a number", field.trim())))
}

fn parse_track_id(field: &str, line: usize) -> Result<u64> {
    field
        .trim()
        .parse::<u64>()
        .map_err(|_| Error::parse(line, format!("track_id `{}` is not an integer", field.trim())))
}

fn parse_type(field: &str, line: usize) -> Result<VehicleType> {
    VehicleType::from_label(field)
        .ok_or_else(|| Error::parse(line, format!("unknown vehicle type `{}`", field.trim())))
}

/// Parses the semicolon-delimited wide format.
///
/// A header row starting with `track_id` is skipped. Trailing empty fields are
/// ignored; any other field count that is not `4 + 6k` with `k >= 1` is an error.
pub fn parse_pneuma_wide(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut trajectories = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut n = record.len();
        while n > 0 && record[n - 1].is_empty() {
            n -= 1;
        }
        if n == 0 {
            continue;
        }
        if record[0].eq_ignore_ascii_case("track_id") {
            continue;
        }
        if n < WIDE_HEADER_FIELDS || (n - WIDE_HEADER_FIELDS) % WIDE_GROUP_FIELDS != 0 {
            return Err(Error::parse(
                line,
                format!("row has {n} fields; expected 4 + 6k (incomplete point group)"),
            ));
        }
        if n == WIDE_HEADER_FIELDS {
            return Err(Error::parse(line, "row has no point groups"));
        }

        let track_id = parse_track_id(&record[0], line)?;
        let vehicle_type = parse_type(&record[1], line)?;
        let traveled_d = parse_f64(&record[2], line, "traveled_d")?;
        let avg_speed = kmh_to_ms(parse_f64(&record[3], line, "avg_speed")?);

        let mut points = Vec::with_capacity((n - WIDE_HEADER_FIELDS) / WIDE_GROUP_FIELDS);
        for g in (WIDE_HEADER_FIELDS..n).step_by(WIDE_GROUP_FIELDS) {
            let point = TrajectoryPoint {
                lat: parse_f64(&record[g], line, "lat")?,
                lon: parse_f64(&record[g + 1], line, "lon")?,
                speed: kmh_to_ms(parse_f64(&record[g + 2], line, "speed")?),
                lon_acc: parse_f64(&record[g + 3], line, "lon_acc")?,
                lat_acc: parse_f64(&record[g + 4], line, "lat_acc")?,
                t: parse_f64(&record[g + 5], line, "time")?,
            };
            point.check().map_err(|msg| Error::parse(line, msg))?;
            points.push(point);
        }
        trajectories.push(Trajectory {
            track_id,
            vehicle_type,
            traveled_d,
            avg_speed,
            points,
        });
    }
    Dataset::from_trajectories(trajectories)
}

/// Writes a dataset back to the wide format, speeds in km/h.
pub fn write_pneuma_wide(dataset: &Dataset) -> String {
    let mut out = String::from(
        "track_id; type; traveled_d; avg_speed; lat; lon; speed; lon_acc; lat_acc; time\n",
    );
    for traj in dataset.iter() {
        let _ = write!(
            out,
            "{}; {}; {}; {};",
            traj.track_id,
            traj.vehicle_type.label(),
            traj.traveled_d,
            ms_to_kmh(traj.avg_speed)
        );
        for p in &traj.points {
            let _ = write!(
                out,
                " {}; {}; {}; {}; {}; {};",
                p.lat,
                p.lon,
                ms_to_kmh(p.speed),
                p.lon_acc,
                p.lat_acc,
                p.t
            );
        }
        out.push('\n');
    }
    out
}

/// Parses the long, one-point-per-row CSV.
///
/// `traveled_d` is the polyline length of the track and `avg_speed` the mean
/// of its point speeds, since the long format carries neither.
pub fn parse_long_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Ok(Dataset::default());
    }
    let expected: Vec<&str> = LONG_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(1, format!("expected header `{LONG_HEADER}`")));
    }

    let mut order: Vec<u64> = Vec::new();
    let mut by_id: BTreeMap<u64, (VehicleType, Vec<TrajectoryPoint>)> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != expected.len() {
            return Err(Error::parse(line, format!("expected 8 fields, found {}", row.len())));
        }
        let track_id = parse_track_id(&row[0], line)?;
        let vehicle_type = parse_type(&row[1], line)?;
        let point = TrajectoryPoint {
            t: parse_f64(&row[2], line, "t")?,
            lat: parse_f64(&row[3], line, "lat")?,
            lon: parse_f64(&row[4], line, "lon")?,
            speed: kmh_to_ms(parse_f64(&row[5], line, "speed_kmh")?),
            lon_acc: parse_f64(&row[6], line, "lon_acc")?,
            lat_acc: parse_f64(&row[7], line, "lat_acc")?,
        };
        point.check().map_err(|msg| Error::parse(line, msg))?;
        let entry = by_id.entry(track_id).or_insert_with(|| {
            order.push(track_id);
            (vehicle_type, Vec::new())
        });
        if entry.0 != vehicle_type {
            return Err(Error::parse(
                line,
                format!("track {track_id} changes vehicle type"),
            ));
        }
        entry.1.push(point);
    }

    let trajectories = order.into_iter().map(|id| {
        let (vehicle_type, points) = by_id.remove(&id).expect("id recorded on insert");
        Trajectory::new(id, vehicle_type, points)
    });
    Dataset::from_trajectories(trajectories)
}

/// Picks the parser from the first non-blank line.
pub fn parse_auto(text: &str) -> Result<Dataset> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    match first {
        Some(line) if line.starts_with("track_id,") => parse_long_csv(text),
        _ => parse_pneuma_wide(text),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// m/s
    pub speed_ceiling: f64,
    /// A gap is a step longer than this many sample intervals.
    pub gap_factor: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            speed_ceiling: 60.0,
            gap_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    NonMonotoneTimestamp {
        track_id: u64,
        index: usize,
        previous: f64,
        current: f64,
    },
    SpeedSpike {
        track_id: u64,
        index: usize,
        speed: f64,
    },
    Gap {
        track_id: u64,
        index: usize,
        step: f64,
    },
}

impl Finding {
    pub fn track_id(&self) -> u64 {
        match *self {
            Finding::NonMonotoneTimestamp { track_id, .. }
            | Finding::SpeedSpike { track_id, .. }
            | Finding::Gap { track_id, .. } => track_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn non_monotone(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::NonMonotoneTimestamp { .. }))
    }
}

/// Reports timestamp, speed and gap problems without touching the dataset.
pub fn validate_dataset(dataset: &Dataset, cfg: &ValidationConfig) -> ValidationReport {
    let gap_limit = cfg.gap_factor * dataset.sample_interval;
    let mut findings = Vec::new();
    for traj in dataset.iter() {
        for (i, p) in traj.points.iter().enumerate() {
            if p.speed > cfg.speed_ceiling {
                findings.push(Finding::SpeedSpike {
                    track_id: traj.track_id,
                    index: i,
                    speed: p.speed,
                });
            }
            if i == 0 {
                continue;
            }
            let prev = traj.points[i - 1].t;
            let step = p.t - prev;
            if step <= 0.0 {
                findings.push(Finding::NonMonotoneTimestamp {
                    track_id: traj.track_id,
                    index: i,
                    previous: prev,
                    current: p.t,
                });
            } else if step > gap_limit {
                findings.push(Finding::Gap {
                    track_id: traj.track_id,
                    index: i,
                    step,
                });
            }
        }
    }
    ValidationReport { findings }
}
