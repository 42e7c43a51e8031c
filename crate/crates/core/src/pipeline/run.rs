use std::path::Path;
use std::time::{Duration, Instant};

use super::config::{Resources, RunConfig};
use super::report::{Cell, MoeReport, Table};
use crate::energy::{fleet_fuel, FleetFuel};
use crate::error::{Error, Result};
use crate::fd::{fd_curve, fd_observations, fit_from_observations, FdFit, FdObservation};
use crate::geo::{assign_lanes, detect_lane_changes, lane_vehicle_counts, od_matrix, AssignmentResult};
use crate::ingest::{ms_to_kmh, parse_auto, validate_dataset, Dataset, Trajectory, ValidationReport, VehicleClass};
use crate::moe::{
    aggregate_moes, crash_rates, free_speed, percentile, vehicle_moes, ClassStats, CrashRates, FreeSpeedSource,
    GroupStats, MoeAggregate,
};
use crate::queueing::{analyze_queues, QueueAnalysis};

/// Which tables a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Assign,
    Queues,
    Moe,
    Fuel,
    Fd,
    All,
}

impl Section {
    fn includes(self, other: Section) -> bool {
        self == Section::All || self == other
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings(pub Vec<(&'static str, Duration)>);

impl StageTimings {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        let elapsed = start.elapsed();
        log::info!("stage {stage}: {:.3} s", elapsed.as_secs_f64());
        self.0.push((stage, elapsed));
        out
    }
}

/// Everything computed by one run, before it is flattened into tables.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub validation: ValidationReport,
    pub assignment: AssignmentResult,
    pub queues: QueueAnalysis,
    /// m/s
    pub u_f: f64,
    /// km/h; `None` without moving in-area samples.
    pub p95_speed: Option<f64>,
    pub moe: MoeAggregate,
    pub crash: CrashRates,
    pub fuel: FleetFuel,
    pub fd_observations: Vec<FdObservation>,
    pub fd_fit: std::result::Result<FdFit, String>,
}

/// Reads and merges every input; duplicate track ids across files are rejected.
pub fn load_inputs(paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    let mut all: Vec<Trajectory> = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let ds = parse_auto(&text)?;
        log::info!("{}: {} trajectories", p.display(), ds.len());
        all.extend(ds.trajectories.into_values());
    }
    Dataset::from_trajectories(all)
}

/// Fails on non-monotone timestamps; other findings are logged.
pub fn check_dataset(dataset: &Dataset, cfg: &RunConfig) -> Result<ValidationReport> {
    let report = validate_dataset(dataset, &cfg.validation);
    if let Some(f) = report.non_monotone().next() {
        return Err(Error::Consistency {
            track_id: f.track_id(),
            message: format!("{} non-monotone timestamp(s)", report.non_monotone().count()),
        });
    }
    for f in &report.findings {
        log::warn!("validation: {f:?}");
    }
    Ok(report)
}

fn in_area_speeds(dataset: &Dataset, assignment: &AssignmentResult) -> Vec<f64> {
    assignment
        .assignments
        .iter()
        .filter_map(|a| dataset.get(a.track_id).map(|t| (t, a)))
        .flat_map(|(t, a)| t.points[a.in_area()].iter().map(|p| p.speed))
        .filter(|&v| v > 0.0)
        .collect()
}

/// Runs assignment, queueing, MOEs, fuel and the FD fit on a loaded dataset.
pub fn analyze(dataset: &Dataset, res: &Resources, cfg: &RunConfig, timings: &mut StageTimings) -> Result<Analysis> {
    let validation = timings.time("validate", || check_dataset(dataset, cfg))?;
    let area = &res.area;
    let assignment = timings.time("assign", || Ok(assign_lanes(dataset, area, &cfg.assign)))?;
    let a = &assignment.assignments;
    let queues = timings.time("queueing", || Ok(analyze_queues(dataset, a, area, &cfg.queue)))?;
    let (u_f, p95_speed, moe, crash) = timings.time("moe", || {
        let speeds = in_area_speeds(dataset, &assignment);
        let p95 = percentile(&speeds, 95.0).filter(|v| *v > 0.0).map(ms_to_kmh);
        let u_f = free_speed(cfg.free_speed, area, &speeds);
        let moes = vehicle_moes(dataset, a, u_f);
        let agg = aggregate_moes(&moes, &area.lane_ids(), &cfg.movements);
        let crash = crash_rates(ms_to_kmh(u_f), &res.crash)?;
        Ok((u_f, p95, agg, crash))
    })?;
    let fuel = timings.time("energy", || fleet_fuel(dataset, a, &res.energy).map(|(_, f)| f))?;
    let (fd_obs, fd_fit) = timings.time("fd", || {
        let obs = fd_observations(dataset, a, area, cfg.fd_window);
        let pairs: Vec<(f64, f64)> = obs.iter().map(|o| (o.u, o.k)).collect();
        let fit = fit_from_observations(&pairs).map_err(|e| {
            log::warn!("fundamental-diagram fit skipped: {e}");
            e.to_string()
        });
        Ok((obs, fit))
    })?;
    Ok(Analysis {
        validation,
        assignment,
        queues,
        u_f,
        p95_speed,
        moe,
        crash,
        fuel,
        fd_observations: fd_obs,
        fd_fit,
    })
}

/// Loads inputs per `cfg`, analyses them and returns the requested tables.
pub fn run_pipeline(cfg: &RunConfig, section: Section) -> Result<(MoeReport, StageTimings)> {
    let res = cfg.prepare()?;
    let mut timings = StageTimings::default();
    let dataset = timings.time("ingest", || load_inputs(&cfg.inputs))?;
    let report = run_on_dataset(&dataset, &res, cfg, section, &mut timings)?;
    Ok((report, timings))
}

pub fn run_on_dataset(
    dataset: &Dataset,
    res: &Resources,
    cfg: &RunConfig,
    section: Section,
    timings: &mut StageTimings,
) -> Result<MoeReport> {
    let analysis = analyze(dataset, res, cfg, timings)?;
    let report = timings.time("report", || build_report(dataset, res, cfg, &analysis, section))?;
    Ok(report)
}

fn lane_header(lanes: &[u32]) -> Vec<String> {
    lanes.iter().map(|l| format!("lane_{l}")).collect()
}

pub fn build_report(
    dataset: &Dataset,
    res: &Resources,
    cfg: &RunConfig,
    an: &Analysis,
    section: Section,
) -> Result<MoeReport> {
    let lanes = res.area.lane_ids();
    let mut tables = vec![summary_table(dataset, cfg, an)];
    if section.includes(Section::Assign) {
        tables.push(vehicle_counts_table(an, &lanes));
        tables.push(lane_changes_table(an));
        tables.push(od_table(an, &lanes));
    }
    if section.includes(Section::Queues) {
        tables.extend(queue_tables(an));
    }
    if section.includes(Section::Moe) {
        type Metric = fn(&GroupStats) -> Option<f64>;
        let metrics: [(&str, Metric); 3] = [
            ("travel-time", GroupStats::mean_travel_time),
            ("stops", GroupStats::mean_stops),
            ("delay", GroupStats::mean_delay),
        ];
        for (name, f) in metrics {
            let by_lane: Vec<(String, &ClassStats)> =
                an.moe.by_lane.iter().map(|(l, s)| (format!("lane_{l}"), s)).collect();
            tables.push(class_matrix(&format!("{name}-lane"), &by_lane, f));
            let by_movement: Vec<(String, &ClassStats)> =
                an.moe.by_movement.iter().map(|(n, s)| (n.clone(), s)).collect();
            tables.push(class_matrix(&format!("{name}-movement"), &by_movement, f));
        }
        tables.push(crash_table(&an.crash));
    }
    if section.includes(Section::Fuel) {
        tables.push(fuel_table(&an.fuel));
    }
    if section.includes(Section::Fd) {
        tables.extend(fd_tables(an, cfg)?);
    }
    Ok(MoeReport { tables })
}

fn summary_table(dataset: &Dataset, cfg: &RunConfig, an: &Analysis) -> Table {
    let mut t = Table::new("summary", &["metric", "value"]);
    let source = match cfg.free_speed {
        FreeSpeedSource::SpeedLimit => "speed-limit",
        FreeSpeedSource::P95 => "p95",
    };
    let rows: Vec<(&str, Cell)> = vec![
        ("trajectories", dataset.len().into()),
        ("vehicles_in_area", an.assignment.assignments.len().into()),
        ("vehicles_excluded", an.assignment.excluded.len().into()),
        ("sample_interval_s", dataset.sample_interval.into()),
        ("validation_findings", an.validation.findings.len().into()),
        ("free_speed_source", source.into()),
        ("free_speed_kmh", ms_to_kmh(an.u_f).into()),
        ("p95_speed_kmh", Cell::float_or_empty(an.p95_speed)),
        ("fleet_fuel_l", an.fuel.total.fuel.into()),
        ("fuel_per_vehicle_l", Cell::float_or_empty(an.fuel.per_vehicle())),
        ("fleet_fuel_rate_l_per_s", an.fuel.aggregate_rate.into()),
        ("fleet_co2_kg", an.fuel.total.co2.into()),
        ("signal_phase_low_confidence", an.queues.phases.low_confidence.into()),
        (
            "fd_status",
            match &an.fd_fit {
                Ok(f) if f.coverage.sufficient => "fitted".into(),
                Ok(_) => "fitted, one regime under-sampled".into(),
                Err(e) => Cell::Text(format!("not fitted: {e}")),
            },
        ),
    ];
    for (k, v) in rows {
        t.push(vec![k.into(), v]);
    }
    t
}

fn vehicle_counts_table(an: &Analysis, lanes: &[u32]) -> Table {
    let counts = lane_vehicle_counts(&an.assignment.assignments);
    let mut cols = vec!["vehicle_type".to_string()];
    cols.extend(lane_header(lanes));
    let mut t = Table::with_columns("vehicle-counts", cols);
    let mut totals = vec![0usize; lanes.len()];
    for class in VehicleClass::ALL {
        let mut row: Vec<Cell> = vec![class.key().into()];
        for (i, l) in lanes.iter().enumerate() {
            let n = counts.get(&(*l, class)).copied().unwrap_or(0);
            totals[i] += n;
            row.push(n.into());
        }
        t.push(row);
    }
    let mut row: Vec<Cell> = vec!["Total".into()];
    row.extend(totals.into_iter().map(Cell::from));
    t.push(row);
    t
}

fn lane_changes_table(an: &Analysis) -> Table {
    let summary = detect_lane_changes(&an.assignment.assignments);
    let mut t = Table::new("lane-changes", &["vehicle_type", "vehicles", "lane_changes"]);
    for class in VehicleClass::ALL {
        let c = summary.per_class.get(&class).copied().unwrap_or_default();
        t.push(vec![class.key().into(), c.vehicles.into(), c.lane_changes.into()]);
    }
    let total = summary.total();
    t.push(vec!["Total".into(), total.vehicles.into(), total.lane_changes.into()]);
    t
}

fn od_table(an: &Analysis, lanes: &[u32]) -> Table {
    let m = od_matrix(&an.assignment.assignments, lanes);
    let mut cols = vec!["origin_lane".to_string()];
    cols.extend(lane_header(lanes));
    cols.push("Total".into());
    let mut t = Table::with_columns("od-matrix", cols);
    for (i, l) in lanes.iter().enumerate() {
        let mut row: Vec<Cell> = vec![Cell::Text(format!("lane_{l}"))];
        row.extend(m.counts[i].iter().map(|&n| Cell::from(n)));
        row.push(m.row_sum(*l).into());
        t.push(row);
    }
    let mut row: Vec<Cell> = vec!["Total".into()];
    row.extend(lanes.iter().map(|&l| Cell::from(m.col_sum(l))));
    row.push(m.total().into());
    t.push(row);
    t
}

fn queue_tables(an: &Analysis) -> Vec<Table> {
    let q = &an.queues;
    let mut queues = Table::new(
        "queues",
        &["lane", "queue_length_m", "timestamp_s", "start_lat", "start_lon", "end_lat", "end_lon"],
    );
    for m in &q.max_queues {
        queues.push(vec![
            m.lane_id.into(),
            m.length.into(),
            m.t.into(),
            m.start.lat.into(),
            m.start.lon.into(),
            m.end.lat.into(),
            m.end.lon.into(),
        ]);
    }
    let mut spill = Table::new("spillbacks", &["lane", "timestamp_s"]);
    for s in &q.spillbacks {
        spill.push(vec![s.lane_id.into(), s.t.into()]);
    }
    let mut phases = Table::new("signal-phases", &["cycle", "red_onset_s", "green_onset_s", "low_confidence", "note"]);
    for (i, (r, g)) in q.phases.red_onsets.iter().zip(&q.phases.green_onsets).enumerate() {
        phases.push(vec![
            (i + 1).into(),
            (*r).into(),
            (*g).into(),
            q.phases.low_confidence.into(),
            q.phases.note.clone().into(),
        ]);
    }
    vec![queues, spill, phases]
}

/// Rows are vehicle classes plus "All"; columns are groups (lanes or movements).
fn class_matrix(name: &str, groups: &[(String, &ClassStats)], f: fn(&GroupStats) -> Option<f64>) -> Table {
    let mut cols = vec!["vehicle_type".to_string()];
    cols.extend(groups.iter().map(|(g, _)| g.clone()));
    let mut t = Table::with_columns(name, cols);
    for class in VehicleClass::ALL {
        let mut row: Vec<Cell> = vec![class.key().into()];
        row.extend(groups.iter().map(|(_, s)| Cell::float_or_empty(f(&s.class(class)))));
        t.push(row);
    }
    let mut row: Vec<Cell> = vec!["All".into()];
    row.extend(groups.iter().map(|(_, s)| Cell::float_or_empty(f(&s.total()))));
    t.push(row);
    t
}

fn crash_table(c: &CrashRates) -> Table {
    let mut t = Table::new("crash-rates", &["crash_type", "crash_rate", "time_based_rate"]);
    for (ty, r) in &c.per_type {
        t.push(vec![ty.label().into(), (*r).into(), (r * c.u_f).into()]);
    }
    t.push(vec!["Total".into(), c.total.into(), c.time_based_total().into()]);
    t
}

fn fuel_table(f: &FleetFuel) -> Table {
    let mut t = Table::new("fuel", &["vehicle_type", "vehicles", "fuel_l", "co2_kg", "fuel_per_vehicle_l"]);
    let per = |n: usize, fuel: f64| Cell::float_or_empty((n > 0).then(|| fuel / n as f64));
    for class in VehicleClass::ALL {
        let c = f.per_class.get(&class).copied().unwrap_or_default();
        t.push(vec![class.key().into(), c.vehicles.into(), c.fuel.into(), c.co2.into(), per(c.vehicles, c.fuel)]);
    }
    let c = f.total;
    t.push(vec!["Total".into(), c.vehicles.into(), c.fuel.into(), c.co2.into(), per(c.vehicles, c.fuel)]);
    t
}

fn fd_tables(an: &Analysis, cfg: &RunConfig) -> Result<Vec<Table>> {
    let mut obs = Table::new("fd-observations", &["lane", "window_start_s", "u_kmh", "k_vpk"]);
    for o in &an.fd_observations {
        obs.push(vec![o.lane_id.into(), o.t.into(), o.u.into(), o.k.into()]);
    }
    let mut fit = Table::new(
        "fd-fit",
        &["u_f_kmh", "u_c_kmh", "q_c_vph", "k_j_vpk", "k_c_vpk", "rmse_vpk", "congested", "uncongested", "sufficient"],
    );
    let mut curve = Table::new("fd-curve", &["u_kmh", "k_vpk", "q_vph"]);
    if let Ok(f) = &an.fd_fit {
        let p = f.params;
        fit.push(vec![
            p.u_f.into(),
            p.u_c.into(),
            p.q_c.into(),
            p.k_j.into(),
            p.k_c().into(),
            f.rmse.into(),
            f.coverage.congested.into(),
            f.coverage.uncongested.into(),
            f.coverage.sufficient.into(),
        ]);
        for s in fd_curve(&p, cfg.fd_curve_points)? {
            curve.push(vec![s.u.into(), s.k.into(), s.q.into()]);
        }
    }
    Ok(vec![obs, fit, curve])
}
