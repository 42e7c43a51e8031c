use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::ReportFormat;
use crate::energy::EnergyConfig;
use crate::error::{Error, Result};
use crate::geo::{parse_area_file, AssignConfig, StudyArea};
use crate::ingest::{kmh_to_ms, ValidationConfig};
use crate::moe::{CrashCoefficientTable, FreeSpeedSource, MovementMap};
use crate::queueing::QueueConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub area: Option<PathBuf>,
    pub free_speed: FreeSpeedSource,
    /// Overrides the area's default speed limit.
    pub speed_limit_kmh: Option<f64>,
    pub validation: ValidationConfig,
    pub assign: AssignConfig,
    pub queue: QueueConfig,
    /// `None` uses the shipped sample table.
    pub crash_coefficients: Option<PathBuf>,
    /// `None` uses the shipped placeholder parameters.
    pub vehicle_params: Option<PathBuf>,
    pub movements: MovementMap,
    /// s
    pub fd_window: f64,
    pub fd_curve_points: usize,
    pub out_dir: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            area: None,
            free_speed: FreeSpeedSource::SpeedLimit,
            speed_limit_kmh: None,
            validation: ValidationConfig::default(),
            assign: AssignConfig::default(),
            queue: QueueConfig::default(),
            crash_coefficients: None,
            vehicle_params: None,
            movements: MovementMap::default(),
            fd_window: 30.0,
            fd_curve_points: 100,
            out_dir: None,
            format: ReportFormat::Csv,
        }
    }
}

/// Everything a run needs besides the trajectories.
#[derive(Debug, Clone)]
pub struct Resources {
    pub area: StudyArea,
    pub crash: CrashCoefficientTable,
    pub energy: EnergyConfig,
}

fn read_config_file(path: &Path, what: &str) -> Result<String> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} file {} does not exist", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} file {}: {e}", path.display())))
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_config_file(path, "run config")?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("run config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.inputs.iter_mut().for_each(rebase);
        for p in [&mut cfg.area, &mut cfg.crash_coefficients, &mut cfg.vehicle_params, &mut cfg.out_dir]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn check_thresholds(&self) -> Result<()> {
        let q = &self.queue;
        let checks = [
            ("queue.queue_speed", q.queue_speed),
            ("queue.spillback_eps", q.spillback_eps),
            ("queue.spillback_dedup", q.spillback_dedup),
            ("queue.phase_threshold", q.phase_threshold),
            ("queue.head_release", q.head_release),
            ("queue.phase_min_duration", q.phase_min_duration),
            ("assign.min_lane_dwell", self.assign.min_lane_dwell),
            ("validation.speed_ceiling", self.validation.speed_ceiling),
            ("validation.gap_factor", self.validation.gap_factor),
            ("fd_window", self.fd_window),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        if let Some(v) = self.speed_limit_kmh {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("speed limit must be positive, got {v}")));
            }
        }
        if self.fd_curve_points < 2 {
            return Err(Error::Config("fd_curve_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Loads the area and coefficient tables. Used by runs that bring their
    /// own dataset.
    pub fn load_resources(&self) -> Result<Resources> {
        self.check_thresholds()?;
        let area_path = self
            .area
            .as_deref()
            .ok_or_else(|| Error::Config("no study-area file given".into()))?;
        if !area_path.is_file() {
            return Err(Error::Config(format!("area file {} does not exist", area_path.display())));
        }
        let mut area = parse_area_file(area_path)?;
        if let Some(v) = self.speed_limit_kmh {
            area.speed_limit = kmh_to_ms(v);
        }
        self.resources_for(area)
    }

    pub fn resources_for(&self, area: StudyArea) -> Result<Resources> {
        self.check_thresholds()?;
        let crash = match &self.crash_coefficients {
            Some(p) => CrashCoefficientTable::from_json(&read_config_file(p, "crash coefficient")?)?,
            None => CrashCoefficientTable::shipped(),
        };
        let energy = match &self.vehicle_params {
            Some(p) => EnergyConfig::from_json(&read_config_file(p, "vehicle parameter")?)?,
            None => EnergyConfig::shipped(),
        };
        Ok(Resources { area, crash, energy })
    }

    /// Fail-fast check of every referenced file, before any trajectory is read.
    pub fn prepare(&self) -> Result<Resources> {
        let resources = self.load_resources()?;
        if self.inputs.is_empty() {
            return Err(Error::Config("no trajectory input given".into()));
        }
        for p in &self.inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(resources)
    }
}
