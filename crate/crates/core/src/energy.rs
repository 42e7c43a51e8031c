//! VT-CPFM power-based fuel consumption and CO₂.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LaneAssignment;
use crate::ingest::{ms_to_kmh, Dataset, Trajectory, VehicleClass};

/// kg/m³ at sea level
pub const AIR_DENSITY: f64 = 1.2256;
pub const GRAVITY: f64 = 9.8066;

const SHIPPED_ENERGY_CONFIG: &str = include_str!("../data/vehicle_params.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleClassParams {
    /// kg
    pub mass: f64,
    pub cd: f64,
    /// m²
    pub frontal_area: f64,
    /// km
    #[serde(default)]
    pub altitude: f64,
    pub cr: f64,
    pub c1: f64,
    pub c2: f64,
    pub eta_d: f64,
    /// L/s
    pub alpha0: f64,
    /// L/(kW·s)
    pub alpha1: f64,
    /// L/(kW²·s)
    pub alpha2: f64,
}

impl VehicleClassParams {
    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("vehicle class `{name}`: {what}")));
        let finite = [
            self.mass, self.cd, self.frontal_area, self.altitude, self.cr, self.c1, self.c2, self.eta_d,
            self.alpha0, self.alpha1, self.alpha2,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.mass <= 0.0 {
            return bad("mass must be positive");
        }
        if self.frontal_area <= 0.0 {
            return bad("frontal area must be positive");
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return bad("driveline efficiency must be in (0, 1]");
        }
        if self.alpha0 < 0.0 || self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return bad("fuel constants must be non-negative");
        }
        Ok(())
    }
}

/// Resistance force in newtons at speed `v` km/h on grade `grade`.
pub fn resistance(v: f64, grade: f64, p: &VehicleClassParams) -> f64 {
    let ch = 1.0 - 0.085 * p.altitude;
    AIR_DENSITY / 25.92 * p.cd * ch * p.frontal_area * v * v
        + GRAVITY * p.mass * (p.cr / 1000.0) * (p.c1 * v + p.c2)
        + GRAVITY * p.mass * grade
}

/// Power in kW at speed `v` km/h and acceleration `a` m/s².
pub fn power(v: f64, a: f64, r: f64, p: &VehicleClassParams) -> f64 {
    (r + 1.04 * p.mass * a) / (3600.0 * p.eta_d) * v
}

/// L/s; idling rate for non-positive power.
pub fn fuel_rate(power_kw: f64, p: &VehicleClassParams) -> f64 {
    if power_kw < 0.0 {
        p.alpha0
    } else {
        p.alpha0 + p.alpha1 * power_kw + p.alpha2 * power_kw * power_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    /// kg of CO₂ per liter of fuel
    pub co2_per_liter: f64,
    /// Motorcycle fuel as a fraction of light/medium-duty fuel.
    pub motorcycle_scale: f64,
    pub classes: BTreeMap<String, VehicleClassParams>,
}

impl EnergyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EnergyConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("energy config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Placeholder light-duty, heavy-duty and bus parameters.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_ENERGY_CONFIG).expect("shipped energy config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.co2_per_liter >= 0.0 && self.co2_per_liter.is_finite()) {
            return Err(Error::Config("co2_per_liter must be non-negative".into()));
        }
        if !(self.motorcycle_scale > 0.0 && self.motorcycle_scale.is_finite()) {
            return Err(Error::Config("motorcycle_scale must be positive".into()));
        }
        for (name, p) in &self.classes {
            p.validate(name)?;
        }
        for class in VehicleClass::ALL {
            self.params_for(class)?;
        }
        Ok(())
    }

    /// Parameters and an output scale factor for a vehicle class.
    pub fn params_for(&self, class: VehicleClass) -> Result<(&VehicleClassParams, f64)> {
        let (key, scale) = match class {
            VehicleClass::Motorcycle => (VehicleClass::LightMediumDuty.key(), self.motorcycle_scale),
            c => (c.key(), 1.0),
        };
        self.classes
            .get(key)
            .map(|p| (p, scale))
            .ok_or_else(|| Error::Config(format!("energy config has no `{key}` parameters")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelRecord {
    pub track_id: u64,
    pub vehicle_class: VehicleClass,
    /// kW per sample
    pub power: Vec<f64>,
    /// L/s per sample
    pub fuel_rate: Vec<f64>,
    /// L
    pub fuel: f64,
    /// kg
    pub co2: f64,
}

/// Integrates fuel over `points[range]`, each sample weighted by the time to
/// the next sample. Grade is taken as zero.
pub fn trip_fuel_and_co2(
    traj: &Trajectory,
    range: std::ops::RangeInclusive<usize>,
    cfg: &EnergyConfig,
) -> Result<FuelRecord> {
    let class = traj.class();
    let (p, scale) = cfg.params_for(class)?;
    let pts = &traj.points[range];
    let power: Vec<f64> = pts
        .iter()
        .map(|s| {
            let v = ms_to_kmh(s.speed);
            power(v, s.lon_acc, resistance(v, 0.0, p), p)
        })
        .collect();
    let rate: Vec<f64> = power.iter().map(|&pw| scale * fuel_rate(pw, p)).collect();
    let fuel: f64 = pts
        .windows(2)
        .zip(&rate)
        .map(|(w, r)| r * (w[1].t - w[0].t))
        .sum();
    Ok(FuelRecord {
        track_id: traj.track_id,
        vehicle_class: class,
        power,
        fuel_rate: rate,
        fuel,
        co2: fuel * cfg.co2_per_liter,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FuelTotals {
    pub vehicles: usize,
    pub fuel: f64,
    pub co2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetFuel {
    pub per_class: BTreeMap<VehicleClass, FuelTotals>,
    pub total: FuelTotals,
    /// Total fuel over the observation span, L/s.
    pub aggregate_rate: f64,
}

impl FleetFuel {
    pub fn per_vehicle(&self) -> Option<f64> {
        (self.total.vehicles > 0).then(|| self.total.fuel / self.total.vehicles as f64)
    }
}

/// In-area fuel for every assigned vehicle.
pub fn fleet_fuel(dataset: &Dataset, assignments: &[LaneAssignment], cfg: &EnergyConfig) -> Result<(Vec<FuelRecord>, FleetFuel)> {
    let records: Vec<FuelRecord> = assignments
        .par_iter()
        .filter_map(|a| dataset.get(a.track_id).map(|t| (t, a)))
        .map(|(t, a)| trip_fuel_and_co2(t, a.in_area(), cfg))
        .collect::<Result<_>>()?;
    let mut fleet = FleetFuel::default();
    for r in &records {
        for totals in [fleet.per_class.entry(r.vehicle_class).or_default(), &mut fleet.total] {
            totals.vehicles += 1;
            totals.fuel += r.fuel;
            totals.co2 += r.co2;
        }
    }
    if let Some((a, b)) = dataset.time_span() {
        if b > a {
            fleet.aggregate_rate = fleet.total.fuel / (b - a);
        }
    }
    Ok((records, fleet))
}
