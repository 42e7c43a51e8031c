use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest |Δlat| or |Δlon| from the origin accepted by [`project`].
pub const MAX_OFFSET_DEG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }
}

/// Meters east (`x`) and north (`y`) of a study-area origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub fn new(x: f64, y: f64) -> Self {
        LocalPoint { x, y }
    }

    pub fn sub(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> LocalPoint {
        LocalPoint::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: LocalPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: LocalPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn midpoint(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }
}

/// Equirectangular projection anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub origin: GeoPoint,
    cos_lat: f64,
}

impl Projection {
    pub fn new(origin: GeoPoint) -> Self {
        Projection {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    /// Projects without the study-area range check.
    pub fn forward(&self, lat: f64, lon: f64) -> LocalPoint {
        LocalPoint {
            x: EARTH_RADIUS_M * self.cos_lat * (lon - self.origin.lon).to_radians(),
            y: EARTH_RADIUS_M * (lat - self.origin.lat).to_radians(),
        }
    }

    pub fn in_range(&self, lat: f64, lon: f64) -> bool {
        (lat - self.origin.lat).abs() < MAX_OFFSET_DEG && (lon - self.origin.lon).abs() < MAX_OFFSET_DEG
    }

    pub fn project(&self, lat: f64, lon: f64) -> Result<LocalPoint> {
        if !(lat.is_finite() && lon.is_finite()) || !self.in_range(lat, lon) {
            return Err(Error::Domain(format!(
                "({lat}, {lon}) is more than {MAX_OFFSET_DEG}° from the origin ({}, {})",
                self.origin.lat, self.origin.lon
            )));
        }
        Ok(self.forward(lat, lon))
    }

    pub fn inverse(&self, p: LocalPoint) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (p.x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        }
    }
}

pub fn project(lat: f64, lon: f64, origin: GeoPoint) -> Result<LocalPoint> {
    Projection::new(origin).project(lat, lon)
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}
