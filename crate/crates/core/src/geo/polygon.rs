use serde::{Deserialize, Serialize};

use super::projection::LocalPoint;
use crate::error::{Error, Result};

/// Distance under which a point counts as lying on a polygon edge.
pub const EDGE_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePolygon {
    /// 1 is the leftmost lane.
    pub lane_id: u32,
    /// Vertices without the repeated closing vertex.
    pub ring: Vec<LocalPoint>,
}

impl LanePolygon {
    pub fn new(lane_id: u32, mut ring: Vec<LocalPoint>) -> Result<Self> {
        if lane_id == 0 {
            return Err(Error::Geometry("lane ids start at 1".into()));
        }
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        ring.dedup();
        if ring.len() < 3 {
            return Err(Error::Geometry(format!(
                "lane {lane_id}: ring needs at least 3 distinct vertices, found {}",
                ring.len()
            )));
        }
        if signed_area(&ring).abs() <= f64::EPSILON {
            return Err(Error::Geometry(format!("lane {lane_id}: ring has zero area")));
        }
        if self_intersects(&ring) {
            return Err(Error::Geometry(format!("lane {lane_id}: ring self-intersects")));
        }
        Ok(LanePolygon { lane_id, ring })
    }

    pub fn edges(&self) -> impl Iterator<Item = (LocalPoint, LocalPoint)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    pub fn contains(&self, p: LocalPoint) -> bool {
        point_in_polygon(p, self)
    }
}

/// Shoelace area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[LocalPoint]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| ring[i].cross(ring[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

pub fn point_on_segment(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> bool {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let len = ab.norm();
    if len == 0.0 {
        return ap.norm() <= EDGE_EPS_M;
    }
    if (ab.cross(ap) / len).abs() > EDGE_EPS_M {
        return false;
    }
    let t = ab.dot(ap) / (len * len);
    (-EDGE_EPS_M / len..=1.0 + EDGE_EPS_M / len).contains(&t)
}

/// Even-odd ray casting. Points on an edge are inside.
pub fn point_in_polygon(p: LocalPoint, poly: &LanePolygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if point_on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: LocalPoint, b: LocalPoint, c: LocalPoint) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn segments_cross(a: LocalPoint, b: LocalPoint, c: LocalPoint, d: LocalPoint) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && point_on_segment(a, c, d))
        || (d2 == 0.0 && point_on_segment(b, c, d))
        || (d3 == 0.0 && point_on_segment(c, a, b))
        || (d4 == 0.0 && point_on_segment(d, a, b))
}

fn self_intersects(ring: &[LocalPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        for j in i + 1..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}
