//! Study-area geometry: lane sub-polygons plus the upstream and downstream
//! edges that define the longitudinal axis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::polygon::LanePolygon;
use super::projection::{GeoPoint, LocalPoint, Projection};
use crate::error::{Error, Result};
use crate::ingest::kmh_to_ms;

pub const DEFAULT_SPEED_LIMIT_KMH: f64 = 55.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: LocalPoint,
    pub b: LocalPoint,
}

impl Segment {
    pub fn midpoint(&self) -> LocalPoint {
        self.a.midpoint(self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyArea {
    pub name: String,
    /// Sorted by lane id.
    pub lanes: Vec<LanePolygon>,
    pub upstream_edge: Segment,
    pub downstream_edge: Segment,
    /// Distance between the edge midpoints, meters.
    pub length: f64,
    /// m/s
    pub speed_limit: f64,
    pub projection: Projection,
}

impl StudyArea {
    pub fn new(
        name: impl Into<String>,
        origin: GeoPoint,
        mut lanes: Vec<LanePolygon>,
        upstream_edge: Segment,
        downstream_edge: Segment,
    ) -> Result<Self> {
        if lanes.is_empty() {
            return Err(Error::Config("study area has no lanes".into()));
        }
        lanes.sort_by_key(|l| l.lane_id);
        if lanes.windows(2).any(|w| w[0].lane_id == w[1].lane_id) {
            return Err(Error::Config("duplicate lane id in study area".into()));
        }
        let length = downstream_edge
            .midpoint()
            .sub(upstream_edge.midpoint())
            .norm();
        if !(length > 0.0) {
            return Err(Error::Geometry(
                "upstream and downstream edges share a midpoint".into(),
            ));
        }
        let area = StudyArea {
            name: name.into(),
            lanes,
            upstream_edge,
            downstream_edge,
            length,
            speed_limit: kmh_to_ms(DEFAULT_SPEED_LIMIT_KMH),
            projection: Projection::new(origin),
        };
        // Lanes must sit between the two edges, with some digitisation slack.
        let slack = (0.05 * length).max(5.0);
        for lane in &area.lanes {
            for v in &lane.ring {
                let s = area.signed_distance_from_upstream(*v);
                if s < -slack || s > length + slack {
                    return Err(Error::Geometry(format!(
                        "lane {} extends {s:.1} m along an axis of length {length:.1} m",
                        lane.lane_id
                    )));
                }
            }
        }
        Ok(area)
    }

    pub fn with_speed_limit(mut self, speed_limit: f64) -> Self {
        self.speed_limit = speed_limit;
        self
    }

    pub fn origin(&self) -> GeoPoint {
        self.projection.origin
    }

    pub fn n_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_ids(&self) -> Vec<u32> {
        self.lanes.iter().map(|l| l.lane_id).collect()
    }

    /// Unit vector from the upstream-edge midpoint to the downstream-edge midpoint.
    pub fn axis(&self) -> (LocalPoint, LocalPoint) {
        let start = self.upstream_edge.midpoint();
        let dir = self.downstream_edge.midpoint().sub(start).scale(1.0 / self.length);
        (start, dir)
    }

    /// Unclamped scalar projection onto the longitudinal axis.
    pub fn signed_distance_from_upstream(&self, p: LocalPoint) -> f64 {
        let (start, dir) = self.axis();
        p.sub(start).dot(dir)
    }

    /// First lane in id order containing `p`, or 0.
    pub fn lane_at(&self, p: LocalPoint) -> u32 {
        self.lanes
            .iter()
            .find(|l| l.contains(p))
            .map_or(0, |l| l.lane_id)
    }

    /// Lateral band covered by the lanes, as (min, max) offsets left of the axis.
    pub fn lateral_band(&self) -> (f64, f64) {
        let (start, dir) = self.axis();
        let normal = LocalPoint::new(-dir.y, dir.x);
        let mut band = (f64::INFINITY, f64::NEG_INFINITY);
        for v in self.lanes.iter().flat_map(|l| l.ring.iter()) {
            let off = v.sub(start).dot(normal);
            band = (band.0.min(off), band.1.max(off));
        }
        band
    }

    /// Lane whose lateral extent covers `p`, ignoring longitudinal position.
    /// Used for points just outside the upstream edge.
    pub fn lane_by_lateral(&self, p: LocalPoint) -> u32 {
        let (start, dir) = self.axis();
        let normal = LocalPoint::new(-dir.y, dir.x);
        let off = p.sub(start).dot(normal);
        self.lanes
            .iter()
            .find(|lane| {
                let (lo, hi) = lane.ring.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |b, v| {
                    let o = v.sub(start).dot(normal);
                    (b.0.min(o), b.1.max(o))
                });
                off >= lo && off <= hi
            })
            .map_or(0, |l| l.lane_id)
    }

    pub fn lateral_offset(&self, p: LocalPoint) -> f64 {
        let (start, dir) = self.axis();
        p.sub(start).dot(LocalPoint::new(-dir.y, dir.x))
    }

    pub fn to_local(&self, lat: f64, lon: f64) -> LocalPoint {
        self.projection.forward(lat, lon)
    }

    pub fn to_geo(&self, p: LocalPoint) -> GeoPoint {
        self.projection.inverse(p)
    }
}

/// Scalar projection of `p` onto the area axis, clamped to `[0, length]`.
pub fn distance_from_upstream(p: LocalPoint, area: &StudyArea) -> f64 {
    area.signed_distance_from_upstream(p).clamp(0.0, area.length)
}

struct RawPlacemark {
    name: Option<String>,
    kind: GeometryKind,
    coords: Vec<GeoPoint>,
}

#[derive(PartialEq)]
enum GeometryKind {
    Polygon,
    Line,
}

fn parse_kml_coordinates(text: &str) -> Result<Vec<GeoPoint>> {
    text.split_whitespace()
        .map(|tuple| {
            let mut parts = tuple.split(',');
            let lon = parts.next().and_then(|s| s.parse::<f64>().ok());
            let lat = parts.next().and_then(|s| s.parse::<f64>().ok());
            match (lat, lon) {
                (Some(lat), Some(lon)) => Ok(GeoPoint::new(lat, lon)),
                _ => Err(Error::Config(format!("bad KML coordinate tuple `{tuple}`"))),
            }
        })
        .collect()
}

/// `"3"`, `"Lane 3"`, `"lane_3"` all give 3.
fn lane_number(name: &str) -> Option<u32> {
    let lower = name.trim().to_ascii_lowercase();
    let digits = lower.strip_prefix("lane").unwrap_or(&lower);
    digits.trim_matches(|c: char| c.is_whitespace() || c == '_' || c == '-').parse().ok()
}

fn build_area(name: String, placemarks: Vec<RawPlacemark>) -> Result<StudyArea> {
    let is_edge = |p: &RawPlacemark, which: &str| {
        p.name.as_deref().is_some_and(|n| n.trim().eq_ignore_ascii_case(which))
    };
    let upstream = placemarks.iter().find(|p| is_edge(p, "upstream"));
    let downstream = placemarks.iter().find(|p| is_edge(p, "downstream"));
    let (upstream, downstream) = match (upstream, downstream) {
        (Some(u), Some(d)) => (u, d),
        (None, _) => return Err(Error::Config("area has no `upstream` edge".into())),
        (_, None) => return Err(Error::Config("area has no `downstream` edge".into())),
    };
    for edge in [upstream, downstream] {
        if edge.coords.len() < 2 {
            return Err(Error::Geometry(format!(
                "edge `{}` needs two coordinates",
                edge.name.as_deref().unwrap_or_default()
            )));
        }
    }

    let lane_marks: Vec<&RawPlacemark> = placemarks
        .iter()
        .filter(|p| p.kind == GeometryKind::Polygon)
        .collect();
    let all_coords = lane_marks
        .iter()
        .copied()
        .chain([upstream, downstream])
        .flat_map(|p| p.coords.iter());
    let (mut sum_lat, mut sum_lon, mut n) = (0.0, 0.0, 0usize);
    for c in all_coords {
        sum_lat += c.lat;
        sum_lon += c.lon;
        n += 1;
    }
    let origin = GeoPoint::new(sum_lat / n as f64, sum_lon / n as f64);
    let projection = Projection::new(origin);
    let to_local = |pts: &[GeoPoint]| -> Result<Vec<LocalPoint>> {
        pts.iter().map(|g| projection.project(g.lat, g.lon)).collect()
    };

    let mut lanes = Vec::with_capacity(lane_marks.len());
    for (i, mark) in lane_marks.iter().enumerate() {
        let lane_id = mark
            .name
            .as_deref()
            .and_then(lane_number)
            .unwrap_or(i as u32 + 1);
        lanes.push(LanePolygon::new(lane_id, to_local(&mark.coords)?)?);
    }
    let edge = |p: &RawPlacemark| -> Result<Segment> {
        let pts = to_local(&p.coords)?;
        Ok(Segment {
            a: pts[0],
            b: pts[pts.len() - 1],
        })
    };
    StudyArea::new(name, origin, lanes, edge(upstream)?, edge(downstream)?)
}

/// Reads lanes (Polygon placemarks) and the `upstream` / `downstream` edges
/// (LineString placemarks) from a KML document.
pub fn parse_kml_polygons(text: &str) -> Result<StudyArea> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| Error::Config(format!("invalid KML: {e}")))?;
    let child_text = |node: roxmltree::Node, tag: &str| -> Option<String> {
        node.children()
            .find(|c| c.tag_name().name() == tag)
            .and_then(|c| c.text())
            .map(|s| s.trim().to_string())
    };
    let doc_name = doc
        .descendants()
        .find(|n| n.tag_name().name() == "Document")
        .and_then(|d| child_text(d, "name"))
        .unwrap_or_else(|| "study area".to_string());

    let mut placemarks = Vec::new();
    for pm in doc.descendants().filter(|n| n.tag_name().name() == "Placemark") {
        let name = child_text(pm, "name");
        let geometry = pm.descendants().find(|n| {
            matches!(n.tag_name().name(), "Polygon" | "LineString" | "LinearRing")
        });
        let Some(geometry) = geometry else { continue };
        let kind = if geometry.tag_name().name() == "LineString" {
            GeometryKind::Line
        } else {
            GeometryKind::Polygon
        };
        // outer boundary comes first in document order
        let coords_text = geometry
            .descendants()
            .find(|n| n.tag_name().name() == "coordinates")
            .and_then(|n| n.text())
            .unwrap_or_default();
        placemarks.push(RawPlacemark {
            name,
            kind,
            coords: parse_kml_coordinates(coords_text)?,
        });
    }
    build_area(doc_name, placemarks)
}

fn geojson_ring(coords: &Value) -> Result<Vec<GeoPoint>> {
    let arr = coords
        .as_array()
        .ok_or_else(|| Error::Config("GeoJSON coordinates must be an array".into()))?;
    arr.iter()
        .map(|pos| {
            let lon = pos.get(0).and_then(Value::as_f64);
            let lat = pos.get(1).and_then(Value::as_f64);
            match (lat, lon) {
                (Some(lat), Some(lon)) => Ok(GeoPoint::new(lat, lon)),
                _ => Err(Error::Config(format!("bad GeoJSON position {pos}"))),
            }
        })
        .collect()
}

/// GeoJSON FeatureCollection: Polygon features carry a `lane_id` property,
/// LineString features a `role` (or `name`) of `upstream` / `downstream`.
pub fn parse_geojson_area(text: &str) -> Result<StudyArea> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("invalid GeoJSON: {e}")))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config("GeoJSON must be a FeatureCollection".into()))?;
    let name = root
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or("study area")
        .to_string();

    let mut placemarks = Vec::new();
    for f in features {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::Config("feature without geometry".into()))?;
        match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => {
                let outer = geom
                    .get("coordinates")
                    .and_then(|c| c.get(0))
                    .ok_or_else(|| Error::Config("Polygon without rings".into()))?;
                let lane_id = props.get("lane_id").and_then(Value::as_u64).ok_or_else(|| {
                    Error::Config("Polygon feature without integer `lane_id`".into())
                })?;
                placemarks.push(RawPlacemark {
                    name: Some(lane_id.to_string()),
                    kind: GeometryKind::Polygon,
                    coords: geojson_ring(outer)?,
                });
            }
            Some("LineString") => {
                let role = props
                    .get("role")
                    .or_else(|| props.get("name"))
                    .and_then(Value::as_str)
                    .map(str::to_string);
                placemarks.push(RawPlacemark {
                    name: role,
                    kind: GeometryKind::Line,
                    coords: geojson_ring(geom.get("coordinates").unwrap_or(&Value::Null))?,
                });
            }
            _ => {}
        }
    }
    build_area(name, placemarks)
}

/// Parses by file extension: `.kml` or anything else as GeoJSON.
pub fn parse_area_file(path: &std::path::Path) -> Result<StudyArea> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read area file {}: {e}", path.display())))?;
    let is_kml = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("kml"));
    if is_kml {
        parse_kml_polygons(&text)
    } else {
        parse_geojson_area(&text)
    }
}

fn ring_positions(area: &StudyArea, pts: &[LocalPoint], close: bool) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = pts
        .iter()
        .map(|p| {
            let g = area.to_geo(*p);
            [g.lon, g.lat]
        })
        .collect();
    if close {
        out.push(out[0]);
    }
    out
}

pub fn write_geojson(area: &StudyArea) -> String {
    let mut features: Vec<Value> = area
        .lanes
        .iter()
        .map(|lane| {
            json!({
                "type": "Feature",
                "properties": { "lane_id": lane.lane_id },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [ring_positions(area, &lane.ring, true)],
                },
            })
        })
        .collect();
    for (role, seg) in [("upstream", area.upstream_edge), ("downstream", area.downstream_edge)] {
        features.push(json!({
            "type": "Feature",
            "properties": { "role": role },
            "geometry": {
                "type": "LineString",
                "coordinates": ring_positions(area, &[seg.a, seg.b], false),
            },
        }));
    }
    let doc = json!({
        "type": "FeatureCollection",
        "name": area.name,
        "features": features,
    });
    serde_json::to_string_pretty(&doc).expect("GeoJSON serialises")
}

pub fn write_kml(area: &StudyArea) -> String {
    let coords = |pts: Vec<[f64; 2]>| {
        pts.iter()
            .map(|[lon, lat]| format!("{lon},{lat},0"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<kml xmlns=\"http://www.opengis.net/kml/2.2\">\n<Document>\n",
    );
    let _ = writeln!(out, "<name>{}</name>", area.name);
    for lane in &area.lanes {
        let _ = writeln!(
            out,
            "<Placemark><name>Lane {}</name><Polygon><outerBoundaryIs><LinearRing><coordinates>{}</coordinates></LinearRing></outerBoundaryIs></Polygon></Placemark>",
            lane.lane_id,
            coords(ring_positions(area, &lane.ring, true))
        );
    }
    for (role, seg) in [("upstream", area.upstream_edge), ("downstream", area.downstream_edge)] {
        let _ = writeln!(
            out,
            "<Placemark><name>{role}</name><LineString><coordinates>{}</coordinates></LineString></Placemark>",
            coords(ring_positions(area, &[seg.a, seg.b], false))
        );
    }
    out.push_str("</Document>\n</kml>\n");
    out
}
