//! Local projection, lane polygons, and lane assignment.

mod area;
mod lanes;
mod polygon;
mod projection;

pub use area::{
    distance_from_upstream, parse_area_file, parse_geojson_area, parse_kml_polygons, write_geojson,
    write_kml, Segment, StudyArea, DEFAULT_SPEED_LIMIT_KMH,
};
pub use lanes::{
    assign_lanes, detect_lane_changes, lane_vehicle_counts, od_matrix, raw_labels, smooth_labels,
    AssignConfig, AssignmentResult, ClassLaneChanges, LaneAssignment, LaneChangeSummary, OdMatrix,
};
pub use polygon::{point_in_polygon, point_on_segment, signed_area, LanePolygon};
pub use projection::{haversine_m, project, GeoPoint, LocalPoint, Projection, EARTH_RADIUS_M};
