//! Measures of effectiveness from drone vehicle trajectories.
//!
//! The stages run in order: [`ingest`] parses trajectories, [`geo`] assigns
//! them to lane polygons, [`queueing`] finds queues and spillbacks, [`moe`]
//! computes travel time, stops, delay and crash rates, [`energy`] integrates
//! fuel, and [`fd`] fits a Van Aerde fundamental diagram. [`pipeline`] wires
//! them together and renders report tables.

pub mod energy;
pub mod error;
pub mod fd;
pub mod geo;
pub mod ingest;
pub mod moe;
pub mod pipeline;
pub mod queueing;

pub use error::{Error, ErrorKind, Result};
pub use geo::{GeoPoint, LaneAssignment, LocalPoint, StudyArea};
pub use ingest::{Dataset, Trajectory, TrajectoryPoint, VehicleClass, VehicleType};
pub use pipeline::{MoeReport, ReportFormat, RunConfig, Section, SynthScenario};
