//! End-to-end runs, report tables and synthetic scenarios.

pub mod synth;

pub use synth::{synth_generate, GroundTruth, LaneTruth, SynthScenario};
pub mod report;

pub use report::{emit_report, format_sig, Cell, MoeReport, ReportFormat, Table};
pub mod config;
pub use config::{Resources, RunConfig};
pub mod run;
pub use run::{analyze, build_report, check_dataset, load_inputs, run_on_dataset, run_pipeline, Analysis, Section, StageTimings};
