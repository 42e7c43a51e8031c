use std::path::PathBuf;

use uavmoe_core::geo::{write_geojson, write_kml};
use uavmoe_core::ingest::write_pneuma_wide;
use uavmoe_core::pipeline::{emit_report, run_pipeline, synth_generate, Cell, ReportFormat, RunConfig, Section, SynthScenario};
use uavmoe_core::ErrorKind;

fn write_inputs(dir: &std::path::Path, s: &SynthScenario, seed: u64, kml: bool) -> (RunConfig, uavmoe_core::pipeline::GroundTruth) {
    let (ds, truth) = synth_generate(s, seed).unwrap();
    let data = dir.join("tracks.csv");
    std::fs::write(&data, write_pneuma_wide(&ds)).unwrap();
    let area = s.area().unwrap();
    let area_path = if kml {
        let p = dir.join("area.kml");
        std::fs::write(&p, write_kml(&area)).unwrap();
        p
    } else {
        let p = dir.join("area.geojson");
        std::fs::write(&p, write_geojson(&area)).unwrap();
        p
    };
    let cfg = RunConfig {
        inputs: vec![data],
        area: Some(area_path),
        speed_limit_kmh: Some(uavmoe_core::ingest::ms_to_kmh(s.free_speed)),
        ..RunConfig::default()
    };
    (cfg, truth)
}

fn float(c: &Cell) -> f64 {
    c.to_string().parse().unwrap()
}

#[test]
fn synthetic_queue_table_matches_planted_truth() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthScenario::default();
    let (cfg, truth) = write_inputs(dir.path(), &s, 21, true);
    let (report, timings) = run_pipeline(&cfg, Section::All).unwrap();
    assert!(timings.0.iter().any(|(stage, _)| *stage == "ingest"));
    let queues = report.table("queues").unwrap();
    assert_eq!(
        queues.columns,
        ["lane", "queue_length_m", "timestamp_s", "start_lat", "start_lon", "end_lat", "end_lon"]
    );
    for lt in truth.lanes.iter().filter(|l| l.max_queue > 0.0) {
        let row = queues.row(&lt.lane_id.to_string()).expect("queued lane reported");
        assert!((float(&row[1]) - lt.max_queue).abs() <= s.jam_spacing);
        let t = float(&row[2]);
        assert!(lt.peak_times.iter().any(|p| (p - t).abs() <= 2.0 * s.sample_interval + 1e-6));
    }
}

#[test]
fn red_onsets_follow_planted_queue_onsets() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthScenario {
        n_lanes: 3,
        // undersaturated, so every queue clears before the next red
        arrival_headway: 5.0,
        duration: 400.0,
        ..SynthScenario::default()
    };
    let (cfg, truth) = write_inputs(dir.path(), &s, 5, false);
    let (report, _) = run_pipeline(&cfg, Section::Queues).unwrap();
    let phases = report.table("signal-phases").unwrap();
    assert!(phases.rows.len() >= 3, "{phases:?}");
    // the first queued vehicle of each red across lanes
    let mut onsets: Vec<f64> = Vec::new();
    for &red in &truth.red_starts {
        let first = truth
            .lanes
            .iter()
            .flat_map(|l| l.queue_onsets.iter().copied())
            .filter(|t| *t >= red && *t < red + s.red + 1.0)
            .fold(f64::INFINITY, f64::min);
        if first.is_finite() {
            onsets.push(first);
        }
    }
    for row in &phases.rows {
        let r = float(&row[1]);
        assert!(
            onsets.iter().any(|o| (o - r).abs() <= 2.0 * s.sample_interval + 1e-6),
            "red onset {r} not near {onsets:?}"
        );
        assert!(float(&row[2]) > r);
    }
    // onsets lag the red start by up to one arrival headway
    let cycles: Vec<f64> = phases.rows.windows(2).map(|w| float(&w[1][1]) - float(&w[0][1])).collect();
    assert!(cycles.iter().all(|c| (c - s.cycle).abs() <= s.arrival_headway), "{cycles:?}");
}

#[test]
fn empty_input_succeeds_with_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthScenario::default();
    let (mut cfg, _) = write_inputs(dir.path(), &s, 1, false);
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    cfg.inputs = vec![empty];
    let (report, _) = run_pipeline(&cfg, Section::All).unwrap();
    assert!(report.table("queues").unwrap().rows.is_empty());
    assert!(report.table("spillbacks").unwrap().rows.is_empty());
    let files = emit_report(&report, ReportFormat::Json, &dir.path().join("out")).unwrap();
    assert_eq!(files.len(), report.tables.len());
}

#[test]
fn missing_area_fails_before_reading_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tracks.csv");
    // unparseable on purpose: the area check has to fire first
    std::fs::write(&data, "garbage;").unwrap();
    let cfg = RunConfig {
        inputs: vec![data],
        area: Some(PathBuf::from(dir.path().join("missing.kml"))),
        ..RunConfig::default()
    };
    let err = run_pipeline(&cfg, Section::All).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn merged_inputs_reject_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthScenario::default();
    let (mut cfg, _) = write_inputs(dir.path(), &s, 1, false);
    cfg.inputs.push(cfg.inputs[0].clone());
    let err = run_pipeline(&cfg, Section::All).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let report = uavmoe_core::MoeReport::default();
    let err = emit_report(&report, ReportFormat::Csv, &blocker.join("sub")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
