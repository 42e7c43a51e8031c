//! Command-line front end for the trajectory MOE pipeline.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uavmoe_core::geo::{write_geojson, write_kml};
use uavmoe_core::ingest::{validate_dataset, write_pneuma_wide, Finding};
use uavmoe_core::moe::FreeSpeedSource;
use uavmoe_core::pipeline::{emit_report, load_inputs, run_pipeline, synth_generate, MoeReport, ReportFormat, RunConfig, Section};
use uavmoe_core::{Error, SynthScenario};

#[derive(Debug, Parser)]
#[command(name = "uavmoe", version, about = "Intersection measures of effectiveness from drone trajectories")]
struct Cli {
    /// Log stage timings and progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse inputs and report timestamp, speed and gap problems.
    Validate(RunArgs),
    /// Lane counts, lane changes and the origin-destination matrix.
    Assign(RunArgs),
    /// Maximum queues, spillbacks and signal phases.
    Queues(RunArgs),
    /// Travel time, stops, delay and crash rates.
    Moe(RunArgs),
    /// Fuel and CO2.
    Fuel(RunArgs),
    /// Fundamental-diagram observations and fit.
    Fd(RunArgs),
    /// Every table.
    Report(RunArgs),
    /// Generate a synthetic signalized approach with planted ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Trajectory file (pNEUMA wide or long CSV); repeat to merge files.
    #[arg(short, long = "input")]
    inputs: Vec<PathBuf>,
    /// Lane polygons (.kml or .geojson).
    #[arg(short, long)]
    area: Option<PathBuf>,
    /// JSON run configuration; flags override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for one file per table; tables go to stdout otherwise.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(short, long, value_parser = parse_format)]
    format: Option<ReportFormat>,
    /// Free-flow speed source: speed-limit or p95.
    #[arg(long, value_parser = parse_uf)]
    uf: Option<FreeSpeedSource>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON scenario; omitted fields take defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for tracks.csv, area.geojson, area.kml and truth.json.
    #[arg(short, long)]
    out: PathBuf,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_uf(s: &str) -> Result<FreeSpeedSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn run_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        if let Some(a) = &self.area {
            cfg.area = Some(a.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(u) = self.uf {
            cfg.free_speed = u;
        }
        Ok(cfg)
    }
}

fn write_report(report: &MoeReport, cfg: &RunConfig) -> Result<(), Error> {
    if let Some(dir) = &cfg.out_dir {
        for p in emit_report(report, cfg.format, dir)? {
            log::info!("wrote {}", p.display());
        }
        return Ok(());
    }
    let text = match cfg.format {
        ReportFormat::Csv => report
            .tables
            .iter()
            .map(|t| format!("# {}\n{}", t.name, report.render(t, cfg.format)))
            .collect::<Vec<_>>()
            .join("\n"),
        ReportFormat::Json => {
            let tables: Vec<_> = report.tables.iter().map(|t| t.to_json()).collect();
            serde_json::to_string_pretty(&tables).expect("JSON values serialise") + "\n"
        }
    };
    print_stdout(&text)
}

/// A closed pipe (`uavmoe report | head`) is not an error.
fn print_stdout(text: &str) -> Result<(), Error> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn validate(args: &RunArgs) -> Result<(), Error> {
    let cfg = args.run_config()?;
    cfg.check_thresholds()?;
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no trajectory input given".into()));
    }
    let dataset = load_inputs(&cfg.inputs).map_err(|e| e.in_stage("ingest"))?;
    let report = validate_dataset(&dataset, &cfg.validation);
    let count = |f: fn(&Finding) -> bool| report.findings.iter().filter(|x| f(x)).count();
    let summary = serde_json::json!({
        "trajectories": dataset.len(),
        "sample_interval_s": dataset.sample_interval,
        "time_span_s": dataset.time_span().map(|(a, b)| [a, b]),
        "non_monotone_timestamps": count(|f| matches!(f, Finding::NonMonotoneTimestamp { .. })),
        "speed_spikes": count(|f| matches!(f, Finding::SpeedSpike { .. })),
        "gaps": count(|f| matches!(f, Finding::Gap { .. })),
        "findings": report.findings,
    });
    print_stdout(&(serde_json::to_string_pretty(&summary).expect("JSON values serialise") + "\n"))?;
    let first_bad = report.non_monotone().next().map(Finding::track_id);
    match first_bad {
        Some(track_id) => Err(Error::Consistency {
            track_id,
            message: "non-monotone timestamps".into(),
        }),
        None => Ok(()),
    }
}

fn synth(args: &SynthArgs) -> Result<(), Error> {
    let scenario: SynthScenario = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("scenario {}: {e}", p.display())))?
        }
        None => SynthScenario::default(),
    };
    let (dataset, truth) = synth_generate(&scenario, args.seed)?;
    let area = scenario.area()?;
    let dir = &args.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<(), Error> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("tracks.csv", write_pneuma_wide(&dataset))?;
    write("area.geojson", write_geojson(&area))?;
    write("area.kml", write_kml(&area))?;
    write("truth.json", serde_json::to_string_pretty(&truth).expect("JSON values serialise") + "\n")?;
    write(
        "scenario.json",
        serde_json::to_string_pretty(&scenario).expect("JSON values serialise") + "\n",
    )?;
    eprintln!("{} vehicles written to {}", dataset.len(), dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (args, section) = match &cli.command {
        Command::Validate(a) => return validate(a),
        Command::Synth(a) => return synth(a),
        Command::Assign(a) => (a, Section::Assign),
        Command::Queues(a) => (a, Section::Queues),
        Command::Moe(a) => (a, Section::Moe),
        Command::Fuel(a) => (a, Section::Fuel),
        Command::Fd(a) => (a, Section::Fd),
        Command::Report(a) => (a, Section::All),
    };
    let cfg = args.run_config()?;
    let (report, timings) = run_pipeline(&cfg, section)?;
    let total: f64 = timings.0.iter().map(|(_, d)| d.as_secs_f64()).sum();
    log::info!("pipeline finished in {total:.3} s");
    write_report(&report, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
