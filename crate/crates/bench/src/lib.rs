//! Fixtures shared by the benchmarks.

use uavmoe_core::pipeline::{synth_generate, Resources, RunConfig};
use uavmoe_core::{Dataset, SynthScenario};

/// A busy synthetic approach: `lanes` lanes, a 4 s arrival headway and
/// 0.05 s sampling.
pub fn busy_approach(lanes: u32, duration: f64) -> (Dataset, Resources, RunConfig) {
    let s = SynthScenario {
        n_lanes: lanes,
        arrival_headway: 4.0,
        duration,
        sample_interval: 0.05,
        ..SynthScenario::default()
    };
    let (dataset, _) = synth_generate(&s, 42).expect("valid scenario");
    let cfg = RunConfig::default();
    let res = cfg
        .resources_for(s.area().expect("valid area"))
        .expect("shipped tables load");
    (dataset, res, cfg)
}
