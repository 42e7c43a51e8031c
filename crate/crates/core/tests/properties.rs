use proptest::prelude::*;

use uavmoe_core::energy::{fleet_fuel, EnergyConfig};
use uavmoe_core::fd::{calibrate_constants, fd_curve, headway, VanAerdeParams};
use uavmoe_core::geo::{assign_lanes, AssignConfig, Projection};
use uavmoe_core::ingest::{parse_pneuma_wide, write_pneuma_wide};
use uavmoe_core::moe::{link_count_series, partial_stops, total_delay, vehicle_moes, TimeCard};
use uavmoe_core::pipeline::{
    analyze, build_report, format_sig, synth_generate, Cell, RunConfig, Section, StageTimings, SynthScenario, Table,
};
use uavmoe_core::queueing::{analyze_queues, QueueConfig};
use uavmoe_core::GeoPoint;

fn scenario() -> impl Strategy<Value = (SynthScenario, u64)> {
    (1u32..=3, 15.0f64..40.0, 2.5f64..8.0, 80.0f64..200.0, any::<u64>()).prop_map(
        |(n_lanes, red, arrival_headway, approach_length, seed)| {
            (
                SynthScenario {
                    n_lanes,
                    red,
                    arrival_headway,
                    approach_length,
                    duration: 180.0,
                    ..SynthScenario::default()
                },
                seed,
            )
        },
    )
}

fn feasible_params() -> impl Strategy<Value = VanAerdeParams> {
    (30.0f64..130.0, 0.3f64..0.95, 600.0f64..2600.0, 1.2f64..8.0)
        .prop_map(|(u_f, r, q_c, kr)| {
            let u_c = u_f * r;
            VanAerdeParams {
                u_f,
                u_c,
                q_c,
                k_j: q_c / u_c * kr,
            }
        })
        .prop_filter("monotone headway", |p| calibrate_constants(p).is_ok())
}

fn num(c: &Cell) -> Option<f64> {
    match c {
        Cell::Int(i) => Some(*i as f64),
        Cell::Float(f) => Some(*f),
        _ => None,
    }
}

fn column_sum(t: &Table, col: usize) -> f64 {
    t.rows.iter().filter(|r| r[0] != Cell::from("Total")).filter_map(|r| num(&r[col])).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_inverts(dx in -500.0f64..500.0, dy in -500.0f64..500.0, lat in -60.0f64..60.0, lon in -179.0f64..179.0) {
        let proj = Projection::new(GeoPoint::new(lat, lon));
        let g = proj.inverse(uavmoe_core::LocalPoint::new(dx, dy));
        let back = proj.forward(g.lat, g.lon);
        prop_assert!((back.x - dx).abs() < 1e-6 && (back.y - dy).abs() < 1e-6);
    }

    #[test]
    fn stops_and_delay_are_bounded(speeds in prop::collection::vec(0.0f64..30.0, 1..300), u_f in 5.0f64..30.0, dt in 0.04f64..1.0) {
        let stops = partial_stops(&speeds, u_f);
        prop_assert!(stops >= 0.0);
        let d = total_delay(&speeds, u_f, dt);
        prop_assert!(d >= 0.0 && d <= speeds.len() as f64 * dt * (1.0 + 1e-12));
    }

    #[test]
    fn link_counts_conserve(spans in prop::collection::vec((0.0f64..100.0, 0.0f64..50.0), 1..60), dt in 0.1f64..5.0) {
        let cards: Vec<TimeCard> = spans
            .iter()
            .enumerate()
            .map(|(i, &(a, len))| TimeCard { track_id: i as u64, lane_id: 1, t_entry: a, t_exit: a + len })
            .collect();
        let s = link_count_series(&cards, dt).unwrap();
        prop_assert!(s.n.iter().all(|&n| n >= 0));
        for k in 1..s.n.len() {
            prop_assert_eq!(s.n[k], s.n[k - 1] + s.u[k]);
        }
        prop_assert_eq!(*s.n.last().unwrap(), 0);
    }

    #[test]
    fn fd_samples_are_consistent(p in feasible_params(), n in 2usize..400) {
        let c = calibrate_constants(&p).unwrap();
        prop_assert!(c.c2 > 0.0);
        let curve = fd_curve(&p, n).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].u > w[0].u);
            prop_assert!(w[1].k < w[0].k, "density falls as speed rises");
        }
        for s in &curve {
            prop_assert!((s.q - s.k * s.u).abs() <= 1e-9 * s.q.abs().max(1.0));
            let h = headway(s.u, &c, p.u_f).unwrap();
            prop_assert!((s.k * h - 1.0).abs() < 1e-12);
            prop_assert!(s.q <= p.q_c * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sig_format_is_close(x in -1e9f64..1e9) {
        let back: f64 = format_sig(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs() + f64::MIN_POSITIVE);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn wide_format_round_trips((s, seed) in scenario()) {
        let (ds, _) = synth_generate(&s, seed).unwrap();
        let back = parse_pneuma_wide(&write_pneuma_wide(&ds)).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.iter().zip(back.iter()) {
            prop_assert_eq!(a.track_id, b.track_id);
            prop_assert_eq!(a.points.len(), b.points.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert!((p.t - q.t).abs() < 1e-9);
                prop_assert!((p.lat - q.lat).abs() < 1e-9 && (p.lon - q.lon).abs() < 1e-9);
                prop_assert!((p.speed - q.speed).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn assignment_and_queue_invariants((s, seed) in scenario()) {
        let (ds, _) = synth_generate(&s, seed).unwrap();
        let area = s.area().unwrap();
        let res = assign_lanes(&ds, &area, &AssignConfig::default());
        for a in &res.assignments {
            prop_assert!(a.entry_index <= a.exit_index);
            prop_assert!(a.labels.iter().all(|&l| l <= s.n_lanes));
        }
        let cfg = QueueConfig::default();
        let q = analyze_queues(&ds, &res.assignments, &area, &cfg);
        for iv in &q.intervals {
            prop_assert!(iv.t_enter < iv.t_exit);
            for smp in &iv.samples {
                prop_assert!(smp.x >= 0.0 && smp.x <= area.length);
            }
        }
        for prof in &q.profiles {
            prop_assert!(prof.points.iter().all(|p| p.extent >= 0.0 && p.extent <= area.length));
        }
        for e in &q.spillbacks {
            let local = area.to_local(e.location.lat, e.location.lon);
            let d = area.signed_distance_from_upstream(local);
            prop_assert!(d.abs() <= cfg.spillback_eps + 1e-6, "spillback {d} m from the edge");
        }
        let ph = &q.phases;
        prop_assert_eq!(ph.red_onsets.len(), ph.green_onsets.len());
        for (i, (r, g)) in ph.red_onsets.iter().zip(&ph.green_onsets).enumerate() {
            prop_assert!(r < g);
            if let Some(next) = ph.red_onsets.get(i + 1) {
                prop_assert!(g <= next);
            }
        }
    }

    #[test]
    fn moe_and_fuel_invariants((s, seed) in scenario()) {
        let (ds, _) = synth_generate(&s, seed).unwrap();
        let area = s.area().unwrap();
        let res = assign_lanes(&ds, &area, &AssignConfig::default());
        for m in vehicle_moes(&ds, &res.assignments, area.speed_limit) {
            prop_assert!(m.travel_time >= 0.0);
            prop_assert!(m.stops >= 0.0);
            prop_assert!(m.delay >= 0.0 && m.delay <= m.travel_time + 1e-9);
        }
        let cfg = EnergyConfig::shipped();
        let (records, fleet) = fleet_fuel(&ds, &res.assignments, &cfg).unwrap();
        for (r, a) in records.iter().zip(&res.assignments) {
            let (p, scale) = cfg.params_for(r.vehicle_class).unwrap();
            let traj = ds.get(a.track_id).unwrap();
            let dur = traj.points[a.exit_index].t - traj.points[a.entry_index].t;
            prop_assert!(r.fuel >= scale * p.alpha0 * dur * (1.0 - 1e-12));
        }
        let sum: f64 = records.iter().map(|r| r.fuel).sum();
        prop_assert!((sum - fleet.total.fuel).abs() <= 1e-9 * sum.max(1.0));
    }

    #[test]
    fn report_marginals_are_consistent((s, seed) in scenario()) {
        let (ds, _) = synth_generate(&s, seed).unwrap();
        let cfg = RunConfig::default();
        let res = cfg.resources_for(s.area().unwrap()).unwrap();
        let an = analyze(&ds, &res, &cfg, &mut StageTimings::default()).unwrap();
        let r = build_report(&ds, &res, &cfg, &an, Section::All).unwrap();

        let counts = r.table("vehicle-counts").unwrap();
        let total = counts.row("Total").unwrap();
        for col in 1..counts.columns.len() {
            prop_assert_eq!(num(&total[col]).unwrap(), column_sum(counts, col));
        }
        let od = r.table("od-matrix").unwrap();
        let od_total = od.row("Total").unwrap();
        let last = od.columns.len() - 1;
        prop_assert_eq!(num(&od_total[last]).unwrap() as usize, an.assignment.assignments.len());
        for row in od.rows.iter().filter(|r| r[0] != Cell::from("Total")) {
            let s: f64 = row[1..last].iter().filter_map(num).sum();
            prop_assert_eq!(num(&row[last]).unwrap(), s);
        }

        // movement means are count-weighted lane means
        for metric in ["travel-time", "stops", "delay"] {
            let lane = r.table(&format!("{metric}-lane")).unwrap();
            let mv = r.table(&format!("{metric}-movement")).unwrap();
            for g in &cfg.movements.0 {
                let Some(mcol) = mv.column(&g.name) else { continue };
                for (ri, crow) in counts.rows.iter().enumerate().filter(|(_, r)| r[0] != Cell::from("Total")) {
                    let (mut n, mut acc) = (0.0, 0.0);
                    for l in &g.lanes {
                        let (Some(cc), Some(lc)) = (counts.column(&format!("lane_{l}")), lane.column(&format!("lane_{l}"))) else { continue };
                        let k = num(&crow[cc]).unwrap_or(0.0);
                        if k > 0.0 {
                            n += k;
                            acc += k * num(&lane.rows[ri][lc]).unwrap();
                        }
                    }
                    match num(&mv.rows[ri][mcol]) {
                        None => prop_assert_eq!(n, 0.0),
                        Some(v) => prop_assert!((v - acc / n).abs() <= 1e-9 * v.abs().max(1.0)),
                    }
                }
            }
        }

        let csv = counts.to_csv();
        prop_assert_eq!(Table::from_csv("vehicle-counts", &csv).unwrap().to_csv(), csv);
    }
}
