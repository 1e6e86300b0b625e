mod common;

use braess_core::network::{Element, Variant};
use braess_core::routing::TrafficView;
use braess_core::simulation::{
    run, schedule_arrivals, Arrival, ArrivalProcess, DemandSpec, SimConfig, SimError, SpawnOutcome,
    WorldState,
};
use common::run_checked;

fn single_trip(dt: f64) -> f64 {
    let mut config = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 0.0, 0);
    config.dt = dt;
    config.horizon = 200.0;
    config.warmup = 0.0;
    let schedule = vec![Arrival {
        time: 0.0,
        node: "A".into(),
    }];
    let mut world = WorldState::with_schedule(config, schedule).unwrap();
    while !world.is_finished() {
        world.step().unwrap();
    }
    assert_eq!(world.completed_count(), 1);
    world.trips()[0].travel_time
}

#[test]
fn uniform_schedule_has_fixed_headway() {
    let spec = DemandSpec::uniform_rate(&["A"], 900.0, 3);
    let arrivals = schedule_arrivals(&spec, 3600.0);
    assert_eq!(arrivals.len(), 900);
    for w in arrivals.windows(2) {
        assert!((w[1].time - w[0].time - 4.0).abs() < 1e-9);
    }
    assert!(arrivals[0].time < 4.0);
    assert!(schedule_arrivals(&DemandSpec::uniform_rate(&["A"], 0.0, 3), 3600.0).is_empty());
}

#[test]
fn poisson_schedule_mean_headway() {
    let mut spec = DemandSpec::uniform_rate(&["A"], 400.0, 1);
    spec.arrival_process = ArrivalProcess::Poisson;
    let arrivals = schedule_arrivals(&spec, 3600.0);
    let mean = arrivals.last().unwrap().time / (arrivals.len() - 1) as f64;
    assert!((mean - 9.0).abs() < 0.05 * 9.0, "mean headway {mean}");
    assert_eq!(arrivals, schedule_arrivals(&spec, 3600.0));
}

#[test]
fn multi_node_schedule_is_time_sorted() {
    let spec = DemandSpec::uniform_rate(&["A", "C", "N"], 300.0, 5);
    let arrivals = schedule_arrivals(&spec, 600.0);
    assert_eq!(arrivals.len(), 150);
    assert!(arrivals.windows(2).all(|w| w[0].time <= w[1].time));
}

#[test]
fn empty_world_only_advances_clock() {
    let config = SimConfig::grid(Variant::AddedPath, 50.0, 15.0, &["A"], 0.0, 0);
    let mut world = WorldState::new(config).unwrap();
    for k in 1..=50 {
        world.step().unwrap();
        assert!((world.clock() - k as f64 * 0.1).abs() < 1e-12);
        assert_eq!(world.active_count(), 0);
    }
}

#[test]
fn single_trip_converges_in_dt() {
    let coarse = single_trip(0.1);
    let fine = single_trip(0.001);
    assert!(((coarse - fine) / fine).abs() < 0.02, "{coarse} vs {fine}");
}

#[test]
fn first_vehicle_takes_the_cheapest_route() {
    let config = SimConfig::grid(Variant::AddedPath, 200.0, 10.0, &["A"], 0.0, 0);
    let schedule = vec![Arrival {
        time: 0.0,
        node: "A".into(),
    }];
    let mut world = WorldState::with_schedule(config, schedule).unwrap();
    world.step().unwrap();
    let v = world.vehicles().next().unwrap();
    assert_eq!(world.route(v.route).id, "A-C-D-B");
    assert_eq!(v.entry_time, 0.0);
}

#[test]
fn one_insertion_per_node_per_step() {
    let config = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 0.0, 0);
    let schedule = vec![
        Arrival {
            time: 0.0,
            node: "A".into(),
        },
        Arrival {
            time: 0.0,
            node: "A".into(),
        },
    ];
    let mut world = WorldState::with_schedule(config, schedule).unwrap();
    world.step().unwrap();
    assert_eq!(world.active_count(), 1);
    assert_eq!(world.deferred_count(), 1);
    assert_eq!(world.arrived_count(), 2);
    world.check_invariants().unwrap();
}

#[test]
fn jammed_entry_defers_arrivals() {
    let config = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 0.0, 0);
    let schedule = (0..40)
        .map(|_| Arrival {
            time: 0.0,
            node: "A".into(),
        })
        .collect();
    let mut world = WorldState::with_schedule(config, schedule).unwrap();
    world.step().unwrap();
    assert_eq!(world.active_count(), 1);
    assert_eq!(world.deferral_events(), 0);
    let mut inserted = 1;
    for _ in 0..600 {
        match world.spawn(world.network().origin()) {
            SpawnOutcome::Inserted(_) => inserted += 1,
            SpawnOutcome::Deferred => {}
            SpawnOutcome::NothingDue => break,
        }
        world.step().unwrap();
        world.check_invariants().unwrap();
    }
    // Entry space frees up far more slowly than arrivals come due.
    assert!(world.deferral_events() > 100);
    assert!(inserted > 1);
}

#[test]
fn low_demand_run_completes_everything() {
    let config = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 50.0, 0);
    let log = run(&config).unwrap();
    assert_eq!(log.deferred, 0);
    // Only the last vehicle or so can still be travelling.
    assert!(log.arrived - log.trips.len() as u64 <= 1);
    let tt = log.mean_travel_time().unwrap();
    assert!(tt.is_finite() && tt > 0.0);
    assert!((log.output_flow() - 50.0).abs() <= 2.5);
}

#[test]
fn zero_demand_gives_empty_log() {
    let log = run(&SimConfig::grid(
        Variant::AddedPath,
        50.0,
        15.0,
        &["A"],
        0.0,
        0,
    ))
    .unwrap();
    assert!(log.trips.is_empty());
    assert_eq!(log.output_flow(), 0.0);
    assert!(log.mean_travel_time().is_none());
    assert!(log
        .flow_density_curve(60.0)
        .iter()
        .all(|p| p.flow_veh_per_hr == 0.0 && p.density_veh_per_km == 0.0));
}

#[test]
fn samples_cover_the_window_at_every_step() {
    let log = run(&SimConfig::grid(
        Variant::Baseline,
        50.0,
        15.0,
        &["A"],
        200.0,
        0,
    ))
    .unwrap();
    assert_eq!(log.samples.len(), 30001);
    assert!((log.samples[0].clock - 600.0).abs() < 1e-9);
    assert!((log.samples.last().unwrap().clock - 3600.0).abs() < 1e-9);
    assert_eq!(log.samples[0].occupancy.len(), log.element_names.len());
}

#[test]
fn runs_are_deterministic() {
    let mut config = SimConfig::grid(Variant::AddedPath, 200.0, 15.0, &["A", "C"], 600.0, 9);
    config.demand.arrival_process = ArrivalProcess::Poisson;
    assert_eq!(run(&config).unwrap(), run(&config).unwrap());
}

#[test]
fn trips_respect_free_flow_bound() {
    let config = SimConfig::grid(Variant::AddedPath, 300.0, 15.0, &["A"], 400.0, 1);
    let world = WorldState::new(config.clone()).unwrap();
    let net = world.network();
    let bound = |route_id: &str| {
        let r = world.routes().iter().find(|r| r.id == route_id).unwrap();
        r.elements
            .iter()
            .map(|el| net.element_length(*el) / net.element_max_speed(*el))
            .sum::<f64>()
    };
    let log = run(&config).unwrap();
    assert!(!log.trips.is_empty());
    for t in &log.trips {
        assert!(t.exit_time > t.entry_time);
        assert!(t.travel_time > bound(&t.route_id), "{t:?}");
    }
}

#[test]
fn heavy_multi_inflow_keeps_invariants() {
    let config = SimConfig::grid(
        Variant::AddedPath,
        400.0,
        10.0,
        &["A", "C", "N", "M", "D"],
        900.0,
        2,
    );
    let log = run_checked(&config).unwrap();
    assert!(log.deferred > 0);
}

#[test]
fn rerouting_keeps_invariants() {
    let mut config = SimConfig::grid(Variant::AddedPath, 200.0, 15.0, &["A"], 800.0, 0);
    config.reroute_enabled = true;
    let log = run_checked(&config).unwrap();
    assert!(log.output_flow() > 700.0);
}

#[test]
fn snapshots_close_over_edge_length() {
    let config = SimConfig::grid(Variant::AddedPath, 200.0, 15.0, &["A"], 900.0, 0);
    let mut world = WorldState::new(config).unwrap();
    for _ in 0..3000 {
        world.step().unwrap();
        let elements: Vec<Element> = world.network().elements().collect();
        for el in elements {
            let snap = world.snapshot(el);
            let total: f64 = snap.gaps().iter().sum();
            assert!((total - snap.length).abs() < 1e-6);
        }
    }
}

#[test]
fn low_demand_shortcut_saves_time() {
    let base = run(&SimConfig::grid(
        Variant::Baseline,
        200.0,
        15.0,
        &["A"],
        50.0,
        0,
    ))
    .unwrap();
    let added = run(&SimConfig::grid(
        Variant::AddedPath,
        200.0,
        15.0,
        &["A"],
        50.0,
        0,
    ))
    .unwrap();
    assert!(added.mean_travel_time().unwrap() < base.mean_travel_time().unwrap());
    assert!(added.route_shares()["A-C-D-B"] > 0.5);
}

#[test]
fn completions_grow_with_low_demand() {
    let mut last = 0;
    for d in [50.0, 200.0, 400.0] {
        let log = run(&SimConfig::grid(
            Variant::AddedPath,
            300.0,
            15.0,
            &["A"],
            d,
            0,
        ))
        .unwrap();
        assert!(log.trips.len() >= last);
        last = log.trips.len();
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let mut c = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 100.0, 0);
    c.dt = 0.0;
    let err = WorldState::new(c).unwrap_err();
    assert!(matches!(&err, SimError::InvalidConfig { field, .. } if field == "dt_s"));

    let mut c = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], 100.0, 0);
    c.warmup = 3600.0;
    assert!(
        matches!(WorldState::new(c), Err(SimError::InvalidConfig { field, .. }) if field == "warmup_s")
    );

    let c = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["B"], 100.0, 0);
    assert!(matches!(WorldState::new(c), Err(SimError::Network(_))));

    let c = SimConfig::grid(Variant::Baseline, 50.0, 15.0, &["A"], -1.0, 0);
    assert!(WorldState::new(c).is_err());
}
