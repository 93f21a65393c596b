use abyss_core::engine::{Engine, SimEvent};
use abyss_core::mission::*;
use abyss_core::model::{Bounds, PlumeField, PollutantItem, World, WorldSpec};
use abyss_core::rng::derive_stream;
use abyss_core::sensing::ConfusionModel;
use abyss_core::{MaterialClass, Vec3};
use rand::Rng;

fn world(items: Vec<PollutantItem>) -> World {
    let spec = WorldSpec {
        bounds: Bounds {
            min: Vec3::new(-1000.0, -1000.0, -200.0),
            max: Vec3::new(1000.0, 1000.0, 0.0),
        },
        max_depth: 200.0,
        condition: Default::default(),
    };
    World::new(spec, items, PlumeField::new(vec![]).unwrap()).unwrap()
}

fn spec(area: AreaSpec, spacing: f64, fleet: FleetSpec, station: Vec3) -> MissionSpec {
    MissionSpec {
        areas: vec![area],
        constraints: vec![],
        plan: PlanSpec::belt(spacing),
        fleet,
        stations: vec![ChargingStation::new(station, 100.0)],
        params: MissionParams::default(),
    }
}

fn run(mission: &mut Mission, seed: u64, until: f64) -> Vec<SimEvent> {
    let mut engine: Engine<MissionEvent> = Engine::new(seed);
    mission.start(&mut engine, 0.0).unwrap();
    engine
        .run_until(until, &mut |e: &mut Engine<MissionEvent>, ev| mission.handle(e, ev))
        .unwrap();
    mission.finalize(&mut engine);
    engine.into_log().events().to_vec()
}

fn count(events: &[SimEvent], kind: &str) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

#[test]
fn straight_strip_completes_in_length_over_speed() {
    // One 100 m strip, vehicle launched at its start.
    let area = AreaSpec::rectangle(0.0, 0.0, 100.0, 4.0, [0.0, 0.0]);
    let s = spec(area, 10.0, FleetSpec::with_size(1), Vec3::new(0.0, 2.0, 0.0));
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 100.0).unwrap();
    assert_eq!(m.plan().strips.len(), 1);
    let ev = run(&mut m, 1, 1000.0);
    let done = ev.iter().find(|e| e.kind == "STRIP_DONE").unwrap();
    // The completion is noticed on the tick after the last waypoint is reached.
    assert!((done.time - 100.0).abs() <= 1.0 + 1e-9, "{}", done.time);
    assert_eq!(count(&ev, "LOST"), 0);
    // Comes home after the strip: 100 m back.
    let docked = ev
        .iter()
        .find(|e| e.kind == "STATUS" && e.payload["to"] == "DOCKED")
        .unwrap();
    assert!((docked.time - 200.0).abs() <= 2.0, "{}", docked.time);
}

#[test]
fn item_on_path_detected_once_and_classified_once() {
    let area = AreaSpec::rectangle(0.0, 0.0, 100.0, 4.0, [0.0, 0.0]);
    let items = vec![
        PollutantItem { id: 7, position: Vec3::new(50.0, 3.0, 0.0), material: MaterialClass::Pet, size: 0.1 },
        PollutantItem { id: 8, position: Vec3::new(50.0, 30.0, 0.0), material: MaterialClass::Wood, size: 0.1 },
    ];
    let s = spec(area, 10.0, FleetSpec::with_size(1), Vec3::new(0.0, 2.0, 0.0));
    let mut m = Mission::new(&s, world(items), ConfusionModel::identity(), 100.0).unwrap();
    let ev = run(&mut m, 2, 1000.0);
    let det: Vec<&SimEvent> = ev.iter().filter(|e| e.kind == "DETECTION").collect();
    let cls: Vec<&SimEvent> = ev.iter().filter(|e| e.kind == "CLASSIFIED").collect();
    assert_eq!(det.len(), 1);
    assert_eq!(cls.len(), 1);
    assert_eq!(det[0].payload["item"], 7);
    assert_eq!(cls[0].payload["predicted"], "PET");
    assert!(det[0].seq < cls[0].seq);
}

#[test]
fn classified_always_follows_its_detection() {
    let mut r = derive_stream(5, "items");
    let items: Vec<PollutantItem> = (0..400)
        .map(|i| PollutantItem {
            id: i,
            position: Vec3::new(r.random_range(0.0..80.0), r.random_range(0.0..60.0), 0.0),
            material: MaterialClass::ALL[i as usize % 6],
            size: 0.1,
        })
        .collect();
    let area = AreaSpec::rectangle(0.0, 0.0, 80.0, 60.0, [0.0, 0.0]);
    let s = spec(area, 10.0, FleetSpec::with_size(3), Vec3::new(0.0, 0.0, 0.0));
    let mut m = Mission::new(&s, world(items), ConfusionModel::table2(), 1000.0).unwrap();
    let ev = run(&mut m, 5, 20_000.0);
    let mut seen = std::collections::BTreeSet::new();
    for e in &ev {
        match e.kind.as_str() {
            "DETECTION" => assert!(seen.insert(e.payload["item"].as_u64().unwrap())),
            "CLASSIFIED" => assert!(seen.contains(&e.payload["item"].as_u64().unwrap())),
            _ => {}
        }
    }
    assert_eq!(count(&ev, "DETECTION"), count(&ev, "CLASSIFIED"));
    // Swath equals spacing: near-complete coverage.
    assert!(m.coverage_fraction() >= 0.95, "{}", m.coverage_fraction());
}

fn random_mission(seed: u64, policy: bool, capacity: f64) -> MissionSpec {
    let mut r = derive_stream(seed, "mission-gen");
    let w = r.random_range(60.0..400.0);
    let h = r.random_range(40.0..300.0);
    let x0 = r.random_range(-300.0..300.0);
    let y0 = r.random_range(-300.0..300.0);
    let area = AreaSpec::rectangle(x0, y0, x0 + w, y0 + h, [0.0, 0.0]);
    let mut fleet = FleetSpec::with_size(r.random_range(1..4));
    fleet.capacity = capacity;
    let station = Vec3::new(r.random_range(-400.0..400.0), r.random_range(-400.0..400.0), 0.0);
    let mut s = spec(area, r.random_range(10.0..40.0), fleet, station);
    s.stations.push(ChargingStation::new(
        Vec3::new(r.random_range(-400.0..400.0), r.random_range(-400.0..400.0), 0.0),
        r.random_range(20.0..200.0),
    ));
    s.params.return_policy = policy;
    s
}

#[test]
fn return_policy_prevents_stranding() {
    for seed in 0..100 {
        let s = random_mission(seed, true, 20_000.0);
        let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
        let ev = run(&mut m, seed, 30_000.0);
        assert_eq!(count(&ev, "LOST"), 0, "seed {seed}");
        for a in m.auvs() {
            assert!(a.battery >= 0.0 && a.battery <= a.capacity);
        }
    }
}

#[test]
fn disabled_policy_with_small_batteries_strands_someone() {
    let lost: usize = (0..100)
        .map(|seed| {
            let s = random_mission(seed, false, 5_000.0);
            let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
            count(&run(&mut m, seed, 30_000.0), "LOST")
        })
        .sum();
    assert!(lost >= 1);
}

#[test]
fn long_survey_recharges_and_finishes() {
    // 400 m x 200 m at 10 m spacing is ~8.4 km per vehicle, beyond one
    // battery of 20 kJ (2 km).
    let area = AreaSpec::rectangle(0.0, 0.0, 400.0, 200.0, [0.0, 0.0]);
    let mut fleet = FleetSpec::with_size(2);
    fleet.capacity = 20_000.0;
    let s = spec(area, 10.0, fleet, Vec3::ZERO);
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
    let ev = run(&mut m, 3, 200_000.0);
    assert!(count(&ev, "CHARGE_DONE") >= 4);
    assert!(count(&ev, "CHARGE_QUEUED") >= 1);
    assert_eq!(count(&ev, "MISSION_COMPLETE"), 1);
    assert_eq!(count(&ev, "STRIP_SKIPPED"), 0);
    assert!(m.coverage_fraction() >= 0.95, "{}", m.coverage_fraction());
}

#[test]
fn unreachable_strip_is_skipped_not_looped() {
    // Area 1.5 km away with a 10 kJ battery (1 km range at 10 W, 1 m/s).
    let area = AreaSpec::rectangle(1500.0, 0.0, 1540.0, 20.0, [0.0, 0.0]);
    let mut fleet = FleetSpec::with_size(1);
    fleet.capacity = 10_000.0;
    let s = spec(area, 10.0, fleet, Vec3::ZERO);
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
    let ev = run(&mut m, 4, 100_000.0);
    assert_eq!(count(&ev, "STRIP_SKIPPED"), m.plan().strips.len());
    assert_eq!(count(&ev, "LOST"), 0);
    assert_eq!(count(&ev, "MISSION_COMPLETE"), 1);
}

#[test]
fn abort_sends_everyone_home() {
    let area = AreaSpec::rectangle(0.0, 0.0, 200.0, 60.0, [0.0, 0.0]);
    let s = spec(area, 20.0, FleetSpec::with_size(3), Vec3::ZERO);
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
    let mut engine: Engine<MissionEvent> = Engine::new(9);
    m.start(&mut engine, 0.0).unwrap();
    let mut h = |e: &mut Engine<MissionEvent>, ev| m.handle(e, ev);
    engine.run_until(50.0, &mut h).unwrap();
    drop(h);
    m.apply_command(&mut engine, &ControlCommand::Abort).unwrap();
    assert!(m.auvs().iter().all(|a| a.status == AuvStatus::Returning));
    let mut h = |e: &mut Engine<MissionEvent>, ev| m.handle(e, ev);
    engine.run_until(10_000.0, &mut h).unwrap();
    drop(h);
    assert!(m.is_finished());
    assert!(m.auvs().iter().all(|a| a.status == AuvStatus::Docked));
    let log = engine.into_log();
    assert_eq!(log.iter().filter(|e| e.kind == "COMMAND_APPLIED").count(), 1);
    assert!(m.apply_command(&mut Engine::<MissionEvent>::new(0), &ControlCommand::Resume).is_err());
}

#[test]
fn standoff_command_removes_covered_strip() {
    let area = AreaSpec::rectangle(0.0, 0.0, 40.0, 40.0, [0.0, 0.0]);
    let s = spec(area, 20.0, FleetSpec::with_size(1), Vec3::ZERO);
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
    let mut engine: Engine<MissionEvent> = Engine::new(3);
    m.start(&mut engine, 0.0).unwrap();
    // A 25 m standoff around (20, 40) swallows the top strip entirely and
    // part of the middle one.
    let c = Constraint::standoff_point(Vec3::new(20.0, 40.0, 0.0), 25.0);
    m.apply_command(&mut engine, &ControlCommand::AddConstraint { constraint: c.clone() })
        .unwrap();
    let mut h = |e: &mut Engine<MissionEvent>, ev| m.handle(e, ev);
    engine.run_until(10_000.0, &mut h).unwrap();
    drop(h);
    let log = engine.into_log();
    let removed: Vec<&SimEvent> = log.iter().filter(|e| e.kind == "STRIP_REMOVED").collect();
    assert_eq!(removed.len(), 1);
    assert_eq!(removed[0].payload["strip"], 2);
    assert!(log.iter().any(|e| e.kind == "STRIP_CLIPPED" && e.payload["strip"] == 1));
    // Oracle: the remaining waypoints all respect the new constraint.
    for id in 0..2 {
        for w in &m.strip(id).unwrap().waypoints {
            assert!(!c.violated_by(w), "{w:?}");
        }
    }
}

#[test]
fn retask_replaces_unexecuted_strips() {
    let area = AreaSpec::rectangle(0.0, 0.0, 100.0, 100.0, [0.0, 0.0]);
    let s = spec(area, 20.0, FleetSpec::with_size(2), Vec3::ZERO);
    let mut m = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 1e6).unwrap();
    let mut engine: Engine<MissionEvent> = Engine::new(3);
    m.start(&mut engine, 0.0).unwrap();
    let new_area = AreaSpec::rectangle(0.0, 0.0, 40.0, 40.0, [0.0, 0.0]);
    m.apply_command(&mut engine, &ControlCommand::Retask { area: new_area, plan: None })
        .unwrap();
    let mut h = |e: &mut Engine<MissionEvent>, ev| m.handle(e, ev);
    engine.run_until(50_000.0, &mut h).unwrap();
    drop(h);
    let log = engine.into_log();
    // Strips 0 and 3 were in progress; 1, 2, 4, 5 were dropped.
    assert_eq!(log.iter().filter(|e| e.kind == "STRIP_REMOVED").count(), 4);
    let done: Vec<u64> = log
        .iter()
        .filter(|e| e.kind == "STRIP_DONE")
        .map(|e| e.payload["strip"].as_u64().unwrap())
        .collect();
    for s in [0, 3, 6, 7, 8] {
        assert!(done.contains(&s), "{done:?}");
    }
    assert!(m.is_finished());
}

#[test]
fn comms_infeasible_fleet_rejected_at_construction() {
    let area = AreaSpec::rectangle(0.0, 0.0, 40.0, 40.0, [0.0, 0.0]);
    let s = spec(area, 20.0, FleetSpec::with_size(3), Vec3::ZERO);
    let err = Mission::new(&s, world(vec![]), ConfusionModel::identity(), 15.0).unwrap_err();
    assert!(matches!(err, abyss_core::Error::CommsRange { a: 0, b: 1, .. }), "{err}");
}

#[test]
fn same_seed_same_log() {
    let mut r = derive_stream(11, "items");
    let items: Vec<PollutantItem> = (0..200)
        .map(|i| PollutantItem {
            id: i,
            position: Vec3::new(r.random_range(0.0..80.0), r.random_range(0.0..60.0), 0.0),
            material: MaterialClass::ALL[i as usize % 6],
            size: 0.1,
        })
        .collect();
    let area = AreaSpec::rectangle(0.0, 0.0, 80.0, 60.0, [0.0, 0.0]);
    let mut s = spec(area, 20.0, FleetSpec::with_size(2), Vec3::ZERO);
    s.params.position_noise = 0.5;
    let go = || {
        let mut m = Mission::new(&s, world(items.clone()), ConfusionModel::table2(), 1e6).unwrap();
        let mut engine: Engine<MissionEvent> = Engine::new(11);
        m.start(&mut engine, 0.0).unwrap();
        engine
            .run_until(5000.0, &mut |e: &mut Engine<MissionEvent>, ev| m.handle(e, ev))
            .unwrap();
        engine.into_log().sha256()
    };
    assert_eq!(go(), go());
}
