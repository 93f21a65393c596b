//! Scenario files and the combined runner.
//!
//! A scenario wires any subset of the subsystems (link probe, micro-cloud
//! session, fleet survey, sensing benchmark) into one engine and one log.

use std::path::Path;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::comms::{LinkProbe, LinkSpec, Network, ProbeConfig, ProbeEvent};
use crate::engine::{Engine, EventLog, EventPayload};
use crate::error::{Error, Result};
use crate::mission::{
    AreaSpec, ChargingStation, Constraint, ControlCommand, FleetSpec, Mission, MissionEvent,
    MissionParams, MissionSpec, PlanSpec,
};
use crate::model::{
    Bounds, Condition, MaterialClass, PlumeField, PlumeSource, PollutantItem, Vec3, World,
    WorldSpec, DEFAULT_MAX_DEPTH,
};
use crate::par::{map_slice, Execution};
use crate::offload::{OffloadConfig, OffloadEvent, OffloadSession};
use crate::sensing::{bench_sensing, BenchConfig, ConfusionModel, ConfusionSpec};

pub const WORLD_STREAM: &str = "world";

/// Randomly placed debris.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scatter {
    pub count: u32,
    /// Horizontal region; defaults to the world bounds.
    #[serde(default)]
    pub region: Option<Bounds>,
    /// `[shallow, deep]` depth band, both `<= 0`.
    #[serde(default)]
    pub depth: [f64; 2],
    /// Restricts materials; all six by default.
    #[serde(default)]
    pub materials: Vec<MaterialClass>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Pollutants {
    #[serde(default)]
    pub items: Vec<PollutantItem>,
    #[serde(default)]
    pub scatter: Option<Scatter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub bounds: Bounds,
    #[serde(default = "default_max_depth")]
    pub max_depth: f64,
    #[serde(default)]
    pub condition: Condition,
    #[serde(default)]
    pub pollutants: Pollutants,
    #[serde(default)]
    pub plumes: Vec<PlumeSource>,
}

fn default_max_depth() -> f64 {
    DEFAULT_MAX_DEPTH
}

impl WorldConfig {
    /// Materializes the world, drawing scattered items from the `world` stream.
    pub fn build(&self, seed: u64) -> Result<World> {
        let spec = WorldSpec {
            bounds: self.bounds,
            max_depth: self.max_depth,
            condition: self.condition,
        };
        spec.validate()?;
        let mut items = self.pollutants.items.clone();
        if let Some(sc) = &self.pollutants.scatter {
            let region = sc.region.unwrap_or(self.bounds);
            let [a, b] = sc.depth;
            if a > 0.0 || b > 0.0 || !a.is_finite() || !b.is_finite() {
                return Err(Error::config("scatter depth must be <= 0"));
            }
            if region.max.x <= region.min.x || region.max.y <= region.min.y {
                return Err(Error::config("scatter region needs positive extent"));
            }
            let materials = if sc.materials.is_empty() {
                MaterialClass::ALL.to_vec()
            } else {
                sc.materials.clone()
            };
            let mut rng = crate::rng::RngStream::derive(seed, WORLD_STREAM);
            let mut next_id = items.iter().map(|i| i.id + 1).max().unwrap_or(0);
            let (zlo, zhi) = (a.min(b), a.max(b));
            for _ in 0..sc.count {
                let x = rng.random_range(region.min.x..=region.max.x);
                let y = rng.random_range(region.min.y..=region.max.y);
                let z = if zlo < zhi { rng.random_range(zlo..=zhi) } else { zlo };
                let material = materials[rng.random_range(0..materials.len())];
                let size = rng.random_range(0.05..0.5);
                items.push(PollutantItem {
                    id: next_id,
                    position: Vec3::new(x, y, z),
                    material,
                    size,
                });
                next_id += 1;
            }
        }
        World::new(spec, items, PlumeField::new(self.plumes.clone())?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    #[serde(default)]
    pub confusion: ConfusionSpec,
    /// Runs the cross-validation benchmark at start and logs the table.
    #[serde(default)]
    pub bench: Option<BenchConfig>,
}

/// Top-level scenario file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
    pub world: WorldConfig,
    /// Extra or overriding link profiles, keyed by their `name`.
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub fleet: Option<FleetSpec>,
    #[serde(default)]
    pub stations: Vec<ChargingStation>,
    #[serde(default)]
    pub areas: Vec<AreaSpec>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub plan: Option<PlanSpec>,
    #[serde(default)]
    pub mission: MissionParams,
    #[serde(default)]
    pub offload: Option<OffloadConfig>,
    #[serde(default)]
    pub link_probe: Option<ProbeConfig>,
    #[serde(default)]
    pub sensing: SensingSection,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn network(&self) -> Result<Network> {
        let mut n = Network::with_builtins();
        for l in &self.links {
            if l.name.is_empty() {
                return Err(Error::config("scenario links need a name"));
            }
            n.insert(l.clone(), &l.name.clone())?;
        }
        Ok(n)
    }

    /// The fleet block, if the scenario flies a survey.
    pub fn mission_spec(&self) -> Result<Option<MissionSpec>> {
        let parts = (self.fleet.is_some(), !self.areas.is_empty(), self.plan.is_some());
        match parts {
            (false, false, false) => Ok(None),
            (true, true, true) => Ok(Some(MissionSpec {
                areas: self.areas.clone(),
                constraints: self.constraints.clone(),
                plan: self.plan.expect("checked"),
                fleet: self.fleet.clone().expect("checked"),
                stations: self.stations.clone(),
                params: self.mission.clone(),
            })),
            _ => Err(Error::config(
                "a survey needs all of fleet, areas and plan",
            )),
        }
    }

    /// Static checks that need no randomness.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        let network = self.network()?;
        if let Some(o) = &self.offload {
            o.validate(&network)?;
        }
        if let Some(p) = &self.link_probe {
            LinkProbe::new(p.clone(), &network)?;
        }
        ConfusionModel::from_spec(&self.sensing.confusion)?;
        if let Some(b) = &self.sensing.bench {
            b.generator.resolve()?;
        }
        if let Some(m) = self.mission_spec()? {
            m.params.validate()?;
            m.params.resolve_comms_range(&network)?;
            m.fleet.validate()?;
            for a in &m.areas {
                a.validate(self.world.max_depth)?;
            }
            for c in &m.constraints {
                c.validate()?;
            }
        }
        Ok(())
    }
}

/// Union of subsystem events sharing one engine.
#[derive(Debug, Clone)]
pub enum ScenarioEvent {
    Mission(MissionEvent),
    Offload(OffloadEvent),
    Probe(ProbeEvent),
}

impl From<MissionEvent> for ScenarioEvent {
    fn from(e: MissionEvent) -> Self {
        ScenarioEvent::Mission(e)
    }
}

impl From<OffloadEvent> for ScenarioEvent {
    fn from(e: OffloadEvent) -> Self {
        ScenarioEvent::Offload(e)
    }
}

impl From<ProbeEvent> for ScenarioEvent {
    fn from(e: ProbeEvent) -> Self {
        ScenarioEvent::Probe(e)
    }
}

impl EventPayload for ScenarioEvent {
    fn kind(&self) -> &'static str {
        match self {
            ScenarioEvent::Mission(e) => e.kind(),
            ScenarioEvent::Offload(e) => e.kind(),
            ScenarioEvent::Probe(e) => e.kind(),
        }
    }

    fn payload(&self) -> Value {
        match self {
            ScenarioEvent::Mission(e) => e.payload(),
            ScenarioEvent::Offload(e) => e.payload(),
            ScenarioEvent::Probe(e) => e.payload(),
        }
    }
}

struct Parts {
    network: Network,
    mission: Option<Mission>,
    offload: Option<OffloadSession>,
    probe: Option<LinkProbe>,
}

impl Parts {
    fn dispatch(&mut self, engine: &mut Engine<ScenarioEvent>, ev: ScenarioEvent) -> Result<()> {
        match ev {
            ScenarioEvent::Mission(e) => match &mut self.mission {
                Some(m) => m.handle(engine, e),
                None => Ok(()),
            },
            ScenarioEvent::Offload(e) => match &mut self.offload {
                Some(o) => o.handle(engine, &mut self.network, e),
                None => Ok(()),
            },
            ScenarioEvent::Probe(e) => match &mut self.probe {
                Some(p) => p.handle(engine, &mut self.network, e),
                None => Ok(()),
            },
        }
    }
}

/// A scenario in flight. Advance it with [`ScenarioRun::advance_to`], steer
/// it with [`ScenarioRun::apply_command`], and close it with
/// [`ScenarioRun::finish`].
pub struct ScenarioRun {
    engine: Engine<ScenarioEvent>,
    parts: Parts,
    duration: f64,
    finished: bool,
}

impl ScenarioRun {
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Result<Self> {
        scenario.validate()?;
        let seed = seed.unwrap_or(scenario.seed);
        let network = scenario.network()?;
        let world = scenario.world.build(seed)?;
        let mut engine: Engine<ScenarioEvent> = Engine::new(seed);
        engine.record(
            "SCENARIO_START",
            json!({
                "seed": seed,
                "duration": scenario.duration,
                "condition": world.spec.condition,
                "items": world.items().len(),
            }),
        );

        if let Some(b) = &scenario.sensing.bench {
            let table = bench_sensing(b)?;
            engine.record("SENSING_BENCH", serde_json::to_value(&table)?);
        }

        let probe = match &scenario.link_probe {
            Some(cfg) => {
                let p = LinkProbe::new(cfg.clone(), &network)?;
                engine.record(
                    "PROBE_START",
                    json!({ "link": cfg.link, "distances": cfg.distances, "trials": cfg.trials }),
                );
                p.start(&mut engine)?;
                Some(p)
            }
            None => None,
        };

        let offload = match &scenario.offload {
            Some(cfg) => {
                cfg.validate(&network)?;
                let s = OffloadSession::from_config(cfg, &mut engine)?;
                s.start(&mut engine, cfg.start_time)?;
                Some(s)
            }
            None => None,
        };

        let mission = match scenario.mission_spec()? {
            Some(spec) => {
                let confusion = ConfusionModel::from_spec(&scenario.sensing.confusion)?;
                let range = spec.params.resolve_comms_range(&network)?;
                let mut m = Mission::new(&spec, world, confusion, range)?;
                m.start(&mut engine, 0.0)?;
                Some(m)
            }
            None => None,
        };

        Ok(Self {
            engine,
            parts: Parts {
                network,
                mission,
                offload,
                probe,
            },
            duration: scenario.duration,
            finished: false,
        })
    }

    pub fn now(&self) -> f64 {
        self.engine.now()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn engine(&self) -> &Engine<ScenarioEvent> {
        &self.engine
    }

    pub fn mission(&self) -> Option<&Mission> {
        self.parts.mission.as_ref()
    }

    /// True once the duration is reached or no events remain.
    pub fn is_done(&mut self) -> bool {
        self.finished
            || self.engine.now() >= self.duration
            || self.engine.next_event_time().is_none_or(|t| t > self.duration)
    }

    /// Runs events up to `min(t, duration)`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = t.min(self.duration).max(self.engine.now());
        let parts = &mut self.parts;
        self.engine
            .run_until(target, &mut |e: &mut Engine<ScenarioEvent>, ev| parts.dispatch(e, ev))?;
        Ok(())
    }

    /// Time of the next pending event within the duration.
    pub fn next_event_time(&mut self) -> Option<f64> {
        self.engine.next_event_time().filter(|&t| t <= self.duration)
    }

    pub fn apply_command(&mut self, cmd: &ControlCommand) -> Result<()> {
        match &mut self.parts.mission {
            Some(m) => m.apply_command(&mut self.engine, cmd),
            None => Err(Error::arg("scenario has no mission to command")),
        }
    }

    /// Records closing summaries and returns the log.
    pub fn finish(mut self) -> EventLog {
        if let Some(m) = &mut self.parts.mission {
            m.finalize(&mut self.engine);
        }
        self.finished = true;
        self.engine.into_log()
    }

    /// Closes the run in place, leaving the log readable.
    pub fn finish_in_place(&mut self) {
        if self.finished {
            return;
        }
        if let Some(m) = &mut self.parts.mission {
            m.finalize(&mut self.engine);
        }
        self.finished = true;
    }

    pub fn log(&self) -> &EventLog {
        self.engine.log()
    }
}

/// Runs a scenario headless to `until` (default: its duration).
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>, until: Option<f64>) -> Result<EventLog> {
    let mut run = ScenarioRun::new(scenario, seed)?;
    run.advance_to(until.unwrap_or(scenario.duration))?;
    Ok(run.finish())
}

/// Runs one scenario under many seeds and returns each log's hash, in seed order.
pub fn sweep_seeds(scenario: &Scenario, seeds: &[u64], mode: Execution) -> Result<Vec<(u64, String)>> {
    map_slice(mode, seeds, |&seed| {
        run_scenario(scenario, Some(seed), None).map(|log| (seed, log.sha256()))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration": 10,
        "world": { "bounds": { "min": {"x":0,"y":0,"z":-10}, "max": {"x":10,"y":10,"z":0} } }
    }"#;

    #[test]
    fn minimal_scenario_runs() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        let log = run_scenario(&s, None, None).unwrap();
        assert_eq!(log.events()[0].kind, "SCENARIO_START");
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replacen("\"duration\"", "\"durration\": 1, \"duration\"", 1);
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn partial_survey_rejected() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.fleet = Some(FleetSpec::with_size(1));
        assert!(s.validate().is_err());
    }

    #[test]
    fn scatter_is_seeded() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.world.pollutants.scatter = Some(Scatter {
            count: 50,
            region: None,
            depth: [0.0, -5.0],
            materials: vec![],
        });
        let a = s.world.build(1).unwrap();
        let b = s.world.build(1).unwrap();
        let c = s.world.build(2).unwrap();
        assert_eq!(a.items(), b.items());
        assert_ne!(a.items(), c.items());
        assert!(a.items().iter().all(|i| s.world.bounds.contains(&i.position)));
    }

    #[test]
    fn sweep_modes_agree() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        let seeds = [3, 1, 2];
        let a = sweep_seeds(&s, &seeds, Execution::Sequential).unwrap();
        let b = sweep_seeds(&s, &seeds, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|x| x.0).collect::<Vec<_>>(), seeds);
    }

    #[test]
    fn unknown_link_rejected() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.link_probe = Some(ProbeConfig {
            link: "laser".into(),
            distances: vec![1.0],
            trials: 1,
            message_size: 8.0,
        });
        assert!(s.validate().is_err());
    }
}
