use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::coverage::CoverageGrid;
use super::fleet::{
    assign_strip_ids, nearest_station, return_trip_feasible, traversal, AuvState, AuvStatus,
    ChargingStation, FleetSpec,
};
use super::geometry::{subtract, AreaSpec, Constraint};
use super::planner::{PlanSpec, Strip, TransectPlan};
use crate::engine::{Engine, EventPayload};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::model::{distance, distance_to_segment, MaterialClass, Vec3, World};
use crate::sensing::{sample_confusion, ConfusionModel, SENSING_STREAM};

pub const NAVIGATION_STREAM: &str = "navigation";

/// Mission-level tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MissionParams {
    #[serde(default = "d_camera")]
    pub camera_range: f64,
    /// Defaults to twice the camera range.
    #[serde(default)]
    pub swath_width: Option<f64>,
    #[serde(default = "d_margin")]
    pub safety_margin: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Turn back when the trip home would no longer fit in the battery.
    #[serde(default = "d_true")]
    pub return_policy: bool,
    /// Standard deviation of reported position noise, meters.
    #[serde(default)]
    pub position_noise: f64,
    #[serde(default = "d_cell")]
    pub cell_size: f64,
    /// Ticks between TELEMETRY records.
    #[serde(default = "d_telemetry")]
    pub telemetry_every: u64,
    /// Link profile whose range bounds neighbour separation.
    #[serde(default = "d_comms_link")]
    pub comms_link: String,
    /// Overrides the link's range.
    #[serde(default)]
    pub comms_range: Option<f64>,
}

fn d_comms_link() -> String {
    crate::comms::ACOUSTIC.to_owned()
}

fn d_camera() -> f64 {
    5.0
}
fn d_margin() -> f64 {
    0.2
}
fn d_dt() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}
fn d_cell() -> f64 {
    1.0
}
fn d_telemetry() -> u64 {
    10
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            camera_range: d_camera(),
            swath_width: None,
            safety_margin: d_margin(),
            dt: d_dt(),
            return_policy: true,
            position_noise: 0.0,
            cell_size: d_cell(),
            telemetry_every: d_telemetry(),
            comms_link: d_comms_link(),
            comms_range: None,
        }
    }
}

impl MissionParams {
    pub fn swath(&self) -> f64 {
        self.swath_width.unwrap_or(2.0 * self.camera_range)
    }

    /// Explicit range, else the last non-zero breakpoint of the link.
    pub fn resolve_comms_range(&self, network: &crate::comms::Network) -> Result<f64> {
        match self.comms_range {
            Some(r) if r.is_finite() && r >= 0.0 => Ok(r),
            Some(r) => Err(Error::config(format!("comms_range must be >= 0, got {r}"))),
            None => Ok(network.get(&self.comms_link)?.curve.range()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("cell_size", self.cell_size)?;
        positive("swath_width", self.swath())?;
        if !(self.camera_range >= 0.0) {
            return Err(Error::config("camera_range must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.safety_margin) {
            return Err(Error::config("safety_margin must be in [0, 1)"));
        }
        if !(self.position_noise >= 0.0) {
            return Err(Error::config("position_noise must be >= 0"));
        }
        if self.telemetry_every == 0 {
            return Err(Error::config("telemetry_every must be >= 1"));
        }
        Ok(())
    }
}

/// Everything needed to plan and fly a survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    pub areas: Vec<AreaSpec>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub plan: PlanSpec,
    pub fleet: FleetSpec,
    pub stations: Vec<ChargingStation>,
    #[serde(default)]
    pub params: MissionParams,
}

/// Operator command; applied at the next tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ControlCommand {
    /// Replace unexecuted strips with a plan over a new area.
    Retask {
        area: AreaSpec,
        #[serde(default)]
        plan: Option<PlanSpec>,
    },
    AddConstraint {
        constraint: Constraint,
    },
    Abort,
    Pause,
    Resume,
}

impl ControlCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ControlCommand::Retask { .. } => "RETASK",
            ControlCommand::AddConstraint { .. } => "ADD_CONSTRAINT",
            ControlCommand::Abort => "ABORT",
            ControlCommand::Pause => "PAUSE",
            ControlCommand::Resume => "RESUME",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissionEvent {
    Tick,
}

impl EventPayload for MissionEvent {
    fn kind(&self) -> &'static str {
        "TICK"
    }

    fn payload(&self) -> Value {
        json!({})
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReturnReason {
    Energy,
    Complete,
    Abort,
}

impl ReturnReason {
    fn as_str(self) -> &'static str {
        match self {
            ReturnReason::Energy => "energy",
            ReturnReason::Complete => "complete",
            ReturnReason::Abort => "abort",
        }
    }
}

/// A waypoint and whether the leg reaching it is surveyed (camera and
/// coverage on) or a transit.
type Leg = (Vec3, bool);

#[derive(Debug, Clone)]
struct Vehicle {
    state: AuvState,
    /// Remaining legs of the current strip.
    route: VecDeque<Leg>,
    current: Option<usize>,
    /// Assigned strips not yet started, with per-vehicle sequence number.
    queue: VecDeque<(usize, usize)>,
    started: usize,
    station: Option<usize>,
    reason: Option<ReturnReason>,
    /// Survey distance since launch or last full charge.
    progress: f64,
    energy_used: f64,
    distance: f64,
}

/// Per-vehicle view for telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AuvTelemetry {
    pub id: u32,
    pub position: Vec3,
    pub battery_fraction: f64,
    pub status: AuvStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSnapshot {
    pub auvs: Vec<AuvTelemetry>,
    pub coverage: f64,
    /// Detections by predicted material.
    pub detections: BTreeMap<String, u64>,
    pub paused: bool,
    pub finished: bool,
}

/// Fleet survey driven by TICK events.
#[derive(Debug, Clone)]
pub struct Mission {
    params: MissionParams,
    plan: TransectPlan,
    plan_spec: PlanSpec,
    areas: Vec<AreaSpec>,
    constraints: Vec<Constraint>,
    stations: Vec<ChargingStation>,
    station_queues: Vec<VecDeque<usize>>,
    vehicles: Vec<Vehicle>,
    coverage: Vec<CoverageGrid>,
    world: World,
    item_index: HashMap<(i64, i64), Vec<usize>>,
    index_cell: f64,
    detected: BTreeSet<u32>,
    detections_by_predicted: BTreeMap<String, u64>,
    confusion: ConfusionModel,
    comms_range: f64,
    ticks: u64,
    paused: bool,
    finished: bool,
    summarized: bool,
}

impl Mission {
    pub fn new(
        spec: &MissionSpec,
        world: World,
        confusion: ConfusionModel,
        comms_range: f64,
    ) -> Result<Self> {
        spec.params.validate()?;
        spec.fleet.validate()?;
        if spec.stations.is_empty() {
            return Err(Error::config("at least one charging station is required"));
        }
        for s in &spec.stations {
            s.validate()?;
        }
        let launch = spec.stations.get(spec.fleet.start_station).ok_or_else(|| {
            Error::config(format!(
                "start_station {} does not exist",
                spec.fleet.start_station
            ))
        })?;
        let max_depth = world.spec.max_depth;
        let plan = spec.plan.plan(&spec.areas, &spec.constraints, max_depth)?;
        let coverage = spec
            .areas
            .iter()
            .map(|a| Ok(CoverageGrid::new(&a.validate(max_depth)?, spec.params.cell_size)))
            .collect::<Result<Vec<_>>>()?;
        let states: Vec<AuvState> = (0..spec.fleet.size)
            .map(|i| AuvState::new(i as u32, launch.position, &spec.fleet))
            .collect();
        let ids: Vec<usize> = (0..plan.strips.len()).collect();
        let assignment = assign_strip_ids(&states, &plan, &ids, comms_range)?;
        let vehicles = states
            .into_iter()
            .zip(assignment)
            .map(|(mut state, strips)| {
                state.assignment = strips.clone();
                Vehicle {
                    state,
                    route: VecDeque::new(),
                    current: None,
                    queue: strips.into_iter().enumerate().map(|(k, s)| (s, k)).collect(),
                    started: 0,
                    station: None,
                    reason: None,
                    progress: 0.0,
                    energy_used: 0.0,
                    distance: 0.0,
                }
            })
            .collect();

        let index_cell = spec.params.camera_range.max(1.0);
        let mut item_index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, it) in world.items().iter().enumerate() {
            item_index
                .entry(cell_of(index_cell, it.position.x, it.position.y))
                .or_default()
                .push(i);
        }
        Ok(Self {
            params: spec.params.clone(),
            plan,
            plan_spec: spec.plan,
            areas: spec.areas.clone(),
            constraints: spec.constraints.clone(),
            station_queues: vec![VecDeque::new(); spec.stations.len()],
            stations: spec.stations.clone(),
            vehicles,
            coverage,
            world,
            item_index,
            index_cell,
            detected: BTreeSet::new(),
            detections_by_predicted: BTreeMap::new(),
            confusion,
            comms_range,
            ticks: 0,
            paused: false,
            finished: false,
            summarized: false,
        })
    }

    pub fn plan(&self) -> &TransectPlan {
        &self.plan
    }

    pub fn params(&self) -> &MissionParams {
        &self.params
    }

    pub fn auvs(&self) -> Vec<&AuvState> {
        self.vehicles.iter().map(|v| &v.state).collect()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn coverage_fraction(&self) -> f64 {
        let total: usize = self.coverage.iter().map(CoverageGrid::total_cells).sum();
        let covered: usize = self.coverage.iter().map(CoverageGrid::covered_cells).sum();
        if total == 0 {
            0.0
        } else {
            covered as f64 / total as f64
        }
    }

    pub fn snapshot(&self) -> MissionSnapshot {
        MissionSnapshot {
            auvs: self
                .vehicles
                .iter()
                .map(|v| AuvTelemetry {
                    id: v.state.id,
                    position: v.state.position,
                    battery_fraction: v.state.battery_fraction(),
                    status: v.state.status,
                })
                .collect(),
            coverage: self.coverage_fraction(),
            detections: self.detections_by_predicted.clone(),
            paused: self.paused,
            finished: self.finished,
        }
    }

    /// Records MISSION_START and schedules the first tick one step after `at`.
    pub fn start<E: EventPayload + From<MissionEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        at: f64,
    ) -> Result<()> {
        let assignment: Vec<Value> = self
            .vehicles
            .iter()
            .map(|v| json!({ "auv": v.state.id, "strips": v.state.assignment }))
            .collect();
        engine.record(
            "MISSION_START",
            json!({
                "plan": self.plan.summary(),
                "assignment": assignment,
                "comms_range": self.comms_range,
                "fleet": self.vehicles.len(),
                "cells": self.coverage.iter().map(CoverageGrid::total_cells).sum::<usize>(),
            }),
        );
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].queue.is_empty() {
                self.set_status(engine, i, AuvStatus::Docked, "unassigned");
            } else {
                self.load_next_strip(engine, i);
            }
        }
        engine.schedule(at + self.params.dt, MissionEvent::Tick.into())?;
        Ok(())
    }

    pub fn handle<E: EventPayload + From<MissionEvent>>(
        &mut self,
        engine: &mut Engine<E>,
        event: MissionEvent,
    ) -> Result<()> {
        match event {
            MissionEvent::Tick => self.tick(engine),
        }
    }

    fn set_status<E: EventPayload>(
        &mut self,
        engine: &mut Engine<E>,
        i: usize,
        to: AuvStatus,
        reason: &str,
    ) {
        let from = self.vehicles[i].state.status;
        if from == to {
            return;
        }
        self.vehicles[i].state.status = to;
        engine.record(
            "STATUS",
            json!({
                "auv": self.vehicles[i].state.id,
                "from": from.as_str(),
                "to": to.as_str(),
                "reason": reason,
            }),
        );
    }

    fn legs_for(&self, strip: usize, k: usize) -> VecDeque<Leg> {
        traversal(&self.plan, strip, k)
            .into_iter()
            .enumerate()
            .map(|(j, p)| (p, j % 2 == 1))
            .collect()
    }

    /// Pops the next queued strip into the route; false when none remain.
    fn load_next_strip<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize) -> bool {
        let Some((strip, k)) = self.vehicles[i].queue.pop_front() else {
            self.vehicles[i].current = None;
            return false;
        };
        let legs = self.legs_for(strip, k);
        let v = &mut self.vehicles[i];
        v.route = legs;
        v.current = Some(strip);
        v.started += 1;
        engine.record("STRIP_START", json!({ "auv": v.state.id, "strip": strip }));
        true
    }

    fn begin_return<E: EventPayload>(
        &mut self,
        engine: &mut Engine<E>,
        i: usize,
        reason: ReturnReason,
    ) {
        let st = nearest_station(&self.stations, &self.vehicles[i].state.position);
        self.vehicles[i].station = st;
        self.vehicles[i].reason = Some(reason);
        self.set_status(engine, i, AuvStatus::Returning, reason.as_str());
    }

    fn tick<E: EventPayload + From<MissionEvent>>(&mut self, engine: &mut Engine<E>) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        self.ticks += 1;
        for i in 0..self.vehicles.len() {
            match self.vehicles[i].state.status {
                AuvStatus::Surveying => self.step_surveying(engine, i),
                AuvStatus::Returning => self.step_returning(engine, i),
                AuvStatus::Charging => self.step_charging(engine, i),
                AuvStatus::Docked | AuvStatus::Lost => {}
            }
            let s = &self.vehicles[i].state;
            debug_assert!(s.battery >= 0.0 && s.battery <= s.capacity + 1e-9);
        }
        if self.ticks % self.params.telemetry_every == 0 {
            self.record_telemetry(engine);
        }
        if self.vehicles.iter().all(|v| v.state.status.is_terminal()) {
            self.finished = true;
            engine.record("MISSION_COMPLETE", json!({ "ticks": self.ticks }));
            self.finalize(engine);
            return Ok(());
        }
        engine.schedule_in(self.params.dt, MissionEvent::Tick.into())?;
        Ok(())
    }

    /// Walks up to `step` meters along the route without committing.
    fn advance(pos: Vec3, route: &VecDeque<Leg>, step: f64) -> (Vec3, usize, Vec<(Vec3, Vec3, bool)>) {
        let mut left = step;
        let mut p = pos;
        let mut consumed = 0;
        let mut pieces = Vec::new();
        for &(wp, survey) in route {
            let d = distance(&p, &wp);
            if d <= left {
                pieces.push((p, wp, survey));
                p = wp;
                left -= d;
                consumed += 1;
            } else {
                let q = p.step_towards(&wp, left);
                pieces.push((p, q, survey));
                p = q;
                break;
            }
        }
        (p, consumed, pieces)
    }

    fn step_surveying<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize) {
        let dt = self.params.dt;
        loop {
            if !self.vehicles[i].route.is_empty() {
                break;
            }
            let v = &self.vehicles[i];
            if let Some(strip) = v.current {
                engine.record("STRIP_DONE", json!({ "auv": v.state.id, "strip": strip }));
            }
            if !self.load_next_strip(engine, i) {
                self.begin_return(engine, i, ReturnReason::Complete);
                self.step_returning(engine, i);
                return;
            }
        }
        let v = &self.vehicles[i];
        let step = v.state.speed * dt;
        let (next, consumed, pieces) = Self::advance(v.state.position, &v.route, step);
        let drain = v.state.total_power() * dt;

        if self.params.return_policy {
            let mut probe = v.state.clone();
            probe.position = next;
            probe.battery = (probe.battery - drain).max(0.0);
            let ok = nearest_station(&self.stations, &next)
                .map(|s| return_trip_feasible(&probe, &self.stations[s], self.params.safety_margin))
                .unwrap_or(true);
            if !ok {
                self.turn_back(engine, i);
                self.step_returning(engine, i);
                return;
            }
        }

        let travelled: f64 = pieces.iter().map(|(a, b, _)| distance(a, b)).sum();
        let surveyed: f64 = pieces
            .iter()
            .filter(|p| p.2)
            .map(|(a, b, _)| distance(a, b))
            .sum();
        for (a, b, survey) in &pieces {
            if *survey {
                self.sense(engine, i, a, b);
            }
        }
        let v = &mut self.vehicles[i];
        v.route.drain(..consumed);
        v.state.position = next;
        v.progress += surveyed;
        v.distance += travelled;
        self.drain(engine, i, drain);
    }

    /// Energy-triggered return. The remaining route is kept with a transit
    /// leg back to the turn-back point, unless nothing was surveyed since the
    /// last full charge, in which case the strip is unreachable and skipped.
    fn turn_back<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize) {
        let v = &mut self.vehicles[i];
        if v.progress <= 0.0 {
            if let Some(strip) = v.current {
                engine.record(
                    "STRIP_SKIPPED",
                    json!({ "auv": v.state.id, "strip": strip, "reason": "unreachable" }),
                );
            }
            v.route.clear();
            v.current = None;
            if !self.load_next_strip(engine, i) {
                self.begin_return(engine, i, ReturnReason::Complete);
                return;
            }
        } else {
            let here = v.state.position;
            v.route.push_front((here, false));
        }
        self.begin_return(engine, i, ReturnReason::Energy);
    }

    fn drain<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize, joules: f64) {
        let v = &mut self.vehicles[i];
        let used = joules.min(v.state.battery);
        v.state.battery -= used;
        v.energy_used += used;
        if v.state.battery <= 0.0 {
            let at_station = self
                .stations
                .iter()
                .any(|s| distance(&s.position, &v.state.position) <= 1e-9);
            if !at_station {
                v.state.battery = 0.0;
                let pos = v.state.position;
                let id = v.state.id;
                v.route.clear();
                v.queue.clear();
                engine.record("LOST", json!({ "auv": id, "position": pos }));
                self.set_status(engine, i, AuvStatus::Lost, "battery depleted");
            }
        }
    }

    fn step_returning<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize) {
        let dt = self.params.dt;
        let Some(st) = self.vehicles[i].station else {
            // No station to go to; hold position.
            return;
        };
        let target = self.stations[st].position;
        let v = &mut self.vehicles[i];
        let d = distance(&v.state.position, &target);
        if d > 1e-9 {
            let step = v.state.speed * dt;
            v.state.position = v.state.position.step_towards(&target, step);
            v.distance += d.min(step);
            let drain = v.state.total_power() * dt;
            let arrived = distance(&v.state.position, &target) <= 1e-9;
            if arrived {
                // Arrival this tick: the station catches a vehicle that just
                // made it in.
                let v = &mut self.vehicles[i];
                let used = drain.min(v.state.battery);
                v.state.battery -= used;
                v.energy_used += used;
            } else {
                self.drain(engine, i, drain);
                return;
            }
        }
        self.arrive(engine, i, st);
    }

    fn arrive<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize, st: usize) {
        let reason = self.vehicles[i].reason.take();
        match reason {
            Some(ReturnReason::Energy) => {
                self.station_queues[st].push_back(i);
                self.set_status(engine, i, AuvStatus::Charging, "arrived");
                if self.station_queues[st].front() == Some(&i) {
                    self.start_charge(engine, i, st);
                } else {
                    engine.record(
                        "CHARGE_QUEUED",
                        json!({ "auv": self.vehicles[i].state.id, "station": st }),
                    );
                }
            }
            _ => {
                self.set_status(engine, i, AuvStatus::Docked, "arrived");
                self.vehicles[i].station = Some(st);
            }
        }
    }

    fn start_charge<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize, st: usize) {
        engine.record(
            "CHARGE_START",
            json!({
                "auv": self.vehicles[i].state.id,
                "station": st,
                "battery": self.vehicles[i].state.battery,
            }),
        );
    }

    fn step_charging<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize) {
        let dt = self.params.dt;
        let Some(st) = self.vehicles[i].station else {
            return;
        };
        if self.station_queues[st].front() != Some(&i) {
            let v = &mut self.vehicles[i];
            let used = (v.state.hotel_power * dt).min(v.state.battery);
            v.state.battery -= used;
            v.energy_used += used;
            return;
        }
        let rate = self.stations[st].charge_rate;
        let v = &mut self.vehicles[i];
        v.state.battery = (v.state.battery + rate * dt).min(v.state.capacity);
        if v.state.battery < v.state.capacity {
            return;
        }
        engine.record("CHARGE_DONE", json!({ "auv": v.state.id, "station": st }));
        v.progress = 0.0;
        self.release_slot(engine, i, st);
        let has_work = !self.vehicles[i].route.is_empty() || !self.vehicles[i].queue.is_empty();
        if has_work {
            self.set_status(engine, i, AuvStatus::Surveying, "charged");
        } else {
            self.set_status(engine, i, AuvStatus::Docked, "charged");
        }
    }

    fn release_slot<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize, st: usize) {
        let q = &mut self.station_queues[st];
        let was_front = q.front() == Some(&i);
        q.retain(|&x| x != i);
        if was_front {
            if let Some(&next) = q.front() {
                self.start_charge(engine, next, st);
            }
        }
    }

    /// Camera and coverage along one surveyed motion piece.
    fn sense<E: EventPayload>(&mut self, engine: &mut Engine<E>, i: usize, a: &Vec3, b: &Vec3) {
        let half = self.params.swath() / 2.0;
        for g in &mut self.coverage {
            g.mark_segment(a, b, half);
        }
        let r = self.params.camera_range;
        let (c0, r0) = cell_of(self.index_cell, a.x.min(b.x) - r, a.y.min(b.y) - r);
        let (c1, r1) = cell_of(self.index_cell, a.x.max(b.x) + r, a.y.max(b.y) + r);
        let mut candidates: Vec<usize> = Vec::new();
        for cx in c0..=c1 {
            for cy in r0..=r1 {
                if let Some(v) = self.item_index.get(&(cx, cy)) {
                    candidates.extend(v);
                }
            }
        }
        candidates.sort_unstable();
        let auv = self.vehicles[i].state.id;
        let condition = self.world.spec.condition;
        for ix in candidates {
            let item = self.world.items()[ix].clone();
            if self.detected.contains(&item.id) {
                continue;
            }
            let d = distance_to_segment(&item.position, a, b);
            if d > r {
                continue;
            }
            self.detected.insert(item.id);
            let reported = noisy(self.params.position_noise, engine.rng(NAVIGATION_STREAM), item.position);
            engine.record(
                "DETECTION",
                json!({ "item": item.id, "auv": auv, "position": reported, "distance": d }),
            );
            let predicted =
                sample_confusion(&self.confusion, item.material, condition, engine.rng(SENSING_STREAM));
            *self
                .detections_by_predicted
                .entry(predicted.as_str().to_owned())
                .or_default() += 1;
            engine.record(
                "CLASSIFIED",
                json!({
                    "item": item.id,
                    "auv": auv,
                    "true_material": item.material,
                    "predicted": predicted,
                    "condition": condition,
                }),
            );
        }
    }

    fn record_telemetry<E: EventPayload>(&mut self, engine: &mut Engine<E>) {
        let sigma = self.params.position_noise;
        let rng = engine.rng(NAVIGATION_STREAM);
        let auvs: Vec<Value> = self
            .vehicles
            .iter()
            .map(|v| {
                let s = &v.state;
                let pos = noisy(sigma, rng, s.position);
                json!({
                    "id": s.id,
                    "position": pos,
                    "battery_fraction": s.battery_fraction(),
                    "status": s.status,
                })
            })
            .collect();
        engine.record(
            "TELEMETRY",
            json!({ "auvs": auvs, "coverage": self.coverage_fraction() }),
        );
    }

    /// Writes MISSION_SUMMARY once; call when the run ends early too.
    pub fn finalize<E: EventPayload>(&mut self, engine: &mut Engine<E>) {
        if self.summarized {
            return;
        }
        self.summarized = true;
        let covered: usize = self.coverage.iter().map(CoverageGrid::covered_cells).sum();
        let total: usize = self.coverage.iter().map(CoverageGrid::total_cells).sum();
        let per_auv: Vec<Value> = self
            .vehicles
            .iter()
            .map(|v| {
                json!({
                    "auv": v.state.id,
                    "energy_used": v.energy_used,
                    "distance": v.distance,
                    "battery": v.state.battery,
                    "status": v.state.status,
                    "strips_started": v.started,
                })
            })
            .collect();
        engine.record(
            "MISSION_SUMMARY",
            json!({
                "coverage": self.coverage_fraction(),
                "covered_cells": covered,
                "total_cells": total,
                "energy_used": self.vehicles.iter().map(|v| v.energy_used).sum::<f64>(),
                "distance": self.vehicles.iter().map(|v| v.distance).sum::<f64>(),
                "lost": self.vehicles.iter().filter(|v| v.state.status == AuvStatus::Lost).count(),
                "finished": self.finished,
                "auvs": per_auv,
            }),
        );
    }

    /// Applies an operator command and logs COMMAND_APPLIED.
    pub fn apply_command<E: EventPayload>(
        &mut self,
        engine: &mut Engine<E>,
        command: &ControlCommand,
    ) -> Result<()> {
        if self.finished {
            return Err(Error::arg("mission has terminated"));
        }
        engine.record(
            "COMMAND_APPLIED",
            serde_json::to_value(command).expect("commands serialize"),
        );
        match command {
            ControlCommand::Pause => self.paused = true,
            ControlCommand::Resume => self.paused = false,
            ControlCommand::Abort => {
                self.paused = false;
                for i in 0..self.vehicles.len() {
                    let v = &mut self.vehicles[i];
                    if v.state.status.is_terminal() {
                        continue;
                    }
                    for (strip, _) in v.queue.drain(..) {
                        engine.record("STRIP_REMOVED", json!({ "auv": v.state.id, "strip": strip, "reason": "abort" }));
                    }
                    v.route.clear();
                    v.current = None;
                    if let Some(st) = v.station.filter(|_| v.state.status == AuvStatus::Charging) {
                        self.release_slot(engine, i, st);
                    }
                    self.begin_return(engine, i, ReturnReason::Abort);
                }
            }
            ControlCommand::AddConstraint { constraint } => {
                constraint.validate()?;
                self.constraints.push(constraint.clone());
                self.clip_remaining(engine, constraint);
            }
            ControlCommand::Retask { area, plan } => {
                self.retask(engine, area, plan.as_ref())?;
            }
        }
        Ok(())
    }

    /// Checks a retask without applying it.
    pub fn validate_retask(&self, area: &AreaSpec, plan: Option<&PlanSpec>) -> Result<()> {
        let spec = plan.copied().unwrap_or(self.plan_spec);
        let new_plan = spec.plan(std::slice::from_ref(area), &self.constraints, self.world.spec.max_depth)?;
        let states: Vec<AuvState> = self
            .vehicles
            .iter()
            .filter(|v| v.state.status != AuvStatus::Lost)
            .map(|v| v.state.clone())
            .collect();
        if states.is_empty() {
            return Err(Error::Planning("no vehicles left to retask".into()));
        }
        let ids: Vec<usize> = (0..new_plan.strips.len()).collect();
        assign_strip_ids(&states, &new_plan, &ids, self.comms_range)?;
        Ok(())
    }

    fn retask<E: EventPayload>(
        &mut self,
        engine: &mut Engine<E>,
        area: &AreaSpec,
        plan: Option<&PlanSpec>,
    ) -> Result<()> {
        self.validate_retask(area, plan)?;
        let spec = plan.copied().unwrap_or(self.plan_spec);
        let max_depth = self.world.spec.max_depth;
        let mut new_plan = spec.plan(std::slice::from_ref(area), &self.constraints, max_depth)?;
        let area_ix = self.areas.len();
        self.areas.push(area.clone());
        self.coverage
            .push(CoverageGrid::new(&area.validate(max_depth)?, self.params.cell_size));
        for v in &mut self.vehicles {
            for (strip, _) in v.queue.drain(..) {
                engine.record("STRIP_REMOVED", json!({ "auv": v.state.id, "strip": strip, "reason": "retask" }));
            }
        }
        let base = self.plan.strips.len();
        for s in &mut new_plan.strips {
            s.area = area_ix;
        }
        self.plan.strips.extend(new_plan.strips.iter().cloned());
        let alive: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| self.vehicles[i].state.status != AuvStatus::Lost)
            .collect();
        let states: Vec<AuvState> = alive.iter().map(|&i| self.vehicles[i].state.clone()).collect();
        let ids: Vec<usize> = (base..self.plan.strips.len()).collect();
        let assignment = assign_strip_ids(&states, &self.plan, &ids, self.comms_range)?;
        for (&i, strips) in alive.iter().zip(assignment) {
            let v = &mut self.vehicles[i];
            v.state.assignment.extend(&strips);
            v.queue = strips.into_iter().enumerate().map(|(k, s)| (s, k)).collect();
            if v.state.status == AuvStatus::Docked && !v.queue.is_empty() {
                v.progress = 0.0;
                self.set_status(engine, i, AuvStatus::Surveying, "retask");
            }
        }
        engine.record(
            "PLAN_UPDATED",
            json!({ "area": area_ix, "strips": ids, "plan": new_plan.summary() }),
        );
        Ok(())
    }

    /// Removes forbidden stretches from unexecuted legs and queued strips.
    fn clip_remaining<E: EventPayload>(&mut self, engine: &mut Engine<E>, c: &Constraint) {
        for i in 0..self.vehicles.len() {
            let id = self.vehicles[i].state.id;
            let queued: Vec<(usize, usize)> = self.vehicles[i].queue.iter().copied().collect();
            let mut keep = VecDeque::new();
            for (strip, k) in queued {
                let s = &self.plan.strips[strip];
                let legs = self.legs_for(strip, k);
                let start = legs.front().map(|l| l.0).unwrap_or(s.waypoints[0]);
                let clipped = clip_legs(start, legs.into_iter().skip(1), s, c);
                // Keep only surveyed intervals as waypoint pairs.
                let mut wps = Vec::new();
                let mut prev = start;
                for (p, survey) in clipped {
                    if survey {
                        wps.extend([prev, p]);
                    }
                    prev = p;
                }
                if wps.is_empty() {
                    engine.record("STRIP_REMOVED", json!({ "auv": id, "strip": strip, "reason": "constraint" }));
                } else {
                    if wps != self.plan.strips[strip].oriented(k % 2 == 0) {
                        engine.record("STRIP_CLIPPED", json!({ "auv": id, "strip": strip }));
                    }
                    self.plan.strips[strip].waypoints = wps;
                    keep.push_back((strip, k));
                }
            }
            self.vehicles[i].queue = keep;

            if let Some(strip) = self.vehicles[i].current {
                let pos = self.vehicles[i].state.position;
                let legs: Vec<Leg> = self.vehicles[i].route.drain(..).collect();
                let s = self.plan.strips[strip].clone();
                let mut clipped = clip_legs(pos, legs.into_iter(), &s, c);
                // First point is the current position.
                clipped.pop_front();
                if clipped.iter().all(|l| !l.1) {
                    clipped.clear();
                    engine.record("STRIP_REMOVED", json!({ "auv": id, "strip": strip, "reason": "constraint" }));
                    self.vehicles[i].current = None;
                }
                self.vehicles[i].route = clipped;
            }
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn strip(&self, id: usize) -> Option<&Strip> {
        self.plan.strips.get(id)
    }

    /// Detected item ids so far.
    pub fn detected(&self) -> &BTreeSet<u32> {
        &self.detected
    }

    pub fn detections_by_material(&self) -> BTreeMap<MaterialClass, usize> {
        let mut m = BTreeMap::new();
        for id in &self.detected {
            if let Some(it) = self.world.item(*id) {
                *m.entry(it.material).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Reported position: truth plus optional zero-mean Gaussian error.
fn noisy(sigma: f64, rng: &mut RngStream, p: Vec3) -> Vec3 {
    if sigma <= 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sigma).expect("validated sigma");
    Vec3::new(p.x + n.sample(rng), p.y + n.sample(rng), p.z + n.sample(rng))
}

fn cell_of(cell: f64, x: f64, y: f64) -> (i64, i64) {
    ((x / cell).floor() as i64, (y / cell).floor() as i64)
}

/// Rebuilds a leg sequence starting at `start`, cutting survey legs where
/// constraint `c` forbids them. Returned legs begin with `(start, false)`.
fn clip_legs(
    start: Vec3,
    legs: impl Iterator<Item = Leg>,
    strip: &Strip,
    c: &Constraint,
) -> VecDeque<Leg> {
    let axis = strip.axis;
    let mut out: VecDeque<Leg> = VecDeque::new();
    out.push_back((start, false));
    let mut prev = start;
    for (wp, survey) in legs {
        if !survey {
            out.push_back((wp, false));
            prev = wp;
            continue;
        }
        let (a, b) = (axis.along(&prev), axis.along(&wp));
        let (lo, hi) = (a.min(b), a.max(b));
        let cut = c.forbidden(axis, strip.offset, lo - 1.0, hi + 1.0);
        let mut pieces = subtract(&[(lo, hi)], &cut);
        if b < a {
            pieces.reverse();
        }
        for (s, e) in pieces {
            let (from, to) = if b < a { (e, s) } else { (s, e) };
            let p_from = axis.point(from, strip.offset, wp.z);
            let p_to = axis.point(to, strip.offset, wp.z);
            let last = out.back().map(|l| l.0).unwrap_or(prev);
            if distance(&last, &p_from) > 1e-9 {
                out.push_back((p_from, false));
            }
            out.push_back((p_to, true));
        }
        prev = wp;
    }
    out
}
