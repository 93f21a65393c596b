use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::planner::TransectPlan;
use crate::error::{Error, Result};
use crate::model::{distance, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuvStatus {
    Surveying,
    Returning,
    Charging,
    /// Parked at a station with no remaining work.
    Docked,
    Lost,
}

impl AuvStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AuvStatus::Surveying => "SURVEYING",
            AuvStatus::Returning => "RETURNING",
            AuvStatus::Charging => "CHARGING",
            AuvStatus::Docked => "DOCKED",
            AuvStatus::Lost => "LOST",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, AuvStatus::Docked | AuvStatus::Lost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuvState {
    pub id: u32,
    pub position: Vec3,
    pub speed: f64,
    pub battery: f64,
    pub capacity: f64,
    pub motion_power: f64,
    pub hotel_power: f64,
    pub status: AuvStatus,
    pub assignment: Vec<usize>,
}

impl AuvState {
    pub fn new(id: u32, position: Vec3, spec: &FleetSpec) -> Self {
        Self {
            id,
            position,
            speed: spec.speed,
            battery: spec.capacity * spec.initial_charge,
            capacity: spec.capacity,
            motion_power: spec.motion_power,
            hotel_power: spec.hotel_power,
            status: AuvStatus::Surveying,
            assignment: Vec::new(),
        }
    }

    pub fn total_power(&self) -> f64 {
        self.motion_power + self.hotel_power
    }

    pub fn battery_fraction(&self) -> f64 {
        self.battery / self.capacity
    }
}

/// Fleet of identical vehicles launched from one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    pub size: usize,
    #[serde(default = "d_speed")]
    pub speed: f64,
    #[serde(default = "d_motion")]
    pub motion_power: f64,
    #[serde(default = "d_hotel")]
    pub hotel_power: f64,
    /// Joules.
    #[serde(default = "d_capacity")]
    pub capacity: f64,
    /// Fraction of capacity at launch.
    #[serde(default = "d_one")]
    pub initial_charge: f64,
    /// Index into the station list.
    #[serde(default)]
    pub start_station: usize,
}

fn d_speed() -> f64 {
    1.0
}
fn d_motion() -> f64 {
    8.0
}
fn d_hotel() -> f64 {
    2.0
}
fn d_capacity() -> f64 {
    144_000.0
}
fn d_one() -> f64 {
    1.0
}

impl FleetSpec {
    pub fn with_size(size: usize) -> Self {
        Self {
            size,
            speed: d_speed(),
            motion_power: d_motion(),
            hotel_power: d_hotel(),
            capacity: d_capacity(),
            initial_charge: 1.0,
            start_station: 0,
        }
    }

    /// Seconds of unassisted operation at full power draw.
    pub fn endurance(&self) -> f64 {
        self.capacity / (self.motion_power + self.hotel_power)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("fleet {name} must be > 0, got {v}")))
            }
        };
        if self.size == 0 {
            return Err(Error::config("fleet size must be >= 1"));
        }
        positive("speed", self.speed)?;
        positive("capacity", self.capacity)?;
        if !(self.motion_power >= 0.0 && self.hotel_power >= 0.0) {
            return Err(Error::config("fleet powers must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.initial_charge) {
            return Err(Error::config("initial_charge must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Surface buoy that recharges one vehicle at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChargingStation {
    pub position: Vec3,
    /// Watts.
    #[serde(default = "d_rate")]
    pub charge_rate: f64,
}

fn d_rate() -> f64 {
    100.0
}

impl ChargingStation {
    pub fn new(position: Vec3, charge_rate: f64) -> Self {
        Self {
            position,
            charge_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.charge_rate.is_finite() && self.charge_rate > 0.0) {
            return Err(Error::config(format!(
                "charge_rate must be > 0, got {}",
                self.charge_rate
            )));
        }
        if !self.position.is_finite() || self.position.z != 0.0 {
            return Err(Error::config("stations float at the surface (z = 0)"));
        }
        Ok(())
    }
}

/// Energy to reach `station` in a straight line.
pub fn return_trip_energy(auv: &AuvState, station: &ChargingStation) -> f64 {
    distance(&auv.position, &station.position) / auv.speed * auv.total_power()
}

/// True when the trip home fits in the battery minus the safety margin. The
/// boundary counts as infeasible so vehicles turn back early rather than late.
pub fn return_trip_feasible(auv: &AuvState, station: &ChargingStation, safety_margin: f64) -> bool {
    return_trip_energy(auv, station) < auv.battery * (1.0 - safety_margin)
}

pub fn nearest_station(stations: &[ChargingStation], p: &Vec3) -> Option<usize> {
    stations
        .iter()
        .enumerate()
        .min_by(|a, b| {
            distance(&a.1.position, p)
                .total_cmp(&distance(&b.1.position, p))
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i)
}

/// Contiguous chunk sizes; the first `n % m` chunks take one extra.
pub fn chunk_sizes(n: usize, m: usize) -> Vec<usize> {
    let m = m.min(n).max(1);
    (0..m).map(|i| n / m + usize::from(i < n % m)).collect()
}

/// Position at arclength fraction `f` along a polyline.
fn along(path: &[Vec3], f: f64) -> Vec3 {
    let total: f64 = path.windows(2).map(|w| distance(&w[0], &w[1])).sum();
    if total == 0.0 || path.len() == 1 {
        return path[0];
    }
    let mut remaining = f * total;
    for w in path.windows(2) {
        let d = distance(&w[0], &w[1]);
        if remaining <= d {
            return w[0].lerp(&w[1], if d > 0.0 { remaining / d } else { 0.0 });
        }
        remaining -= d;
    }
    *path.last().unwrap()
}

fn breakpoints(path: &[Vec3]) -> Vec<f64> {
    let total: f64 = path.windows(2).map(|w| distance(&w[0], &w[1])).sum();
    let mut acc = 0.0;
    let mut out = vec![0.0];
    for w in path.windows(2) {
        acc += distance(&w[0], &w[1]);
        out.push(if total > 0.0 { acc / total } else { 1.0 });
    }
    out
}

/// Largest separation of two vehicles progressing in lockstep (equal
/// arclength fraction). Distance between linear motions is convex, so the
/// maximum sits on a breakpoint of either path.
pub fn max_synchronized_distance(p: &[Vec3], q: &[Vec3]) -> f64 {
    let mut fs = breakpoints(p);
    fs.extend(breakpoints(q));
    fs.iter()
        .map(|&f| distance(&along(p, f), &along(q, f)))
        .fold(0.0, f64::max)
}

/// Strip ids and traversal direction per vehicle: a vehicle's k-th strip runs
/// ascending along the plan axis when k is even.
pub type Assignment = Vec<Vec<usize>>;

pub fn traversal(plan: &TransectPlan, strip: usize, k: usize) -> Vec<Vec3> {
    plan.strips[strip].oriented(k % 2 == 0)
}

/// Partitions strips contiguously in order and checks that neighbouring
/// vehicles stay within `comms_range` while working their k-th strips in
/// lockstep.
pub fn assign_transects(
    fleet: &[AuvState],
    plan: &TransectPlan,
    comms_range: f64,
) -> Result<Assignment> {
    assign_strip_ids(fleet, plan, &(0..plan.strips.len()).collect::<Vec<_>>(), comms_range)
}

/// As [`assign_transects`] over a subset of strip ids.
pub fn assign_strip_ids(
    fleet: &[AuvState],
    plan: &TransectPlan,
    strips: &[usize],
    comms_range: f64,
) -> Result<Assignment> {
    if fleet.is_empty() {
        return Err(Error::arg("fleet is empty"));
    }
    let mut out = vec![Vec::new(); fleet.len()];
    if strips.is_empty() {
        return Ok(out);
    }
    let mut start = 0;
    for (a, size) in chunk_sizes(strips.len(), fleet.len()).into_iter().enumerate() {
        out[a] = strips[start..start + size].to_vec();
        start += size;
    }
    for a in 0..fleet.len().saturating_sub(1) {
        let (mine, next) = (&out[a], &out[a + 1]);
        for k in 0..mine.len().min(next.len()) {
            let d = max_synchronized_distance(
                &traversal(plan, mine[k], k),
                &traversal(plan, next[k], k),
            );
            if d > comms_range + 1e-9 {
                return Err(Error::CommsRange {
                    a: fleet[a].id,
                    b: fleet[a + 1].id,
                    distance: d,
                    range: comms_range,
                });
            }
        }
    }
    Ok(out)
}
