//! Request bodies and their translation into scenarios.

use abyss_core::mission::{AreaSpec, ChargingStation, Constraint, ControlCommand, FleetSpec, MissionParams, PlanSpec};
use abyss_core::model::{Bounds, Condition, Vec3, DEFAULT_MAX_DEPTH};
use abyss_core::scenario::{Pollutants, Scenario, WorldConfig};
use abyss_core::Error;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Simulated seconds per wall second, or unpaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum TimeScale {
    Unpaced(Unpaced),
    Factor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum Unpaced {
    #[serde(rename = "AS_FAST_AS_POSSIBLE")]
    AsFastAsPossible,
}

impl Default for TimeScale {
    fn default() -> Self {
        TimeScale::Factor(1.0)
    }
}

impl TimeScale {
    pub const FAST: TimeScale = TimeScale::Unpaced(Unpaced::AsFastAsPossible);

    /// Wall seconds per simulated second; `None` when unpaced.
    pub fn wall_per_sim(self) -> Option<f64> {
        match self {
            TimeScale::Unpaced(_) => None,
            TimeScale::Factor(f) => Some(1.0 / f),
        }
    }
}

const DEFAULT_DURATION: f64 = 86_400.0;
const WORLD_MARGIN: f64 = 50.0;

/// Body of `POST /v1/missions`: either a full `scenario`, or an area with
/// fleet and plan parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MissionRequest {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub area: Option<AreaSpec>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub fleet_size: Option<usize>,
    #[serde(default)]
    pub plan: Option<PlanSpec>,
    /// Overrides the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub time_scale: TimeScale,
    /// Simulated seconds; one day by default.
    #[serde(default)]
    pub duration: Option<f64>,
    /// Defaults to one station at the first polygon vertex.
    #[serde(default)]
    pub stations: Vec<ChargingStation>,
    #[serde(default)]
    pub pollutants: Option<Pollutants>,
    #[serde(default)]
    pub mission: Option<MissionParams>,
    #[serde(default)]
    pub condition: Option<Condition>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl MissionRequest {
    pub fn validate_time_scale(&self) -> Result<(), Error> {
        match self.time_scale {
            TimeScale::Factor(f) if !(f.is_finite() && f > 0.0) => {
                Err(invalid(format!("time_scale must be > 0, got {f}")))
            }
            _ => Ok(()),
        }
    }

    /// The scenario this request describes, validated.
    pub fn to_scenario(&self) -> Result<Scenario, Error> {
        self.validate_time_scale()?;
        if let Some(s) = &self.scenario {
            let extra = self.area.is_some()
                || !self.constraints.is_empty()
                || self.fleet_size.is_some()
                || self.plan.is_some()
                || self.duration.is_some()
                || !self.stations.is_empty()
                || self.pollutants.is_some()
                || self.mission.is_some()
                || self.condition.is_some();
            if extra {
                return Err(invalid("give either 'scenario' or area fields, not both"));
            }
            s.validate()?;
            return Ok(s.clone());
        }

        let area = self.area.clone().ok_or_else(|| invalid("missing 'area'"))?;
        let size = self.fleet_size.ok_or_else(|| invalid("missing 'fleet_size'"))?;
        let plan = self.plan.ok_or_else(|| invalid("missing 'plan'"))?;
        if size < 1 {
            return Err(invalid("fleet_size must be >= 1"));
        }
        let poly = area.validate(DEFAULT_MAX_DEPTH)?;
        let stations = if self.stations.is_empty() {
            let [x, y] = poly.vertices()[0];
            vec![ChargingStation::new(Vec3::new(x, y, 0.0), 100.0)]
        } else {
            self.stations.clone()
        };

        let (mut lo, mut hi) = poly.bbox();
        for s in &stations {
            lo = [lo[0].min(s.position.x), lo[1].min(s.position.y)];
            hi = [hi[0].max(s.position.x), hi[1].max(s.position.y)];
        }
        let bounds = Bounds {
            min: Vec3::new(lo[0] - WORLD_MARGIN, lo[1] - WORLD_MARGIN, -DEFAULT_MAX_DEPTH),
            max: Vec3::new(hi[0] + WORLD_MARGIN, hi[1] + WORLD_MARGIN, 0.0),
        };
        let s = Scenario {
            seed: self.seed.unwrap_or(0),
            duration: self.duration.unwrap_or(DEFAULT_DURATION),
            world: WorldConfig {
                bounds,
                max_depth: DEFAULT_MAX_DEPTH,
                condition: self.condition.unwrap_or_default(),
                pollutants: self.pollutants.clone().unwrap_or_default(),
                plumes: vec![],
            },
            links: vec![],
            fleet: Some(FleetSpec::with_size(size)),
            stations,
            areas: vec![area],
            constraints: self.constraints.clone(),
            plan: Some(plan),
            mission: self.mission.clone().unwrap_or_default(),
            offload: None,
            link_probe: None,
            sensing: Default::default(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Body of `POST /v1/missions/{id}/commands`: a [`ControlCommand`] plus an
/// optional client wall-clock `issued_at` (seconds since the Unix epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CommandRequest {
    #[serde(flatten)]
    pub command: ControlCommand,
    #[serde(default)]
    pub issued_at: Option<f64>,
}

impl CommandRequest {
    pub fn parse(body: &[u8]) -> Result<Self, String> {
        let mut v: Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
        let obj = v.as_object_mut().ok_or("command must be a JSON object")?;
        let issued_at = match obj.remove("issued_at") {
            None | Some(Value::Null) => None,
            Some(t) => Some(t.as_f64().ok_or("issued_at must be a number")?),
        };
        let command: ControlCommand = serde_json::from_value(v).map_err(|e| e.to_string())?;
        Ok(Self { command, issued_at })
    }
}
