//! Geometry, world state and the pollutant inventory.
//!
//! Coordinates are right-handed meters with the surface at `z = 0` and depth
//! running negative.

use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default depth cap: small vehicles stay within the sunlight zone.
pub const DEFAULT_MAX_DEPTH: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Distance ignoring depth.
    pub fn horizontal_distance(&self, other: &Vec3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point reached moving from `self` towards `target` by at most `step` meters.
    pub fn step_towards(&self, target: &Vec3, step: f64) -> Vec3 {
        let d = distance(self, target);
        if d <= step || d == 0.0 {
            *target
        } else {
            let f = step / d;
            *self + (*target - *self) * f
        }
    }

    pub fn lerp(&self, other: &Vec3, t: f64) -> Vec3 {
        *self + (*other - *self) * t
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (*a - *b).norm()
}

/// Distance from `p` to the segment `a`-`b`.
pub fn distance_to_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = *b - *a;
    let len2 = ab.x * ab.x + ab.y * ab.y + ab.z * ab.z;
    if len2 == 0.0 {
        return distance(p, a);
    }
    let ap = *p - *a;
    let t = ((ap.x * ab.x + ap.y * ab.y + ap.z * ab.z) / len2).clamp(0.0, 1.0);
    distance(p, &a.lerp(b, t))
}

/// The six debris material classes, in canonical index order.
///
/// The index order matters: classifier ties resolve towards the smaller index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaterialClass {
    Paperboard,
    Hdpe,
    Pet,
    Aluminium,
    Ceramic,
    Wood,
}

impl MaterialClass {
    pub const COUNT: usize = 6;
    pub const ALL: [MaterialClass; 6] = [
        MaterialClass::Paperboard,
        MaterialClass::Hdpe,
        MaterialClass::Pet,
        MaterialClass::Aluminium,
        MaterialClass::Ceramic,
        MaterialClass::Wood,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaterialClass::Paperboard => "PAPERBOARD",
            MaterialClass::Hdpe => "HDPE",
            MaterialClass::Pet => "PET",
            MaterialClass::Aluminium => "ALUMINIUM",
            MaterialClass::Ceramic => "CERAMIC",
            MaterialClass::Wood => "WOOD",
        }
    }
}

impl fmt::Display for MaterialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaterialClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown material class '{s}'")))
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Medium {
    Air,
    Water,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Luminosity {
    Ambient,
    Darkness,
}

/// Sensing condition: one cell of the medium x luminosity design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, JsonSchema)]
#[schemars(with = "String")]
pub struct Condition {
    pub medium: Medium,
    pub luminosity: Luminosity,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::new(Medium::Air, Luminosity::Ambient),
        Condition::new(Medium::Air, Luminosity::Darkness),
        Condition::new(Medium::Water, Luminosity::Ambient),
        Condition::new(Medium::Water, Luminosity::Darkness),
    ];

    pub const fn new(medium: Medium, luminosity: Luminosity) -> Self {
        Self { medium, luminosity }
    }

    pub fn index(self) -> usize {
        (self.medium as usize) * 2 + self.luminosity as usize
    }

    /// Label such as `water-ambient`.
    pub fn label(self) -> &'static str {
        match (self.medium, self.luminosity) {
            (Medium::Air, Luminosity::Ambient) => "air-ambient",
            (Medium::Air, Luminosity::Darkness) => "air-darkness",
            (Medium::Water, Luminosity::Ambient) => "water-ambient",
            (Medium::Water, Luminosity::Darkness) => "water-darkness",
        }
    }
}

impl Default for Condition {
    fn default() -> Self {
        Condition::new(Medium::Water, Luminosity::Ambient)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown condition label '{s}'")))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn contains(&self, p: &Vec3) -> bool {
        const EPS: f64 = 1e-9;
        p.x >= self.min.x - EPS
            && p.x <= self.max.x + EPS
            && p.y >= self.min.y - EPS
            && p.y <= self.max.y + EPS
            && p.z >= self.min.z - EPS
            && p.z <= self.max.z + EPS
    }

    pub fn diagonal(&self) -> f64 {
        distance(&self.min, &self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub bounds: Bounds,
    #[serde(default = "default_max_depth")]
    pub max_depth: f64,
    /// Sensing condition label, e.g. `water-ambient`.
    #[serde(default)]
    pub condition: Condition,
}

fn default_max_depth() -> f64 {
    DEFAULT_MAX_DEPTH
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !b.min.is_finite() || !b.max.is_finite() {
            return Err(Error::config("world bounds must be finite"));
        }
        if b.max.x <= b.min.x || b.max.y <= b.min.y {
            return Err(Error::config(
                "world bounds need positive extent on x and y",
            ));
        }
        if b.max.z < b.min.z {
            return Err(Error::config("world bounds have inverted z range"));
        }
        if !(self.max_depth > 0.0) || self.max_depth > DEFAULT_MAX_DEPTH {
            return Err(Error::config(format!(
                "max_depth must be in (0, {DEFAULT_MAX_DEPTH}] m, got {}",
                self.max_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PollutantItem {
    pub id: u32,
    pub position: Vec3,
    pub material: MaterialClass,
    /// Characteristic diameter in meters.
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlumeSource {
    pub position: Vec3,
    pub strength: f64,
    pub decay_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct PlumeField {
    pub sources: Vec<PlumeSource>,
}

impl PlumeField {
    pub fn new(sources: Vec<PlumeSource>) -> Result<Self> {
        for s in &sources {
            if !(s.strength >= 0.0) || !(s.decay_length > 0.0) || !s.position.is_finite() {
                return Err(Error::config(
                    "plume sources need strength >= 0 and decay_length > 0",
                ));
            }
        }
        Ok(Self { sources })
    }

    /// Summed exponential concentration at `p`.
    pub fn concentration(&self, p: &Vec3) -> f64 {
        self.sources
            .iter()
            .map(|s| s.strength * (-distance(p, &s.position) / s.decay_length).exp())
            .sum()
    }
}

pub fn plume_concentration(field: &PlumeField, p: &Vec3) -> f64 {
    field.concentration(p)
}

/// World content: static spec plus the pollutant inventory, kept sorted by id.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    items: Vec<PollutantItem>,
    pub plume: PlumeField,
}

impl World {
    pub fn new(spec: WorldSpec, mut items: Vec<PollutantItem>, plume: PlumeField) -> Result<Self> {
        spec.validate()?;
        items.sort_by_key(|i| i.id);
        for w in items.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::config(format!("duplicate pollutant id {}", w[0].id)));
            }
        }
        for item in &items {
            if !(item.size > 0.0) {
                return Err(Error::config(format!("pollutant {} has size <= 0", item.id)));
            }
            if !spec.bounds.contains(&item.position) {
                return Err(Error::config(format!(
                    "pollutant {} lies outside world bounds",
                    item.id
                )));
            }
        }
        Ok(Self { spec, items, plume })
    }

    pub fn items(&self) -> &[PollutantItem] {
        &self.items
    }

    pub fn item(&self, id: u32) -> Option<&PollutantItem> {
        self.items
            .binary_search_by_key(&id, |i| i.id)
            .ok()
            .map(|ix| &self.items[ix])
    }

    pub fn remove_item(&mut self, id: u32) -> Option<PollutantItem> {
        let ix = self.items.binary_search_by_key(&id, |i| i.id).ok()?;
        Some(self.items.remove(ix))
    }

    /// Items within `radius` of `center`, ordered by id. Linear scan.
    pub fn items_within(&self, center: &Vec3, radius: f64) -> Result<Vec<&PollutantItem>> {
        if !(radius >= 0.0) {
            return Err(Error::arg(format!("radius must be >= 0, got {radius}")));
        }
        Ok(self
            .items
            .iter()
            .filter(|i| distance(center, &i.position) <= radius)
            .collect())
    }
}
