use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::geometry::{subtract, AreaSpec, Axis, Constraint, Polygon, EPS};
use crate::error::{Error, Result};
use crate::model::{Vec3, DEFAULT_MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Dimensionality {
    #[serde(rename = "BELT_2D")]
    Belt2d,
    #[serde(rename = "GRID_3D")]
    Grid3d,
}

/// One survey line: waypoints at the ends of each in-area, unconstrained
/// interval, in travel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Strip {
    pub waypoints: Vec<Vec3>,
    /// Lateral coordinate of the line.
    pub offset: f64,
    pub depth: f64,
    pub axis: Axis,
    /// Index of the area the strip was planned for.
    #[serde(default)]
    pub area: usize,
}

impl Strip {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| crate::model::distance(&w[0], &w[1]))
            .sum()
    }

    /// Waypoints sorted by increasing (or decreasing) along-axis coordinate.
    pub fn oriented(&self, ascending: bool) -> Vec<Vec3> {
        let axis = self.axis;
        let mut w = self.waypoints.clone();
        w.sort_by(|a, b| axis.along(a).total_cmp(&axis.along(b)));
        if !ascending {
            w.reverse();
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TransectPlan {
    pub strips: Vec<Strip>,
    pub spacing: f64,
    pub dimensionality: Dimensionality,
    pub axis: Axis,
}

impl TransectPlan {
    pub fn total_length(&self) -> f64 {
        self.strips.iter().map(Strip::length).sum()
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "strips": self.strips.len(),
            "spacing": self.spacing,
            "dimensionality": self.dimensionality,
            "axis": self.axis,
            "total_length": self.total_length(),
        })
    }
}

/// Scenario/request form of planner parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub spacing: f64,
    #[serde(default = "default_dim")]
    pub dimensionality: Dimensionality,
    /// Vertical gap between grid layers; required for `GRID_3D`.
    #[serde(default)]
    pub layer_spacing: Option<f64>,
}

fn default_dim() -> Dimensionality {
    Dimensionality::Belt2d
}

impl PlanSpec {
    pub fn belt(spacing: f64) -> Self {
        Self {
            spacing,
            dimensionality: Dimensionality::Belt2d,
            layer_spacing: None,
        }
    }

    /// Plans every area and concatenates strips in area order.
    pub fn plan(
        &self,
        areas: &[AreaSpec],
        constraints: &[Constraint],
        max_depth: f64,
    ) -> Result<TransectPlan> {
        if areas.is_empty() {
            return Err(Error::Planning("no survey area given".into()));
        }
        let mut out: Option<TransectPlan> = None;
        for (i, area) in areas.iter().enumerate() {
            let mut p = match self.dimensionality {
                Dimensionality::Belt2d => {
                    plan_belt_transects_in(area, self.spacing, constraints, max_depth)?
                }
                Dimensionality::Grid3d => {
                    let layer = self.layer_spacing.ok_or_else(|| {
                        Error::Planning("GRID_3D plans need layer_spacing".into())
                    })?;
                    plan_3d_grid_in(area, self.spacing, layer, constraints, max_depth)?
                }
            };
            for s in &mut p.strips {
                s.area = i;
            }
            match &mut out {
                None => out = Some(p),
                Some(acc) => acc.strips.extend(p.strips),
            }
        }
        Ok(out.expect("at least one area"))
    }
}

/// Lateral offsets of evenly spaced strips centred in `[lo, hi]`.
pub fn strip_offsets(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let extent = hi - lo;
    // Tolerate rounding so 40 / 20 yields 3 lines rather than 2.
    let n = ((extent / spacing) + 1e-9).floor() as usize + 1;
    let leftover = (extent - (n - 1) as f64 * spacing).max(0.0);
    let start = lo + leftover / 2.0;
    (0..n).map(|i| start + i as f64 * spacing).collect()
}

fn belt_at_depth(
    poly: &Polygon,
    spacing: f64,
    depth: f64,
    constraints: &[Constraint],
) -> Vec<Strip> {
    let (lo, hi) = poly.bbox();
    let axis = axis_of(poly);
    let (a, l) = axis.components();
    let mut strips = Vec::new();
    for offset in strip_offsets(lo[l], hi[l], spacing) {
        // Lines on the bounding edge would miss the polygon under the
        // half-open scan rule; probe just inside.
        let probe = offset.clamp(lo[l] + EPS, hi[l] - EPS);
        let inside = poly.scanline(axis, probe);
        let (s_lo, s_hi) = (lo[a] - 1.0, hi[a] + 1.0);
        let cut: Vec<(f64, f64)> = constraints
            .iter()
            .flat_map(|c| c.forbidden(axis, offset, s_lo, s_hi))
            .collect();
        let keep = subtract(&inside, &cut);
        if keep.is_empty() {
            continue;
        }
        let mut waypoints: Vec<Vec3> = keep
            .iter()
            .flat_map(|&(s, e)| [axis.point(s, offset, depth), axis.point(e, offset, depth)])
            .collect();
        if strips.len() % 2 == 1 {
            waypoints.reverse();
        }
        strips.push(Strip {
            waypoints,
            offset,
            depth,
            axis,
            area: 0,
        });
    }
    strips
}

fn axis_of(poly: &Polygon) -> Axis {
    let (lo, hi) = poly.bbox();
    if hi[0] - lo[0] >= hi[1] - lo[1] {
        Axis::X
    } else {
        Axis::Y
    }
}

fn check_spacing(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("{name} must be > 0, got {v}")))
    }
}

/// Boustrophedon strips along the longest bounding-box axis.
pub fn plan_belt_transects(
    area: &AreaSpec,
    spacing: f64,
    constraints: &[Constraint],
) -> Result<TransectPlan> {
    plan_belt_transects_in(area, spacing, constraints, DEFAULT_MAX_DEPTH)
}

pub fn plan_belt_transects_in(
    area: &AreaSpec,
    spacing: f64,
    constraints: &[Constraint],
    max_depth: f64,
) -> Result<TransectPlan> {
    check_spacing("strip spacing", spacing)?;
    let poly = area.validate(max_depth)?;
    for c in constraints {
        c.validate()?;
    }
    let strips = belt_at_depth(&poly, spacing, area.depth_range[0], constraints);
    if strips.is_empty() {
        return Err(Error::Planning(
            "area is empty after constraint clipping".into(),
        ));
    }
    Ok(TransectPlan {
        strips,
        spacing,
        dimensionality: Dimensionality::Belt2d,
        axis: axis_of(&poly),
    })
}

/// Belt plan repeated on layers `z_min, z_min - layer, ...` down to `z_max`.
pub fn plan_3d_grid(
    area: &AreaSpec,
    spacing: f64,
    layer_spacing: f64,
    constraints: &[Constraint],
) -> Result<TransectPlan> {
    plan_3d_grid_in(area, spacing, layer_spacing, constraints, DEFAULT_MAX_DEPTH)
}

pub fn plan_3d_grid_in(
    area: &AreaSpec,
    spacing: f64,
    layer_spacing: f64,
    constraints: &[Constraint],
    max_depth: f64,
) -> Result<TransectPlan> {
    check_spacing("strip spacing", spacing)?;
    check_spacing("layer spacing", layer_spacing)?;
    let poly = area.validate(max_depth)?;
    for c in constraints {
        c.validate()?;
    }
    let [z_min, z_max] = area.depth_range;
    let extent = (z_min - z_max).abs();
    let layers = ((extent / layer_spacing) + 1e-9).floor() as usize + 1;
    let dir = if z_max <= z_min { -1.0 } else { 1.0 };
    let mut strips = Vec::new();
    for k in 0..layers {
        let z = z_min + dir * k as f64 * layer_spacing;
        strips.extend(belt_at_depth(&poly, spacing, z, constraints));
    }
    if strips.is_empty() {
        return Err(Error::Planning(
            "area is empty after constraint clipping".into(),
        ));
    }
    Ok(TransectPlan {
        strips,
        spacing,
        dimensionality: Dimensionality::Grid3d,
        axis: axis_of(&poly),
    })
}
