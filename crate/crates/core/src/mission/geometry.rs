use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Tolerance for treating positions as identical or boundary-touching.
pub const EPS: f64 = 1e-9;

/// A simple planar polygon in surface coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pts: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - EPS
        && p[0] <= a[0].max(b[0]) + EPS
        && p[1] >= a[1].min(b[1]) - EPS
        && p[1] <= a[1].max(b[1]) + EPS
}

/// Closed-segment intersection test, collinear overlaps included.
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
    {
        return true;
    }
    (d1.abs() <= EPS && on_segment(a, c, d))
        || (d2.abs() <= EPS && on_segment(b, c, d))
        || (d3.abs() <= EPS && on_segment(c, a, b))
        || (d4.abs() <= EPS && on_segment(d, a, b))
}

impl Polygon {
    /// Validates vertex count, finiteness, non-zero area and simplicity.
    pub fn new(vertices: &[Vec3]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::arg(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("polygon has non-finite vertices"));
        }
        let pts: Vec<[f64; 2]> = vertices.iter().map(|v| [v.x, v.y]).collect();
        let poly = Self { pts };
        if poly.area() <= EPS {
            return Err(Error::arg("polygon has zero area"));
        }
        let n = poly.pts.len();
        for i in 0..n {
            let (a, b) = poly.edge(i);
            if (a[0] - b[0]).hypot(a[1] - b[1]) <= EPS {
                return Err(Error::arg(format!("polygon has a repeated vertex at index {i}")));
            }
            for j in i + 1..n {
                // Neighbouring edges share a vertex by construction.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = poly.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::arg(format!(
                        "polygon is self-intersecting (edges {i} and {j})"
                    )));
                }
            }
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.pts
    }

    pub fn edge(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.pts[i], self.pts[(i + 1) % self.pts.len()])
    }

    pub fn area(&self) -> f64 {
        let n = self.pts.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        0.5 * twice.abs()
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Even-odd containment; boundary points may fall either way.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = self.pts.len();
        let mut j = n - 1;
        for i in 0..n {
            let (pi, pj) = (self.pts[i], self.pts[j]);
            if (pi[1] > y) != (pj[1] > y) {
                let xc = pi[0] + (y - pi[1]) / (pj[1] - pi[1]) * (pj[0] - pi[0]);
                if x < xc {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Horizontal distance from a point to the polygon; zero inside.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            return 0.0;
        }
        (0..self.pts.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                point_segment_distance([x, y], a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Sorted, disjoint intervals of `along` where the line
    /// `{axis coordinate = along, other coordinate = offset}` is inside.
    pub fn scanline(&self, axis: Axis, offset: f64) -> Vec<(f64, f64)> {
        let (a, l) = axis.components();
        let mut hits: Vec<f64> = Vec::new();
        for i in 0..self.pts.len() {
            let (p, q) = self.edge(i);
            // Half-open rule so vertices on the line count once.
            if (p[l] <= offset) != (q[l] <= offset) {
                let t = (offset - p[l]) / (q[l] - p[l]);
                hits.push(p[a] + t * (q[a] - p[a]));
            }
        }
        hits.sort_by(f64::total_cmp);
        hits.chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .filter(|(s, e)| e - s > EPS)
            .collect()
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * ab[0]).hypot(p[1] - a[1] - t * ab[1])
}

/// Direction strips run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    /// Indices of the along-strip and lateral coordinates.
    pub fn components(self) -> (usize, usize) {
        match self {
            Axis::X => (0, 1),
            Axis::Y => (1, 0),
        }
    }

    pub fn point(self, along: f64, lateral: f64, z: f64) -> Vec3 {
        match self {
            Axis::X => Vec3::new(along, lateral, z),
            Axis::Y => Vec3::new(lateral, along, z),
        }
    }

    pub fn along(self, p: &Vec3) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }

    pub fn lateral(self, p: &Vec3) -> f64 {
        match self {
            Axis::X => p.y,
            Axis::Y => p.x,
        }
    }
}

/// Survey area: surface polygon plus a depth band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AreaSpec {
    /// Vertices in order; `z` is ignored.
    pub polygon: Vec<Vec3>,
    /// `[z_min, z_max]`, both `<= 0`. Belt plans run at `z_min`; grids
    /// descend from `z_min` towards `z_max`.
    #[serde(default)]
    pub depth_range: [f64; 2],
}

impl AreaSpec {
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, depth_range: [f64; 2]) -> Self {
        Self {
            polygon: vec![
                Vec3::new(x0, y0, 0.0),
                Vec3::new(x1, y0, 0.0),
                Vec3::new(x1, y1, 0.0),
                Vec3::new(x0, y1, 0.0),
            ],
            depth_range,
        }
    }

    pub fn validate(&self, max_depth: f64) -> Result<Polygon> {
        let [a, b] = self.depth_range;
        if !(a.is_finite() && b.is_finite()) || a > 0.0 || b > 0.0 {
            return Err(Error::arg(format!(
                "depth_range [{a}, {b}] must be finite and <= 0"
            )));
        }
        if a.abs() > max_depth || b.abs() > max_depth {
            return Err(Error::arg(format!(
                "depth_range [{a}, {b}] exceeds max depth {max_depth} m"
            )));
        }
        Polygon::new(&self.polygon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintKind {
    MinStandoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Position(Vec3),
    /// Polygon vertices; `z` is ignored.
    Region(Vec<Vec3>),
}

/// Keep-out rule; distances are horizontal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    #[serde(default = "default_kind")]
    pub kind: ConstraintKind,
    pub reference: Reference,
    pub distance: f64,
}

fn default_kind() -> ConstraintKind {
    ConstraintKind::MinStandoff
}

impl Constraint {
    pub fn standoff_point(p: Vec3, distance: f64) -> Self {
        Self {
            kind: ConstraintKind::MinStandoff,
            reference: Reference::Position(p),
            distance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance.is_finite() && self.distance >= 0.0) {
            return Err(Error::arg(format!(
                "constraint distance {} must be >= 0",
                self.distance
            )));
        }
        match &self.reference {
            Reference::Position(p) if !p.is_finite() => {
                Err(Error::arg("constraint position is not finite"))
            }
            Reference::Region(vs) => Polygon::new(vs).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn clearance(&self, p: &Vec3) -> f64 {
        match &self.reference {
            Reference::Position(r) => p.horizontal_distance(r),
            Reference::Region(vs) => Polygon::new(vs)
                .map(|poly| poly.distance(p.x, p.y))
                .unwrap_or(f64::INFINITY),
        }
    }

    /// True when `p` is closer than the standoff distance.
    pub fn violated_by(&self, p: &Vec3) -> bool {
        self.clearance(p) < self.distance - 1e-6
    }

    /// Sorted intervals of `along` inside `[lo, hi]` that are forbidden on the
    /// given scanline.
    pub fn forbidden(&self, axis: Axis, offset: f64, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let d = self.distance;
        let mut out = Vec::new();
        match &self.reference {
            Reference::Position(r) => {
                let lat = offset - axis.lateral(r);
                if lat.abs() < d {
                    let half = (d * d - lat * lat).sqrt();
                    let c = axis.along(r);
                    out.push((c - half, c + half));
                }
            }
            Reference::Region(vs) => {
                let Ok(poly) = Polygon::new(vs) else {
                    return out;
                };
                out.extend(poly.scanline(axis, offset));
                for i in 0..poly.pts.len() {
                    let (a, b) = poly.edge(i);
                    if let Some(iv) = sublevel_interval(axis, offset, a, b, d, lo, hi) {
                        out.push(iv);
                    }
                }
            }
        }
        merge(
            out.into_iter()
                .map(|(s, e)| (s.max(lo), e.min(hi)))
                .filter(|(s, e)| e > s)
                .collect(),
        )
    }
}

/// `{s in [lo, hi] : dist(line(s), segment ab) < d}`; one interval because the
/// distance is convex in `s`.
fn sublevel_interval(
    axis: Axis,
    offset: f64,
    a: [f64; 2],
    b: [f64; 2],
    d: f64,
    lo: f64,
    hi: f64,
) -> Option<(f64, f64)> {
    let (ai, li) = axis.components();
    let f = |s: f64| {
        let mut p = [0.0; 2];
        p[ai] = s;
        p[li] = offset;
        point_segment_distance(p, a, b)
    };
    // The minimum lies near the segment's along-extent, clamped to the window.
    let (mut l, mut r) = (lo, hi);
    for _ in 0..200 {
        let m1 = l + (r - l) / 3.0;
        let m2 = r - (r - l) / 3.0;
        if f(m1) <= f(m2) {
            r = m2;
        } else {
            l = m1;
        }
    }
    let m = 0.5 * (l + r);
    if f(m) >= d {
        return None;
    }
    let bisect = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if f(mid) < d {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    let start = if f(lo) < d { lo } else { bisect(m, lo) };
    let end = if f(hi) < d { hi } else { bisect(m, hi) };
    Some((start, end))
}

/// Unions overlapping intervals.
pub fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// `keep` minus the union of `cut`, dropping slivers.
pub fn subtract(keep: &[(f64, f64)], cut: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let cut = merge(cut.to_vec());
    let mut out = Vec::new();
    for &(s, e) in keep {
        let mut cur = s;
        for &(cs, ce) in &cut {
            if ce <= cur || cs >= e {
                continue;
            }
            if cs > cur {
                out.push((cur, cs));
            }
            cur = cur.max(ce);
        }
        if cur < e {
            out.push((cur, e));
        }
    }
    out.retain(|(s, e)| e - s > 1e-6);
    out
}
