use std::collections::BTreeSet;

use super::geometry::{point_segment_distance, Polygon};
use crate::model::Vec3;

/// Square cells over an area's bounding box; only cells whose centre lies in
/// the polygon count.
#[derive(Debug, Clone)]
pub struct CoverageGrid {
    pub cell_size: f64,
    origin: [f64; 2],
    cols: usize,
    rows: usize,
    inside: Vec<bool>,
    covered: BTreeSet<usize>,
    total: usize,
}

impl CoverageGrid {
    pub fn new(area: &Polygon, cell_size: f64) -> Self {
        let (lo, hi) = area.bbox();
        let cols = ((hi[0] - lo[0]) / cell_size).ceil().max(1.0) as usize;
        let rows = ((hi[1] - lo[1]) / cell_size).ceil().max(1.0) as usize;
        let mut inside = vec![false; cols * rows];
        for r in 0..rows {
            for c in 0..cols {
                let x = lo[0] + (c as f64 + 0.5) * cell_size;
                let y = lo[1] + (r as f64 + 0.5) * cell_size;
                inside[r * cols + c] = area.contains(x, y);
            }
        }
        let total = inside.iter().filter(|&&b| b).count();
        Self {
            cell_size,
            origin: lo,
            cols,
            rows,
            inside,
            covered: BTreeSet::new(),
            total,
        }
    }

    fn centre(&self, c: usize, r: usize) -> [f64; 2] {
        [
            self.origin[0] + (c as f64 + 0.5) * self.cell_size,
            self.origin[1] + (r as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Marks in-area cells whose centre is within `half_width` of the
    /// horizontal projection of segment `a`-`b`. Returns newly covered cells.
    pub fn mark_segment(&mut self, a: &Vec3, b: &Vec3, half_width: f64) -> usize {
        let (pa, pb) = ([a.x, a.y], [b.x, b.y]);
        let to_col = |x: f64| ((x - self.origin[0]) / self.cell_size).floor();
        let to_row = |y: f64| ((y - self.origin[1]) / self.cell_size).floor();
        let c0 = to_col(a.x.min(b.x) - half_width).max(0.0) as usize;
        let c1 = to_col(a.x.max(b.x) + half_width).min(self.cols as f64 - 1.0);
        let r0 = to_row(a.y.min(b.y) - half_width).max(0.0) as usize;
        let r1 = to_row(a.y.max(b.y) + half_width).min(self.rows as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            return 0;
        }
        let mut added = 0;
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let i = r * self.cols + c;
                if self.inside[i]
                    && point_segment_distance(self.centre(c, r), pa, pb) <= half_width
                    && self.covered.insert(i)
                {
                    added += 1;
                }
            }
        }
        added
    }

    pub fn covered_cells(&self) -> usize {
        self.covered.len()
    }

    pub fn total_cells(&self) -> usize {
        self.total
    }

    pub fn fraction(&self) -> f64 {
        coverage_fraction(self)
    }
}

/// Covered cells over in-area cells; 0 for an area with no cells.
pub fn coverage_fraction(grid: &CoverageGrid) -> f64 {
    if grid.total == 0 {
        0.0
    } else {
        grid.covered.len() as f64 / grid.total as f64
    }
}
