//! Visibility grid: per-cell obstacle columns, segment occlusion by grid
//! traversal, clearance queries, and the shoreline distance field.

use serde::{Deserialize, Serialize};

use crate::geom::{polygon_contains, segments_intersect, Aabb2, Building, Vec2, Vec3};
use crate::scenario::{FloodScenario, GridSpec, OffshoreMask};

/// Raster of obstacle columns. Each cell is a cuboid from −∞ up to
/// `heights[row * cols + col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityGrid {
    pub spec: GridSpec,
    pub heights: Vec<f64>,
    pub terrain: Vec<f64>,
}

/// True when the closed polygon and the open rectangle share area.
pub fn polygon_overlaps_rect(ring: &[Vec2], rect: &Aabb2) -> bool {
    if ring.iter().any(|p| p.x > rect.min.x && p.x < rect.max.x && p.y > rect.min.y && p.y < rect.max.y) {
        return true;
    }
    let corners = [rect.min, Vec2::new(rect.max.x, rect.min.y), rect.max, Vec2::new(rect.min.x, rect.max.y)];
    if polygon_contains(ring, rect.center()) || corners.iter().any(|c| polygon_contains(ring, *c)) {
        return true;
    }
    (0..ring.len()).any(|i| {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        (0..4).any(|k| segments_intersect(a, b, corners[k], corners[(k + 1) % 4]))
    })
}

impl VisibilityGrid {
    /// Cells of `cell_size` covering the scenario bounds. The terrain of a
    /// cell is its highest DEM sample; a building overlapping the cell
    /// raises the column to that terrain plus the building height.
    pub fn build(scenario: &FloodScenario, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "visibility cell size must be positive");
        let b = scenario.bounds;
        let cols = ((b.width() / cell_size).ceil() as usize).max(1);
        let rows = ((b.height() / cell_size).ceil() as usize).max(1);
        let spec = GridSpec { origin: b.min, cell_size, rows, cols };
        let terrain: Vec<f64> = (0..rows * cols)
            .map(|i| scenario.dem.max_over(&cell_rect(&spec, i / cols, i % cols)))
            .collect();
        let mut heights = terrain.clone();
        for building in &scenario.buildings {
            rasterize(&spec, building, &terrain, &mut heights);
        }
        Self { spec, heights, terrain }
    }

    pub fn height(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.spec.cols + col]
    }

    pub fn extent(&self) -> Aabb2 {
        self.spec.extent()
    }

    pub fn cell_rect(&self, row: usize, col: usize) -> Aabb2 {
        cell_rect(&self.spec, row, col)
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_terrain(&self) -> f64 {
        self.terrain.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Parameter in `[0, 1]` of the first point where segment `a → b` dips
    /// strictly below a column, walking cells in order along the segment.
    pub fn first_hit(&self, a: Vec3, b: Vec3) -> Option<f64> {
        let mut hit = None;
        self.traverse(a, b, |row, col, t0, t1| {
            let h = self.height(row, col);
            let (z0, z1) = (a.z + (b.z - a.z) * t0, a.z + (b.z - a.z) * t1);
            if z0 < h {
                hit = Some(t0);
            } else if z1 < h {
                hit = Some(t0 + (t1 - t0) * (z0 - h) / (z0 - z1));
            }
            hit.is_none()
        });
        hit
    }

    pub fn segment_blocked(&self, a: Vec3, b: Vec3) -> bool {
        self.first_hit(a, b).is_some()
    }

    /// Grid traversal of the 2D projection of `a → b`. Calls `visit(row,
    /// col, t_enter, t_exit)` per cell in order until it returns false.
    fn traverse(&self, a: Vec3, b: Vec3, mut visit: impl FnMut(usize, usize, f64, f64) -> bool) {
        let spec = &self.spec;
        let e = spec.extent();
        let (p, d) = (a.xy(), b.xy() - a.xy());
        // clip the parameter range to the grid extent
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..2 {
            if d[k] == 0.0 {
                if p[k] < e.min[k] || p[k] > e.max[k] {
                    return;
                }
            } else {
                let (mut lo, mut hi) = ((e.min[k] - p[k]) / d[k], (e.max[k] - p[k]) / d[k]);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
        }
        if t0 > t1 {
            return;
        }
        let start = p + d * t0;
        let cell = |v: f64, k: usize, n: usize| (((v - spec.origin[k]) / spec.cell_size).floor().max(0.0) as usize).min(n - 1);
        let (mut col, mut row) = (cell(start.x, 0, spec.cols), cell(start.y, 1, spec.rows));
        let step = [d.x.signum() as i64, d.y.signum() as i64];
        let boundary = |idx: usize, k: usize| {
            let edge = if step[k] > 0 { idx + 1 } else { idx };
            spec.origin[k] + edge as f64 * spec.cell_size
        };
        let next_t = |idx: usize, k: usize| if step[k] == 0 { f64::INFINITY } else { (boundary(idx, k) - p[k]) / d[k] };
        let mut t = t0;
        loop {
            let tx = next_t(col, 0);
            let ty = next_t(row, 1);
            let exit = tx.min(ty).min(t1);
            if !visit(row, col, t, exit) || exit >= t1 {
                return;
            }
            if tx <= ty {
                let c = col as i64 + step[0];
                if c < 0 || c >= spec.cols as i64 {
                    return;
                }
                col = c as usize;
            }
            if ty <= tx {
                let r = row as i64 + step[1];
                if r < 0 || r >= spec.rows as i64 {
                    return;
                }
                row = r as usize;
            }
            t = exit;
        }
    }

    /// Highest column whose footprint lies within `clearance` of `p`, or
    /// −∞ when no cell is that close.
    pub fn clearance_height(&self, p: Vec2, clearance: f64) -> f64 {
        let spec = &self.spec;
        let lo = ((p - spec.origin).map(|v| v - clearance) / spec.cell_size).map(f64::floor);
        let hi = ((p - spec.origin).map(|v| v + clearance) / spec.cell_size).map(f64::floor);
        let (c0, c1) = (lo.x.max(0.0) as i64, (hi.x as i64).min(spec.cols as i64 - 1));
        let (r0, r1) = (lo.y.max(0.0) as i64, (hi.y as i64).min(spec.rows as i64 - 1));
        let mut best = f64::NEG_INFINITY;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let rect = self.cell_rect(r as usize, c as usize);
                let dx = (rect.min.x - p.x).max(p.x - rect.max.x).max(0.0);
                let dy = (rect.min.y - p.y).max(p.y - rect.max.y).max(0.0);
                if dx.hypot(dy) <= clearance {
                    best = best.max(self.height(r as usize, c as usize));
                }
            }
        }
        best
    }

    /// Whether a point fails to keep `clearance` from every column.
    pub fn point_collides(&self, p: Vec3, clearance: f64) -> bool {
        p.z - clearance < self.clearance_height(p.xy(), clearance)
    }
}

fn cell_rect(spec: &GridSpec, row: usize, col: usize) -> Aabb2 {
    let min = spec.origin + Vec2::new(col as f64, row as f64) * spec.cell_size;
    Aabb2::new(min, min + Vec2::repeat(spec.cell_size))
}

fn rasterize(spec: &GridSpec, building: &Building, terrain: &[f64], heights: &mut [f64]) {
    let bb = building.bbox();
    let idx = |v: f64, k: usize, n: usize| (((v - spec.origin[k]) / spec.cell_size).floor().clamp(0.0, (n - 1) as f64)) as usize;
    for row in idx(bb.min.y, 1, spec.rows)..=idx(bb.max.y, 1, spec.rows) {
        for col in idx(bb.min.x, 0, spec.cols)..=idx(bb.max.x, 0, spec.cols) {
            if polygon_overlaps_rect(&building.footprint, &cell_rect(spec, row, col)) {
                let i = row * spec.cols + col;
                heights[i] = heights[i].max(terrain[i] + building.height);
            }
        }
    }
}

/// Exact squared Euclidean distance transform of a 1D sampled function.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    let mut first = None;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        match first {
            None => {
                first = Some(q);
                v[0] = q;
                k = 0;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            }
            Some(_) => {
                let mut s = inter(q, v[k]);
                while s <= z[k] {
                    k -= 1;
                    s = inter(q, v[k]);
                }
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
        }
    }
    if first.is_none() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

/// Distance in cells from every cell to the nearest cell where `target`
/// holds; infinite when no cell qualifies.
pub fn distance_transform(rows: usize, cols: usize, target: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if target(r, c) {
                g[r * cols + c] = 0.0;
            }
        }
    }
    let mut buf = vec![0.0; rows.max(cols)];
    for r in 0..rows {
        let row = g[r * cols..(r + 1) * cols].to_vec();
        edt_1d(&row, &mut buf[..cols]);
        g[r * cols..(r + 1) * cols].copy_from_slice(&buf[..cols]);
    }
    for c in 0..cols {
        let col: Vec<f64> = (0..rows).map(|r| g[r * cols + c]).collect();
        edt_1d(&col, &mut buf[..rows]);
        for r in 0..rows {
            g[r * cols + c] = buf[r].sqrt();
        }
    }
    g
}

/// Signed distance to the shoreline in meters: positive on land, negative
/// offshore.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoreField {
    pub spec: GridSpec,
    pub signed: Vec<f64>,
}

impl ShoreField {
    pub fn from_mask(mask: &OffshoreMask) -> Self {
        let s = mask.spec;
        let to_sea = distance_transform(s.rows, s.cols, |r, c| mask.get(r, c));
        let to_land = distance_transform(s.rows, s.cols, |r, c| !mask.get(r, c));
        let signed = to_sea
            .iter()
            .zip(&to_land)
            .map(|(&a, &b)| {
                let v = if a > 0.0 { a - 0.5 } else { 0.5 - b };
                if v.is_finite() { v * s.cell_size } else { 0.0 }
            })
            .collect();
        Self { spec: s, signed }
    }

    fn at(&self, r: i64, c: i64) -> f64 {
        let r = r.clamp(0, self.spec.rows as i64 - 1) as usize;
        let c = c.clamp(0, self.spec.cols as i64 - 1) as usize;
        self.signed[r * self.spec.cols + c]
    }

    /// Bilinear sample at `p`, clamped to the raster.
    pub fn sample(&self, p: Vec2) -> f64 {
        let g = (p - self.spec.origin) / self.spec.cell_size - Vec2::repeat(0.5);
        let (c0, r0) = (g.x.floor(), g.y.floor());
        let (fx, fy) = (g.x - c0, g.y - r0);
        let (c0, r0) = (c0 as i64, r0 as i64);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        lerp(
            lerp(self.at(r0, c0), self.at(r0, c0 + 1), fx),
            lerp(self.at(r0 + 1, c0), self.at(r0 + 1, c0 + 1), fx),
            fy,
        )
    }

    /// Unit ground direction toward the shoreline from `p`, or zero where
    /// the field is flat.
    pub fn toward_shore(&self, p: Vec2) -> Vec2 {
        let h = self.spec.cell_size * 0.5;
        let grad = Vec2::new(
            self.sample(p + Vec2::new(h, 0.0)) - self.sample(p - Vec2::new(h, 0.0)),
            self.sample(p + Vec2::new(0.0, h)) - self.sample(p - Vec2::new(0.0, h)),
        );
        let s = self.sample(p);
        let dir = -grad * s.signum();
        if dir.norm() > 1e-12 {
            dir.normalize()
        } else {
            Vec2::zeros()
        }
    }
}
