//! Bilinear interpolation over a uniform lattice at a chosen level.
//!
//! The value of a lattice cell at depth `d` is the stored value of the node at
//! that address when it exists (interior nodes already hold the average of
//! their children). If the address falls inside a coarser terminal node, the
//! value is upsampled: it is the bilinear interpolation at level `d - 1`,
//! evaluated at the cell's center. Indices are clamped at the root edge, so
//! the field is continuous everywhere inside the bounds.

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use super::*;

type Value = [f64; 3];

/// Interpolating reader with a memo of resolved lattice cells. Reuse one
/// sampler for batches of queries against the same tree.
pub struct HeightSampler<'a> {
    tree: &'a HeightFieldQuadtree,
    level: u8,
    frontier: Option<HashSet<NodeKey>>,
    memo: HashMap<NodeKey, Value>,
}

impl<'a> HeightSampler<'a> {
    /// Sampler at lattice level `lod` (clamped to the tree's max depth).
    pub fn new(tree: &'a HeightFieldQuadtree, lod: u8) -> Self {
        Self { tree, level: lod.min(tree.max_depth), frontier: None, memo: HashMap::default() }
    }

    /// Sampler that treats `frontier` nodes as terminal and samples at the
    /// frontier's deepest level.
    pub fn for_frontier(tree: &'a HeightFieldQuadtree, frontier: &LodFrontier) -> Self {
        let level = frontier.cells.iter().map(|c| c.key.depth).max().unwrap_or(0);
        let set = frontier.cells.iter().filter(|c| !c.is_leaf).map(|c| c.key).collect();
        Self { tree, level, frontier: Some(set), memo: HashMap::default() }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Elevation and velocity at `p`.
    pub fn sample(&mut self, p: Vec2) -> Result<(f64, Vec2), HeightfieldError> {
        if !(p.x.is_finite() && p.y.is_finite()) || !self.tree.bounds().contains(p) {
            return Err(HeightfieldError::OutOfBounds { x: p.x, y: p.y });
        }
        let v = self.interp(self.level, p);
        Ok((v[0], Vec2::new(v[1], v[2])))
    }

    pub fn height(&mut self, p: Vec2) -> Result<f64, HeightfieldError> {
        self.sample(p).map(|s| s.0)
    }

    pub fn velocity(&mut self, p: Vec2) -> Result<Vec2, HeightfieldError> {
        self.sample(p).map(|s| s.1)
    }

    /// Like [`Self::sample`] but clamps `p` into the bounds first.
    pub fn sample_clamped(&mut self, p: Vec2) -> (f64, Vec2) {
        let b = self.tree.bounds();
        let max = b.max();
        let q = Vec2::new(p.x.clamp(b.min.x, max.x), p.y.clamp(b.min.y, max.y));
        let v = self.interp(self.level, q);
        (v[0], Vec2::new(v[1], v[2]))
    }

    /// [`Self::sample_clamped`] on the lattice at `level` instead of the
    /// sampler's own level.
    pub fn sample_clamped_at(&mut self, p: Vec2, level: u8) -> (f64, Vec2) {
        let b = self.tree.bounds();
        let max = b.max();
        let q = Vec2::new(p.x.clamp(b.min.x, max.x), p.y.clamp(b.min.y, max.y));
        let v = self.interp(level.min(self.tree.max_depth), q);
        (v[0], Vec2::new(v[1], v[2]))
    }

    fn interp(&mut self, level: u8, p: Vec2) -> Value {
        let frame = self.tree.frame;
        if level == 0 {
            return self.cell(frame.root_key());
        }
        let cell = frame.cell_size(level);
        let u = (p.x - frame.anchor.x) / cell - 0.5;
        let w = (p.y - frame.anchor.y) / cell - 0.5;
        let (i0, j0) = (u.floor(), w.floor());
        let (fx, fy) = (u - i0, w - j0);
        let (i0, j0) = (i0 as i64, j0 as i64);
        let (lo, hi) = frame.range(level);
        let cx = |i: i64| i.clamp(lo[0], hi[0]);
        let cy = |j: i64| j.clamp(lo[1], hi[1]);
        let key = |i: i64, j: i64| NodeKey { depth: level, x: cx(i), y: cy(j) };
        let v00 = self.cell(key(i0, j0));
        let v10 = self.cell(key(i0 + 1, j0));
        let v01 = self.cell(key(i0, j0 + 1));
        let v11 = self.cell(key(i0 + 1, j0 + 1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let bottom = v00[c] + (v10[c] - v00[c]) * fx;
            let top = v01[c] + (v11[c] - v01[c]) * fx;
            out[c] = bottom + (top - bottom) * fy;
        }
        out
    }

    fn cell(&mut self, key: NodeKey) -> Value {
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let frame = self.tree.frame;
        let mut node = self.tree.root.as_ref();
        let mut at = frame.root_key();
        let v = loop {
            if at.depth == key.depth {
                break [node.elevation, node.velocity.x, node.velocity.y];
            }
            let terminal = match (&self.frontier, node.children()) {
                (_, None) => true,
                (Some(set), Some(_)) => set.contains(&at),
                (None, Some(_)) => false,
            };
            if terminal {
                let center = frame.key_bounds(&key).center();
                break self.interp(key.depth - 1, center);
            }
            let q = child_slot(&at, &key);
            node = &node.children().expect("interior")[q];
            at = at.child(q);
        };
        self.memo.insert(key, v);
        v
    }
}

impl HeightFieldQuadtree {
    /// Water elevation at `p` using the lattice at level `lod`.
    pub fn interpolate_height(&self, p: Vec2, lod: u8) -> Result<f64, HeightfieldError> {
        HeightSampler::new(self, lod).height(p)
    }

    /// Tidal velocity at `p`; dry cells contribute zero.
    pub fn interpolate_velocity(&self, p: Vec2, lod: u8) -> Result<Vec2, HeightfieldError> {
        HeightSampler::new(self, lod).velocity(p)
    }

    pub fn sampler(&self, lod: u8) -> HeightSampler<'_> {
        HeightSampler::new(self, lod)
    }
}
