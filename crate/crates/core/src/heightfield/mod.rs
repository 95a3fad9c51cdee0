//! Restricted adaptive quadtree height-field over scattered flood datapoints.
//!
//! Nodes do not store their own coordinates. A node is addressed by a
//! [`NodeKey`] on a global lattice anchored at the tree's [`TreeFrame`], so a
//! first-level quadrant keeps its world bounds (bit for bit) when the root is
//! shifted by one quadrant stride and re-parented under a new root.

mod build;
mod dynamic;
mod interp;
mod lod;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Square, Vec2};
use crate::scenario::FloodScenario;

pub use dynamic::UpdateReport;
pub use interp::HeightSampler;
pub use lod::{default_buffer, init_bounds_for_display, FrontierCell, LodFrontier};

/// Deepest supported subdivision level.
pub const MAX_SUPPORTED_DEPTH: u8 = 24;
/// Default subdivision limit.
pub const DEFAULT_MAX_DEPTH: u8 = 14;
/// Maximum pairwise angle between child flow directions for a coarse LoD node.
pub const LOD_MAX_VELOCITY_ANGLE_DEG: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeightfieldError {
    #[error("region holds no datapoints and lies outside the terrain raster")]
    EmptyRegion,
    #[error("point ({x}, {y}) is outside the tree bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("max depth {0} outside 1..=24")]
    InvalidDepth(u8),
    #[error("timepoint {t} outside a series of {count}")]
    TimepointOutOfRange { t: usize, count: usize },
    #[error("bounds must be a finite square with positive side")]
    InvalidBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Flooded,
    Dry,
    Undefined,
    /// Interior node whose descendants disagree on flooded versus dry.
    Mixed,
}

impl CellClass {
    /// Class used for coarse LoD decisions: extrapolated cells act as flooded.
    pub fn lod_class(self) -> CellClass {
        match self {
            CellClass::Undefined => CellClass::Flooded,
            other => other,
        }
    }
}

/// Why an interior node has children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Split {
    Leaf,
    /// More than one datapoint below the depth limit.
    Data,
    /// Forced by the one-level neighbor constraint.
    Balance,
}

/// Leaf value derived only from its own datapoints and the terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LeafBase {
    pub class: CellClass,
    pub elevation: f64,
    pub velocity: Vec2,
}

#[derive(Debug, Clone)]
pub struct QuadNode {
    pub class: CellClass,
    pub elevation: f64,
    pub velocity: Vec2,
    pub lod_renderable: bool,
    pub(crate) count: usize,
    pub(crate) split: Split,
    /// Scenario datapoint indices, ascending; only populated on leaves.
    pub(crate) points: Vec<u32>,
    pub(crate) base: Option<LeafBase>,
    pub(crate) children: Option<Box<[Arc<QuadNode>; 4]>>,
}

impl QuadNode {
    pub(crate) fn leaf(points: Vec<u32>) -> Self {
        Self {
            class: CellClass::Undefined,
            elevation: 0.0,
            velocity: Vec2::zeros(),
            lod_renderable: true,
            count: points.len(),
            split: Split::Leaf,
            points,
            base: None,
            children: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn children(&self) -> Option<&[Arc<QuadNode>; 4]> {
        self.children.as_deref()
    }

    /// Number of datapoints housed in this subtree.
    pub fn datapoint_count(&self) -> usize {
        self.count
    }

    /// Scenario indices of the datapoints housed by a leaf.
    pub fn datapoints(&self) -> &[u32] {
        &self.points
    }
}

/// Lattice address of a node. Depth-0 keys hold the root's quadrant offset;
/// deeper keys are cell indices at that depth relative to the frame anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub depth: u8,
    pub x: i64,
    pub y: i64,
}

impl NodeKey {
    /// Child in slot `q` (0 = SW, 1 = SE, 2 = NW, 3 = NE).
    pub fn child(&self, q: usize) -> NodeKey {
        let (qx, qy) = ((q & 1) as i64, (q >> 1) as i64);
        if self.depth == 0 {
            NodeKey { depth: 1, x: self.x + qx, y: self.y + qy }
        } else {
            NodeKey { depth: self.depth + 1, x: 2 * self.x + qx, y: 2 * self.y + qy }
        }
    }
}

/// Placement of a tree on the global lattice: the root spans quadrant cells
/// `offset..offset + 2` of side `side / 2` measured from `anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeFrame {
    pub anchor: Vec2,
    pub side: f64,
    pub offset: [i64; 2],
}

impl TreeFrame {
    pub fn from_bounds(bounds: Square) -> Self {
        Self { anchor: bounds.min, side: bounds.side, offset: [0, 0] }
    }

    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        Self { offset: [self.offset[0] + dx, self.offset[1] + dy], ..*self }
    }

    pub fn cell_size(&self, depth: u8) -> f64 {
        self.side / (1u64 << depth) as f64
    }

    pub fn root_key(&self) -> NodeKey {
        NodeKey { depth: 0, x: self.offset[0], y: self.offset[1] }
    }

    pub fn bounds(&self) -> Square {
        self.key_bounds(&self.root_key())
    }

    pub fn key_bounds(&self, key: &NodeKey) -> Square {
        if key.depth == 0 {
            let half = self.side * 0.5;
            return Square::new(self.anchor + Vec2::new(key.x as f64 * half, key.y as f64 * half), self.side);
        }
        let cell = self.cell_size(key.depth);
        Square::new(self.anchor + Vec2::new(key.x as f64 * cell, key.y as f64 * cell), cell)
    }

    /// Inclusive index range of cells at `depth` covered by the root.
    pub fn range(&self, depth: u8) -> ([i64; 2], [i64; 2]) {
        if depth == 0 {
            return (self.offset, self.offset);
        }
        let per = 1i64 << (depth - 1);
        let lo = [self.offset[0] * per, self.offset[1] * per];
        (lo, [lo[0] + 2 * per - 1, lo[1] + 2 * per - 1])
    }

    pub fn contains_key(&self, key: &NodeKey) -> bool {
        let (lo, hi) = self.range(key.depth);
        key.x >= lo[0] && key.x <= hi[0] && key.y >= lo[1] && key.y <= hi[1]
    }

    /// Lattice cell of `p` at `depth`, unclamped.
    pub fn lattice_cell(&self, p: Vec2, depth: u8) -> (i64, i64) {
        let cell = self.cell_size(depth.max(1));
        (((p.x - self.anchor.x) / cell).floor() as i64, ((p.y - self.anchor.y) / cell).floor() as i64)
    }
}

/// Slot of the child of `parent` on the path to `target` (deeper than parent).
pub(crate) fn child_slot(parent: &NodeKey, target: &NodeKey) -> usize {
    debug_assert!(target.depth > parent.depth);
    let shift = target.depth - parent.depth - 1;
    let (ax, ay) = (target.x >> shift, target.y >> shift);
    let (qx, qy) = if parent.depth == 0 { (ax - parent.x, ay - parent.y) } else { (ax - 2 * parent.x, ay - 2 * parent.y) };
    debug_assert!((0..2).contains(&qx) && (0..2).contains(&qy));
    (qx + 2 * qy) as usize
}

/// Borrowed node together with its lattice key and world bounds.
#[derive(Debug, Clone, Copy)]
pub struct NodeRef<'a> {
    pub node: &'a QuadNode,
    pub key: NodeKey,
    pub bounds: Square,
}

impl NodeRef<'_> {
    pub fn depth(&self) -> u8 {
        self.key.depth
    }
}

/// Adaptive height-field of one timepoint over a square region.
#[derive(Debug, Clone)]
pub struct HeightFieldQuadtree {
    pub(crate) scenario: Arc<FloodScenario>,
    pub(crate) frame: TreeFrame,
    pub(crate) max_depth: u8,
    pub(crate) timepoint: usize,
    pub(crate) root: Arc<QuadNode>,
}

impl HeightFieldQuadtree {
    pub fn frame(&self) -> TreeFrame {
        self.frame
    }

    pub fn bounds(&self) -> Square {
        self.frame.bounds()
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    pub fn timepoint(&self) -> usize {
        self.timepoint
    }

    pub fn scenario(&self) -> &Arc<FloodScenario> {
        &self.scenario
    }

    pub fn root(&self) -> NodeRef<'_> {
        let key = self.frame.root_key();
        NodeRef { node: &self.root, key, bounds: self.frame.bounds() }
    }

    /// Shared handle of a first-level quadrant, for identity checks.
    pub fn quadrant(&self, slot: usize) -> Option<&Arc<QuadNode>> {
        self.root.children().map(|c| &c[slot])
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(NodeRef<'a>)) {
        let mut stack = vec![(self.root.as_ref(), self.frame.root_key())];
        while let Some((node, key)) = stack.pop() {
            f(NodeRef { node, key, bounds: self.frame.key_bounds(&key) });
            if let Some(children) = node.children() {
                for q in (0..4).rev() {
                    stack.push((children[q].as_ref(), key.child(q)));
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<NodeRef<'_>> {
        let mut out = Vec::new();
        self.visit(|n| {
            if n.node.is_leaf() {
                out.push(n)
            }
        });
        out
    }

    /// Deepest existing node on the path to `key`, stopping at `key` itself.
    pub fn descend(&self, key: &NodeKey) -> Option<NodeRef<'_>> {
        if !self.frame.contains_key(key) {
            return None;
        }
        let mut node = self.root.as_ref();
        let mut at = self.frame.root_key();
        while at.depth < key.depth {
            let Some(children) = node.children() else { break };
            let q = child_slot(&at, key);
            node = children[q].as_ref();
            at = at.child(q);
        }
        Some(NodeRef { node, key: at, bounds: self.frame.key_bounds(&at) })
    }

    /// Leaf containing `p`.
    pub fn leaf_at(&self, p: Vec2) -> Result<NodeRef<'_>, HeightfieldError> {
        if !self.bounds().contains(p) {
            return Err(HeightfieldError::OutOfBounds { x: p.x, y: p.y });
        }
        let (lo, hi) = self.frame.range(self.max_depth);
        let (cx, cy) = self.frame.lattice_cell(p, self.max_depth);
        let key = NodeKey { depth: self.max_depth, x: cx.clamp(lo[0], hi[0]), y: cy.clamp(lo[1], hi[1]) };
        Ok(self.descend(&key).expect("clamped key is inside the frame"))
    }

    pub fn deepest_leaf(&self) -> u8 {
        let mut d = 0;
        self.visit(|n| d = d.max(n.key.depth));
        d
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_| n += 1);
        n
    }

    /// True when both trees have identical structure and bitwise-equal values.
    pub fn same_content(&self, other: &HeightFieldQuadtree) -> bool {
        fn eq(a: &QuadNode, b: &QuadNode) -> bool {
            let values = a.class == b.class
                && a.elevation.to_bits() == b.elevation.to_bits()
                && a.velocity.x.to_bits() == b.velocity.x.to_bits()
                && a.velocity.y.to_bits() == b.velocity.y.to_bits()
                && a.lod_renderable == b.lod_renderable
                && a.count == b.count;
            values
                && match (a.children(), b.children()) {
                    (None, None) => true,
                    (Some(ca), Some(cb)) => ca.iter().zip(cb.iter()).all(|(x, y)| eq(x, y)),
                    _ => false,
                }
        }
        self.frame == other.frame && eq(&self.root, &other.root)
    }

    /// Debug dump as nested `{bounds, depth, class, elevation, velocity, children}`.
    pub fn to_json(&self) -> serde_json::Value {
        fn dump(tree: &HeightFieldQuadtree, node: &QuadNode, key: NodeKey) -> serde_json::Value {
            let b = tree.frame.key_bounds(&key);
            let children: Vec<serde_json::Value> = node
                .children()
                .map(|c| (0..4).map(|q| dump(tree, &c[q], key.child(q))).collect())
                .unwrap_or_default();
            serde_json::json!({
                "bounds": { "min": [b.min.x, b.min.y], "side": b.side },
                "depth": key.depth,
                "class": node.class,
                "elevation": node.elevation,
                "velocity": [node.velocity.x, node.velocity.y],
                "children": children,
            })
        }
        dump(self, &self.root, self.frame.root_key())
    }
}

pub use build::{build_quadtree, build_quadtree_in_frame, classify_cell};

#[cfg(test)]
mod tests;
