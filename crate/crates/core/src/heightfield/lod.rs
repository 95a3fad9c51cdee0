use serde::Serialize;

use super::*;
use crate::geom::{CameraPose, Frustum, Vec3};

/// One node of a LoD cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierCell {
    pub key: NodeKey,
    pub bounds: Square,
    pub class: CellClass,
    pub elevation: f64,
    pub velocity: Vec2,
    pub is_leaf: bool,
}

/// Set of nodes that tile the tree bounds without overlap.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LodFrontier {
    pub cells: Vec<FrontierCell>,
}

impl LodFrontier {
    pub fn max_depth(&self) -> u8 {
        self.cells.iter().map(|c| c.key.depth).max().unwrap_or(0)
    }

    pub fn min_side(&self) -> f64 {
        self.cells.iter().map(|c| c.bounds.side).fold(f64::INFINITY, f64::min)
    }
}

/// Distance from `eye` to the square `bounds` lying at height `z`.
fn distance_to_cell(eye: &Vec3, bounds: &Square, z: f64) -> f64 {
    let horizontal = bounds.distance_to(Vec2::new(eye.x, eye.y));
    horizontal.hypot(eye.z - z)
}

impl HeightFieldQuadtree {
    /// Chooses a cut through the tree: full detail inside `near`, the coarsest
    /// renderable nodes beyond `far`, and a linearly interpolated target depth
    /// in between. Non-renderable nodes are always refined further.
    pub fn select_lod_cut(&self, camera: &CameraPose, near: f64, far: f64) -> LodFrontier {
        self.select_cut(Some(camera), near, far, None)
    }

    /// [`Self::select_lod_cut`] with an optional depth cap: renderable nodes
    /// at depth `cap` or deeper are selected whatever the distance. Without a
    /// camera every node counts as inside `near`.
    pub fn select_cut(&self, camera: Option<&CameraPose>, near: f64, far: f64, cap: Option<u8>) -> LodFrontier {
        let leaf_depth = self.deepest_leaf() as f64;
        let span = (far - near).max(f64::MIN_POSITIVE);
        let mut cells = Vec::new();
        let mut stack = vec![(self.root.as_ref(), self.frame.root_key())];
        while let Some((node, key)) = stack.pop() {
            let bounds = self.frame.key_bounds(&key);
            let select = match node.children() {
                None => true,
                Some(_) if cap.is_some_and(|c| key.depth >= c) && node.lod_renderable => true,
                Some(_) => {
                    let d = camera.map_or(0.0, |c| distance_to_cell(&c.position, &bounds, node.elevation));
                    if !d.is_finite() {
                        node.lod_renderable
                    } else if d < near {
                        false
                    } else {
                        let t = ((d - near) / span).clamp(0.0, 1.0);
                        let target = ((1.0 - t) * leaf_depth).ceil() as u8;
                        node.lod_renderable && key.depth >= target
                    }
                }
            };
            if select {
                cells.push(FrontierCell {
                    key,
                    bounds,
                    class: node.class,
                    elevation: node.elevation,
                    velocity: node.velocity,
                    is_leaf: node.is_leaf(),
                });
            } else if let Some(children) = node.children() {
                for q in (0..4).rev() {
                    stack.push((children[q].as_ref(), key.child(q)));
                }
            }
        }
        LodFrontier { cells }
    }
}

/// Default buffer: a quarter of the frustum's horizontal extent.
pub fn default_buffer(frustum: &Frustum) -> f64 {
    let e = frustum.horizontal_extent();
    0.25 * e.width().max(e.height())
}

/// Square centered on the frustum eye spanning its horizontal extent plus
/// `buffer` on each side.
pub fn init_bounds_for_display(frustum: &Frustum, buffer: f64) -> Square {
    let e = frustum.horizontal_extent();
    let side = e.width().max(e.height()) + 2.0 * buffer;
    Square::centered(Vec2::new(frustum.eye.x, frustum.eye.y), side)
}
