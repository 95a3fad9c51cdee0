use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::build::{build_subtree, points_in};
use super::*;

/// Outcome of [`HeightFieldQuadtree::update_quadrants`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UpdateReport {
    /// Root shift in quadrant strides.
    pub shift: [i64; 2],
    /// First-level quadrants carried over from the previous root.
    pub retained: usize,
    /// First-level quadrants rebuilt from scenario data.
    pub rebuilt: usize,
}

impl UpdateReport {
    pub fn is_noop(&self) -> bool {
        self.shift == [0, 0]
    }
}

fn axis_shift(pos: f64, min: f64, max: f64, threshold: f64, stride: f64) -> i64 {
    if pos > max - threshold {
        ((pos - (max - threshold)) / stride).ceil().max(1.0) as i64
    } else if pos < min + threshold {
        -(((min + threshold) - pos) / stride).ceil().max(1.0) as i64
    } else {
        0
    }
}

impl HeightFieldQuadtree {
    /// Default trigger distance: one eighth of a quadrant side.
    pub fn default_threshold(&self) -> f64 {
        self.frame.side / 16.0
    }

    /// Re-centers the tree when `screen` comes within `threshold` of the root
    /// boundary. Quadrants that stay inside the shifted root are re-parented
    /// as they are; the vacated ones are built from the scenario in parallel.
    pub fn update_quadrants(&mut self, screen: Vec2, threshold: f64) -> Result<UpdateReport, HeightfieldError> {
        let b = self.bounds();
        let stride = self.frame.side * 0.5;
        let max = b.max();
        let sx = axis_shift(screen.x, b.min.x, max.x, threshold, stride);
        let sy = axis_shift(screen.y, b.min.y, max.y, threshold, stride);
        if sx == 0 && sy == 0 {
            return Ok(UpdateReport { shift: [0, 0], retained: 0, rebuilt: 0 });
        }
        let new_frame = self.frame.shifted(sx, sy);
        if sx.abs() > 1 || sy.abs() > 1 || self.root.is_leaf() {
            *self = build_quadtree_in_frame(&self.scenario, self.timepoint, new_frame, self.max_depth)?;
            return Ok(UpdateReport { shift: [sx, sy], retained: 0, rebuilt: 4 });
        }

        let placeholder = Arc::new(QuadNode::leaf(Vec::new()));
        let old_root = Arc::unwrap_or_clone(std::mem::replace(&mut self.root, placeholder));
        let mut old: [Option<Arc<QuadNode>>; 4] = (*old_root.children.expect("interior root")).map(Some);
        let old_offset = self.frame.offset;

        let mut slots: Vec<Option<Arc<QuadNode>>> = vec![None, None, None, None];
        let mut vacated = Vec::new();
        for (q, slot) in slots.iter_mut().enumerate() {
            let key = new_frame.root_key().child(q);
            let (ox, oy) = (key.x - old_offset[0], key.y - old_offset[1]);
            if (0..2).contains(&ox) && (0..2).contains(&oy) {
                let mut node = old[(ox + 2 * oy) as usize].take().expect("each old quadrant used once");
                strip_balance(&mut node);
                *slot = Some(node);
            } else {
                vacated.push((q, key));
            }
        }
        drop(old);

        let scenario = self.scenario.clone();
        let max_depth = self.max_depth;
        let built: Vec<(usize, Arc<QuadNode>)> = vacated
            .par_iter()
            .map(|&(q, key)| (q, Arc::new(build_subtree(key, points_in(&scenario, &new_frame, max_depth, &key), max_depth))))
            .collect();
        let rebuilt = built.len();
        for (q, node) in built {
            slots[q] = Some(node);
        }
        let children: [Arc<QuadNode>; 4] =
            slots.into_iter().map(|s| s.expect("slot filled")).collect::<Vec<_>>().try_into().expect("four");
        let count: usize = children.iter().map(|c| c.count).sum();

        self.frame = new_frame;
        self.root = if count <= 1 {
            let mut pts = Vec::new();
            for c in &children {
                gather_points(c, &mut pts);
            }
            pts.sort_unstable();
            Arc::new(QuadNode::leaf(pts))
        } else {
            Arc::new(QuadNode {
                split: Split::Data,
                count,
                points: Vec::new(),
                children: Some(Box::new(children)),
                ..QuadNode::leaf(Vec::new())
            })
        };
        self.rebalance();
        self.finalize()?;
        Ok(UpdateReport { shift: [sx, sy], retained: 4 - rebuilt, rebuilt })
    }
}

pub(crate) fn gather_points(node: &QuadNode, out: &mut Vec<u32>) {
    match node.children() {
        None => out.extend_from_slice(&node.points),
        Some(c) => c.iter().for_each(|x| gather_points(x, out)),
    }
}

/// Undoes balance-only splits so they can be recomputed against the new neighbors.
fn strip_balance(node: &mut Arc<QuadNode>) {
    if node.is_leaf() {
        return;
    }
    if node.split == Split::Balance {
        let mut pts = Vec::new();
        gather_points(node, &mut pts);
        pts.sort_unstable();
        *node = Arc::new(QuadNode::leaf(pts));
        return;
    }
    let n = Arc::make_mut(node);
    for c in n.children.as_mut().expect("interior").iter_mut() {
        strip_balance(c);
    }
}
