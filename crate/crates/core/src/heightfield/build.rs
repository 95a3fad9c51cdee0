use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::*;
use crate::geom::Aabb2;
use crate::scenario::Sample;

/// Datapoint reference with its lattice cell at max depth.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointRef {
    pub index: u32,
    pub cell: (i64, i64),
}

const PARALLEL_SPLIT_POINTS: usize = 8192;

/// Builds the height-field of `timepoint` over `bounds`.
pub fn build_quadtree(
    scenario: &Arc<FloodScenario>,
    timepoint: usize,
    bounds: Square,
    max_depth: u8,
) -> Result<HeightFieldQuadtree, HeightfieldError> {
    build_quadtree_in_frame(scenario, timepoint, TreeFrame::from_bounds(bounds), max_depth)
}

/// Builds a tree whose root occupies `frame.bounds()`.
pub fn build_quadtree_in_frame(
    scenario: &Arc<FloodScenario>,
    timepoint: usize,
    frame: TreeFrame,
    max_depth: u8,
) -> Result<HeightFieldQuadtree, HeightfieldError> {
    if max_depth == 0 || max_depth > MAX_SUPPORTED_DEPTH {
        return Err(HeightfieldError::InvalidDepth(max_depth));
    }
    if !(frame.side.is_finite() && frame.side > 0.0 && frame.anchor.iter().all(|v| v.is_finite())) {
        return Err(HeightfieldError::InvalidBounds);
    }
    if timepoint >= scenario.timepoints() {
        return Err(HeightfieldError::TimepointOutOfRange { t: timepoint, count: scenario.timepoints() });
    }
    let points = points_in(scenario, &frame, max_depth, &frame.root_key());
    let root = build_subtree(frame.root_key(), points, max_depth);
    let mut tree = HeightFieldQuadtree { scenario: scenario.clone(), frame, max_depth, timepoint, root: Arc::new(root) };
    tree.rebalance();
    tree.finalize()?;
    Ok(tree)
}

/// Datapoints whose max-depth lattice cell lies under `key`, ascending by index.
pub(crate) fn points_in(scenario: &FloodScenario, frame: &TreeFrame, max_depth: u8, key: &NodeKey) -> Vec<PointRef> {
    let (lo, hi) = frame.range(max_depth);
    let shift = max_depth - key.depth.max(1);
    let inside = |c: (i64, i64)| {
        if c.0 < lo[0] || c.0 > hi[0] || c.1 < lo[1] || c.1 > hi[1] {
            return false;
        }
        key.depth == 0 || (c.0 >> shift == key.x && c.1 >> shift == key.y)
    };
    scenario
        .datapoints
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let cell = frame.lattice_cell(d.position, max_depth);
            inside(cell).then_some(PointRef { index: i as u32, cell })
        })
        .collect()
}

/// Recursive data-driven subdivision of the points under `key`.
pub(crate) fn build_subtree(key: NodeKey, points: Vec<PointRef>, max_depth: u8) -> QuadNode {
    if points.len() <= 1 || key.depth >= max_depth {
        return QuadNode::leaf(points.iter().map(|p| p.index).collect());
    }
    let count = points.len();
    let mut buckets: [Vec<PointRef>; 4] = Default::default();
    for p in points {
        let q = child_slot(&key, &NodeKey { depth: max_depth, x: p.cell.0, y: p.cell.1 });
        buckets[q].push(p);
    }
    let build = |(q, pts): (usize, Vec<PointRef>)| Arc::new(build_subtree(key.child(q), pts, max_depth));
    let children: Vec<Arc<QuadNode>> = if count >= PARALLEL_SPLIT_POINTS {
        buckets.into_iter().enumerate().collect::<Vec<_>>().into_par_iter().map(build).collect()
    } else {
        buckets.into_iter().enumerate().map(build).collect()
    };
    let children: [Arc<QuadNode>; 4] = children.try_into().expect("four children");
    QuadNode { split: Split::Data, count, points: Vec::new(), children: Some(Box::new(children)), ..QuadNode::leaf(Vec::new()) }
}

/// Class of a leaf from the samples of the datapoints it houses.
pub fn classify_cell(tree: &HeightFieldQuadtree, leaf: &NodeRef<'_>) -> CellClass {
    let samples = &tree.scenario.samples[tree.timepoint];
    classify_points(leaf.node.datapoints().iter().map(|&i| &samples[i as usize]))
}

fn classify_points<'a>(mut samples: impl Iterator<Item = &'a Sample>) -> CellClass {
    let mut any = false;
    for s in samples.by_ref() {
        if s.is_wet() {
            return CellClass::Flooded;
        }
        any = true;
    }
    if any {
        CellClass::Dry
    } else {
        CellClass::Undefined
    }
}

fn leaf_base(scenario: &FloodScenario, timepoint: usize, points: &[u32], bounds: &Aabb2) -> LeafBase {
    let samples = &scenario.samples[timepoint];
    let mut n = 0usize;
    let mut elevation = 0.0;
    let mut velocity = Vec2::zeros();
    for &i in points {
        if let Sample::Wet { elevation: e, velocity: v } = samples[i as usize] {
            n += 1;
            elevation += e;
            velocity += v;
        }
    }
    if n > 0 {
        let n = n as f64;
        return LeafBase { class: CellClass::Flooded, elevation: elevation / n, velocity: velocity / n };
    }
    if points.is_empty() {
        LeafBase { class: CellClass::Undefined, elevation: 0.0, velocity: Vec2::zeros() }
    } else {
        LeafBase { class: CellClass::Dry, elevation: scenario.dem.mean_over(bounds), velocity: Vec2::zeros() }
    }
}

/// Largest pairwise angle between the non-zero vectors, in radians.
pub(crate) fn max_pairwise_angle(vs: &[Vec2]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in vs.iter().enumerate() {
        for b in &vs[i + 1..] {
            if a.norm() == 0.0 || b.norm() == 0.0 {
                continue;
            }
            let angle = a.perp(b).atan2(a.dot(b)).abs();
            worst = worst.max(angle);
        }
    }
    worst
}

impl HeightFieldQuadtree {
    /// Splits coarse leaves until edge-adjacent leaves differ by at most one level.
    pub(crate) fn rebalance(&mut self) {
        let mut work: Vec<NodeKey> = self.leaves().iter().map(|l| l.key).collect();
        work.reverse();
        while let Some(key) = work.pop() {
            let Some(at) = self.descend(&key) else { continue };
            if at.key != key || !at.node.is_leaf() || key.depth < 2 {
                continue;
            }
            let neighbors = [(-1, 0), (1, 0), (0, -1), (0, 1)];
            for (dx, dy) in neighbors {
                let nk = NodeKey { depth: key.depth, x: key.x + dx, y: key.y + dy };
                let Some(n) = self.descend(&nk) else { continue };
                if n.node.is_leaf() && n.key.depth + 1 < key.depth {
                    let coarse = n.key;
                    self.split_leaf(&coarse);
                    work.push(key);
                    for q in 0..4 {
                        work.push(coarse.child(q));
                    }
                    break;
                }
            }
        }
    }

    fn split_leaf(&mut self, key: &NodeKey) {
        let frame = self.frame;
        let max_depth = self.max_depth;
        let scenario = self.scenario.clone();
        let mut node = &mut self.root;
        let mut at = frame.root_key();
        while at.depth < key.depth {
            let q = child_slot(&at, key);
            node = &mut Arc::make_mut(node).children.as_mut().expect("path to leaf")[q];
            at = at.child(q);
        }
        let leaf = Arc::make_mut(node);
        debug_assert!(leaf.is_leaf() && key.depth < max_depth);
        let mut buckets: [Vec<u32>; 4] = Default::default();
        for &i in &leaf.points {
            let c = frame.lattice_cell(scenario.datapoints[i as usize].position, max_depth);
            buckets[child_slot(key, &NodeKey { depth: max_depth, x: c.0, y: c.1 })].push(i);
        }
        let children = buckets.map(|pts| Arc::new(QuadNode::leaf(pts)));
        leaf.children = Some(Box::new(children));
        leaf.points = Vec::new();
        leaf.base = None;
        leaf.split = Split::Balance;
    }

    /// Assigns leaf values, extrapolates undefined leaves, and aggregates parents.
    pub(crate) fn finalize(&mut self) -> Result<(), HeightfieldError> {
        let scenario = self.scenario.clone();
        let (t, frame) = (self.timepoint, self.frame);
        fill_bases(&mut self.root, frame.root_key(), &frame, &scenario, t);

        if self.root.count == 0 && self.root.is_leaf() {
            let bounds = self.bounds().aabb();
            if !bounds.intersects(&scenario.dem.extent()) {
                return Err(HeightfieldError::EmptyRegion);
            }
        }
        let extrapolated = self.extrapolate_undefined();
        aggregate(&mut self.root, frame.root_key(), &extrapolated, &frame, &scenario);
        Ok(())
    }

    /// Values for every undefined leaf from its nearest ring of defined cells.
    fn extrapolate_undefined(&self) -> HashMap<NodeKey, (f64, Vec2)> {
        let mut out = HashMap::new();
        for leaf in self.leaves() {
            let base = leaf.node.base.expect("bases filled");
            if base.class != CellClass::Undefined {
                continue;
            }
            if let Some(v) = self.ring_mean(&leaf.key) {
                out.insert(leaf.key, v);
            }
        }
        out
    }

    fn ring_mean(&self, key: &NodeKey) -> Option<(f64, Vec2)> {
        let (lo, hi) = self.frame.range(key.depth);
        let mut seen = HashSet::new();
        let mut found: Vec<(f64, Vec2)> = Vec::new();
        for k in 1i64.. {
            let mut any_inside = false;
            for j in -k..=k {
                for i in -k..=k {
                    if i.abs() != k && j.abs() != k {
                        continue;
                    }
                    let sq = NodeKey { depth: key.depth, x: key.x + i, y: key.y + j };
                    if sq.x < lo[0] || sq.x > hi[0] || sq.y < lo[1] || sq.y > hi[1] {
                        continue;
                    }
                    any_inside = true;
                    let n = self.descend(&sq).expect("inside frame");
                    collect_defined(n.node, n.key, &mut seen, &mut found);
                }
            }
            if !found.is_empty() {
                let count = found.len() as f64;
                let mut e = 0.0;
                let mut v = Vec2::zeros();
                for (fe, fv) in &found {
                    e += fe;
                    v += fv;
                }
                return Some((e / count, v / count));
            }
            if !any_inside {
                return None;
            }
        }
        unreachable!()
    }
}

fn collect_defined(node: &QuadNode, key: NodeKey, seen: &mut HashSet<NodeKey>, found: &mut Vec<(f64, Vec2)>) {
    match node.children() {
        None => {
            let base = node.base.expect("bases filled");
            if base.class != CellClass::Undefined && seen.insert(key) {
                found.push((base.elevation, base.velocity));
            }
        }
        Some(children) => {
            for (q, c) in children.iter().enumerate() {
                collect_defined(c, key.child(q), seen, found);
            }
        }
    }
}

fn fill_bases(node: &mut Arc<QuadNode>, key: NodeKey, frame: &TreeFrame, scenario: &FloodScenario, t: usize) {
    if node.is_leaf() {
        if node.base.is_none() {
            let n = Arc::make_mut(node);
            n.base = Some(leaf_base(scenario, t, &n.points, &frame.key_bounds(&key).aabb()));
        }
        return;
    }
    let n = Arc::make_mut(node);
    for (q, c) in n.children.as_mut().expect("interior").iter_mut().enumerate() {
        fill_bases(c, key.child(q), frame, scenario, t);
    }
}

fn aggregate(
    node: &mut Arc<QuadNode>,
    key: NodeKey,
    extrapolated: &HashMap<NodeKey, (f64, Vec2)>,
    frame: &TreeFrame,
    scenario: &FloodScenario,
) {
    let n = Arc::make_mut(node);
    match n.children.as_mut() {
        None => {
            let base = n.base.expect("bases filled");
            n.lod_renderable = true;
            n.count = n.points.len();
            if base.class == CellClass::Undefined {
                n.class = CellClass::Undefined;
                match extrapolated.get(&key) {
                    Some(&(e, v)) => {
                        n.elevation = e;
                        n.velocity = v;
                    }
                    None => {
                        // nothing defined anywhere: fall back to resting on terrain
                        n.class = CellClass::Dry;
                        n.elevation = scenario.dem.mean_over(&frame.key_bounds(&key).aabb());
                        n.velocity = Vec2::zeros();
                    }
                }
            } else {
                n.class = base.class;
                n.elevation = base.elevation;
                n.velocity = base.velocity;
            }
        }
        Some(children) => {
            for (q, c) in children.iter_mut().enumerate() {
                aggregate(c, key.child(q), extrapolated, frame, scenario);
            }
            let c = &*children;
            n.elevation = (c[0].elevation + c[1].elevation + c[2].elevation + c[3].elevation) / 4.0;
            n.velocity = (c[0].velocity + c[1].velocity + c[2].velocity + c[3].velocity) / 4.0;
            n.count = c.iter().map(|x| x.count).sum();
            let first = c[0].class.lod_class();
            let uniform = c.iter().all(|x| x.class.lod_class() == first) && first != CellClass::Mixed;
            n.class = if uniform { first } else { CellClass::Mixed };
            let velocities = [c[0].velocity, c[1].velocity, c[2].velocity, c[3].velocity];
            n.lod_renderable = uniform
                && c.iter().all(|x| x.lod_renderable)
                && max_pairwise_angle(&velocities) <= LOD_MAX_VELOCITY_ANGLE_DEG.to_radians() + 1e-12;
        }
    }
}
