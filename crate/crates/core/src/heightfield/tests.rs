use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{CameraPose, Frustum, Vec3};
use crate::scenario::{Datapoint, GridSpec, Sample, TerrainDem};

fn scenario_with(points: &[(f64, f64, Sample)], dem: TerrainDem) -> Arc<FloodScenario> {
    let datapoints = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y, _))| Datapoint { id: i as u64, position: Vec2::new(x, y) })
        .collect();
    let samples = vec![points.iter().map(|p| p.2).collect()];
    Arc::new(FloodScenario::new("t", datapoints, samples, 60.0, dem, vec![], None))
}

fn wet(e: f64) -> Sample {
    Sample::Wet { elevation: e, velocity: Vec2::new(1.0, 0.0) }
}

fn flat_dem(min: f64, side: f64, z: f64) -> TerrainDem {
    TerrainDem::flat(Vec2::new(min, min), side / 64.0, 64, 64, z)
}

fn random_scenario(seed: u64, n: usize, half: f64) -> Arc<FloodScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for _ in 0..n {
        // clustered toward the origin, so resolution varies strongly
        let r = half * rng.random::<f64>().powi(2);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let (x, y) = (r * a.cos(), r * a.sin());
        let s = if rng.random::<f64>() < 0.2 {
            Sample::Dry
        } else {
            let ang: f64 = rng.random_range(-0.3..0.3);
            Sample::Wet { elevation: rng.random_range(0.0..3.0), velocity: Vec2::new(ang.cos(), ang.sin()) }
        };
        pts.push((x, y, s));
    }
    let spec = GridSpec { origin: Vec2::new(-half, -half), cell_size: 2.0 * half / 128.0, rows: 128, cols: 128 };
    let dem = TerrainDem::from_fn(spec, |p| 0.001 * (p.x + p.y) + 0.5);
    scenario_with(&pts, dem)
}

// ---- independent splitter and balance oracle on explicit float bounds ----

#[derive(Debug)]
struct ONode {
    min: (f64, f64),
    side: f64,
    depth: u8,
    kids: Vec<ONode>,
}

fn oracle_split(pts: &[(f64, f64)], min: (f64, f64), side: f64, depth: u8, max_depth: u8) -> ONode {
    let inside: Vec<(f64, f64)> = pts
        .iter()
        .copied()
        .filter(|&(x, y)| x >= min.0 && x < min.0 + side && y >= min.1 && y < min.1 + side)
        .collect();
    let mut node = ONode { min, side, depth, kids: vec![] };
    if inside.len() > 1 && depth < max_depth {
        let h = side / 2.0;
        for (dx, dy) in [(0.0, 0.0), (h, 0.0), (0.0, h), (h, h)] {
            node.kids.push(oracle_split(&inside, (min.0 + dx, min.1 + dy), h, depth + 1, max_depth));
        }
    }
    node
}

fn oracle_leaves(n: &ONode, out: &mut Vec<(f64, f64, f64, u8)>) {
    if n.kids.is_empty() {
        out.push((n.min.0, n.min.1, n.side, n.depth));
    } else {
        n.kids.iter().for_each(|k| oracle_leaves(k, out));
    }
}

fn oracle_split_at(n: &mut ONode, min: (f64, f64), side: f64) -> bool {
    if n.kids.is_empty() {
        if n.min == min && n.side == side {
            let h = side / 2.0;
            for (dx, dy) in [(0.0, 0.0), (h, 0.0), (0.0, h), (h, h)] {
                n.kids.push(ONode { min: (min.0 + dx, min.1 + dy), side: h, depth: n.depth + 1, kids: vec![] });
            }
            return true;
        }
        return false;
    }
    n.kids.iter_mut().any(|k| oracle_split_at(k, min, side))
}

fn edge_adjacent(a: &(f64, f64, f64, u8), b: &(f64, f64, f64, u8)) -> bool {
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| a0.max(b0) < a1.min(b1);
    let (ax1, ay1, bx1, by1) = (a.0 + a.2, a.1 + a.2, b.0 + b.2, b.1 + b.2);
    ((ax1 == b.0 || bx1 == a.0) && overlap(a.1, ay1, b.1, by1)) || ((ay1 == b.1 || by1 == a.1) && overlap(a.0, ax1, b.0, bx1))
}

fn oracle_balance(root: &mut ONode) {
    loop {
        let mut leaves = vec![];
        oracle_leaves(root, &mut leaves);
        let mut target = None;
        'scan: for a in &leaves {
            for b in &leaves {
                if edge_adjacent(a, b) && a.3 + 1 < b.3 {
                    target = Some((a.0, a.1, a.2));
                    break 'scan;
                }
            }
        }
        match target {
            Some((x, y, s)) => assert!(oracle_split_at(root, (x, y), s)),
            None => return,
        }
    }
}

fn tree_leaves(tree: &HeightFieldQuadtree) -> Vec<(f64, f64, f64, u8)> {
    let mut v: Vec<_> = tree.leaves().iter().map(|l| (l.bounds.min.x, l.bounds.min.y, l.bounds.side, l.key.depth)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn oracle_structure(pts: &[(f64, f64)], side: f64, max_depth: u8, balance: bool) -> Vec<(f64, f64, f64, u8)> {
    let mut root = oracle_split(pts, (0.0, 0.0), side, 0, max_depth);
    if balance {
        oracle_balance(&mut root);
    }
    let mut v = vec![];
    oracle_leaves(&root, &mut v);
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn scatter_tree(pts: &[(f64, f64)], side: f64, max_depth: u8) -> HeightFieldQuadtree {
    let samples: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y))| (x, y, wet(i as f64))).collect();
    let sc = scenario_with(&samples, flat_dem(0.0, side, -5.0));
    build_quadtree(&sc, 0, Square::new(Vec2::zeros(), side), max_depth).unwrap()
}

#[test]
fn twelve_point_scatter_matches_oracle_structure() {
    let pts = [
        (10.3, 12.9), (14.1, 13.7), (13.2, 18.8), (90.4, 20.2), (95.6, 22.9), (22.5, 88.1),
        (60.7, 61.3), (61.9, 62.2), (63.3, 60.1), (120.8, 121.4), (100.2, 10.7), (12.2, 110.6),
    ];
    let tree = scatter_tree(&pts, 128.0, 7);
    let pre = oracle_structure(&pts, 128.0, 7, false);
    let post = oracle_structure(&pts, 128.0, 7, true);
    assert!(post.len() > pre.len(), "fixture should need balance splits");
    assert_eq!(tree_leaves(&tree), post);
}

#[test]
fn single_point_gives_flooded_root_leaf() {
    let sc = scenario_with(&[(5.0, 5.0, wet(1.25))], flat_dem(0.0, 16.0, 0.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 16.0), 8).unwrap();
    let root = tree.root();
    assert!(root.node.is_leaf());
    assert_eq!(root.node.class, CellClass::Flooded);
    assert_eq!(root.node.elevation, 1.25);
}

#[test]
fn four_quadrant_values_average_at_root() {
    let pts = [(1.0, 1.0, wet(1.0)), (3.0, 1.0, wet(2.0)), (1.0, 3.0, wet(3.0)), (3.0, 3.0, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap();
    assert_eq!(tree.root().node.elevation, 2.5);
    assert_eq!(tree.leaves().len(), 4);
}

#[test]
fn classes_follow_housed_samples() {
    let pts = [(1.0, 1.0, wet(1.0)), (3.0, 1.0, Sample::Dry), (1.0, 3.0, wet(2.0)), (1.2, 3.3, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.75));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap();
    let sw = tree.leaf_at(Vec2::new(1.0, 1.0)).unwrap();
    assert_eq!(classify_cell(&tree, &sw), CellClass::Flooded);
    let se = tree.leaf_at(Vec2::new(3.0, 1.0)).unwrap();
    assert_eq!(classify_cell(&tree, &se), CellClass::Dry);
    assert_eq!(se.node.elevation, 0.75);
    assert_eq!(se.node.velocity, Vec2::zeros());
    let ne = tree.leaf_at(Vec2::new(3.0, 3.0)).unwrap();
    assert_eq!(classify_cell(&tree, &ne), CellClass::Undefined);
    assert_eq!(ne.node.class, CellClass::Undefined);
    // the nearest ring reaching defined cells covers SW, SE and both point leaves of NW
    let expected: Vec<f64> = tree
        .leaves()
        .iter()
        .filter(|l| classify_cell(&tree, l) != CellClass::Undefined)
        .map(|l| l.node.elevation)
        .collect();
    assert_eq!(expected.len(), 4);
    let mean = expected.iter().sum::<f64>() / expected.len() as f64;
    assert!((ne.node.elevation - mean).abs() < 1e-12, "{} vs {}", ne.node.elevation, mean);
}

#[test]
fn undefined_cell_averages_defined_ring() {
    // 4x4 lattice at depth 2 with one undefined cell surrounded by defined ones
    let mut pts = vec![];
    for j in 0..4 {
        for i in 0..4 {
            if (i, j) == (1, 1) {
                continue;
            }
            pts.push((i as f64 + 0.5, j as f64 + 0.5, wet((i + 4 * j) as f64)));
        }
    }
    // pair of points in each depth-1 quadrant forces all to depth 2
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, -1.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 2).unwrap();
    let hole = tree.leaf_at(Vec2::new(1.5, 1.5)).unwrap();
    assert_eq!(hole.node.class, CellClass::Undefined);
    let ring: Vec<f64> = [(0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2)]
        .iter()
        .map(|&(i, j)| (i + 4 * j) as f64)
        .collect();
    let mean = ring.iter().sum::<f64>() / 8.0;
    assert!((hole.node.elevation - mean).abs() < 1e-12);
}

#[test]
fn far_undefined_cells_search_outward() {
    let pts = [(0.5, 0.5, wet(2.0)), (0.7, 0.6, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 64.0, -1.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 64.0), 8).unwrap();
    for leaf in tree.leaves() {
        assert!(leaf.node.elevation.is_finite());
    }
    let far = tree.leaf_at(Vec2::new(60.0, 60.0)).unwrap();
    assert_eq!(far.node.class, CellClass::Undefined);
    assert!(far.node.elevation > 1.9 && far.node.elevation < 4.1);
}

#[test]
fn empty_region_without_terrain_is_an_error() {
    let sc = scenario_with(&[(5.0, 5.0, wet(1.0))], flat_dem(0.0, 16.0, 0.0));
    let err = build_quadtree(&sc, 0, Square::new(Vec2::new(1000.0, 1000.0), 16.0), 8).unwrap_err();
    assert_eq!(err, HeightfieldError::EmptyRegion);
    let dry = build_quadtree(&sc, 0, Square::new(Vec2::new(20.0, 0.0), 8.0), 8);
    assert!(dry.is_err(), "outside the 16 m terrain extent too");
    let inside = build_quadtree(&sc, 0, Square::new(Vec2::new(8.0, 8.0), 4.0), 8).unwrap();
    assert_eq!(inside.root().node.class, CellClass::Dry);
}

#[test]
fn invalid_depth_rejected() {
    let sc = scenario_with(&[(5.0, 5.0, wet(1.0))], flat_dem(0.0, 16.0, 0.0));
    let sq = Square::new(Vec2::zeros(), 16.0);
    assert_eq!(build_quadtree(&sc, 0, sq, 0).unwrap_err(), HeightfieldError::InvalidDepth(0));
    assert_eq!(build_quadtree(&sc, 0, sq, 25).unwrap_err(), HeightfieldError::InvalidDepth(25));
}

// ---- interpolation ----

#[test]
fn uniform_field_is_constant() {
    let mut pts = vec![];
    for j in 0..8 {
        for i in 0..8 {
            pts.push((i as f64 + 0.5, j as f64 + 0.5, wet(3.5)));
        }
    }
    let sc = scenario_with(&pts, flat_dem(0.0, 8.0, -2.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 8.0), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let p = Vec2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
        for lod in 0..=3 {
            assert!((tree.interpolate_height(p, lod).unwrap() - 3.5).abs() < 1e-12);
            let v = tree.interpolate_velocity(p, lod).unwrap();
            assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn bilinear_midpoint_of_two_by_two() {
    let pts = [(0.5, 0.5, wet(0.0)), (1.5, 0.5, wet(1.0)), (0.5, 1.5, wet(0.0)), (1.5, 1.5, wet(1.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 2.0, -2.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 2.0), 1).unwrap();
    assert_eq!(tree.interpolate_height(Vec2::new(1.0, 1.0), 1).unwrap(), 0.5);
}

#[test]
fn mixed_resolution_matches_hand_stepped_upsampling() {
    // SW quadrant refined to depth 2; the other quadrants stay at depth 1
    let (a, b, c, d, e, f, g) = (1.0, 2.0, 4.0, 7.0, 3.0, -1.0, 5.0);
    let pts = [
        (0.5, 0.5, wet(a)),
        (1.5, 0.5, wet(b)),
        (0.5, 1.5, wet(c)),
        (1.5, 1.5, wet(d)),
        (3.0, 1.0, wet(e)),
        (1.0, 3.0, wet(f)),
        (3.0, 3.0, wet(g)),
    ];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, -2.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 2).unwrap();
    let p = Vec2::new(1.8, 0.8);

    let lerp = |x: f64, y: f64, t: f64| x + (y - x) * t;
    // (g) the bounding depth-2 centers are (1.5,0.5) (1.5,1.5) and two inside the coarse SE cell
    // downsampling: the SW parent value is the mean of its children
    let m = (a + b + c + d) / 4.0;
    // (h)+(i) split SE and upsample each virtual cell from the depth-1 lattice
    // virtual (2.5, 0.5): fractional offsets 0.75 in x; below the last row so y clamps
    let v20 = lerp(m, e, 0.75);
    // virtual (2.5, 1.5): x 0.75, y 0.25 between rows (SW,SE) and (NW,NE)
    let v21 = lerp(lerp(m, e, 0.75), lerp(f, g, 0.75), 0.25);
    // (j) final blend of the same-resolution cells
    let expected = lerp(lerp(b, v20, 0.3), lerp(d, v21, 0.3), 0.3);
    let got = tree.interpolate_height(p, 2).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn dry_region_has_zero_velocity() {
    let pts = [(0.5, 0.5, Sample::Dry), (1.5, 0.5, Sample::Dry), (0.5, 1.5, Sample::Dry), (1.5, 1.5, Sample::Dry)];
    let sc = scenario_with(&pts, flat_dem(0.0, 2.0, 1.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 2.0), 4).unwrap();
    for p in [Vec2::new(0.1, 0.1), Vec2::new(1.0, 1.0), Vec2::new(1.9, 0.4)] {
        assert_eq!(tree.interpolate_velocity(p, 4).unwrap(), Vec2::zeros());
        assert!((tree.interpolate_height(p, 4).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn out_of_bounds_query_errors() {
    let sc = random_scenario(3, 50, 100.0);
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-100.0, -100.0), 200.0), 8).unwrap();
    assert!(matches!(tree.interpolate_height(Vec2::new(150.0, 0.0), 4), Err(HeightfieldError::OutOfBounds { .. })));
    assert!(tree.interpolate_height(Vec2::new(f64::NAN, 0.0), 4).is_err());
}

#[test]
fn velocity_is_componentwise_height_machinery() {
    // a tree whose elevations equal the x velocity component must interpolate identically
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = vec![];
    let mut mirrored = vec![];
    for _ in 0..120 {
        let (x, y) = (rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
        let (vx, vy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        pts.push((x, y, Sample::Wet { elevation: 0.0, velocity: Vec2::new(vx, vy) }));
        mirrored.push((x, y, Sample::Wet { elevation: vx, velocity: Vec2::new(vy, 0.0) }));
    }
    let dem = flat_dem(0.0, 64.0, -3.0);
    let bounds = Square::new(Vec2::zeros(), 64.0);
    let t1 = build_quadtree(&scenario_with(&pts, dem.clone()), 0, bounds, 9).unwrap();
    let t2 = build_quadtree(&scenario_with(&mirrored, dem), 0, bounds, 9).unwrap();
    for _ in 0..200 {
        let p = Vec2::new(rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
        let v = t1.interpolate_velocity(p, 9).unwrap();
        assert!((v.x - t2.interpolate_height(p, 9).unwrap()).abs() < 1e-12);
        assert!((v.y - t2.interpolate_velocity(p, 9).unwrap().x).abs() < 1e-12);
    }
}

fn is_balanced(tree: &HeightFieldQuadtree) -> bool {
    let leaves = tree_leaves(tree);
    leaves.iter().all(|a| leaves.iter().all(|b| !edge_adjacent(a, b) || a.3.abs_diff(b.3) <= 1))
}

#[test]
fn random_trees_are_balanced_and_conservative() {
    for seed in 0..6 {
        let sc = random_scenario(seed, 300, 500.0);
        let tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
        assert!(is_balanced(&tree));
        let area = 1000.0 * 1000.0;
        let weighted: f64 = tree.leaves().iter().map(|l| l.node.elevation * l.bounds.side * l.bounds.side).sum::<f64>() / area;
        let root = tree.root().node.elevation;
        assert!((weighted - root).abs() <= 1e-9 * root.abs().max(1.0));
        let housed: usize = tree.leaves().iter().map(|l| l.node.datapoints().len()).sum();
        assert_eq!(housed, sc.datapoints.len());
    }
}

#[test]
fn interpolation_is_continuous_across_resolution_changes() {
    let sc = random_scenario(11, 400, 500.0);
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
    let leaves = tree.leaves();
    let (lo, hi) = leaves.iter().fold((f64::MAX, f64::MIN), |(lo, hi), l| (lo.min(l.node.elevation), hi.max(l.node.elevation)));
    let range = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sampler = tree.sampler(10);
    let mut checked = 0;
    while checked < 1000 {
        let a = &leaves[rng.random_range(0..leaves.len())];
        // probe across the east edge into whichever leaf is there
        let x = a.bounds.max().x;
        if x >= 500.0 {
            continue;
        }
        let y = a.bounds.min.y + rng.random::<f64>() * a.bounds.side;
        let b = tree.leaf_at(Vec2::new(x + 1e-9, y)).unwrap();
        if b.key.depth == a.key.depth {
            continue;
        }
        let eps = 1e-10;
        let left = sampler.height(Vec2::new(x - eps, y)).unwrap();
        let right = sampler.height(Vec2::new(x + eps, y)).unwrap();
        assert!((left - right).abs() < 1e-9 * range, "jump {} at ({x},{y})", (left - right).abs());
        checked += 1;
    }
}

// ---- LoD ----

#[test]
fn distant_camera_selects_renderable_root() {
    let pts = [(1.0, 1.0, wet(1.0)), (3.0, 1.0, wet(2.0)), (1.0, 3.0, wet(3.0)), (3.0, 3.0, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap();
    assert!(tree.root().node.lod_renderable);
    let far = CameraPose::new(Vec3::new(f64::INFINITY, 0.0, 100.0), 0.0, 0.0);
    let cut = tree.select_lod_cut(&far, 100.0, 2000.0);
    assert_eq!(cut.cells.len(), 1);
    assert_eq!(cut.cells[0].key.depth, 0);
    let near = CameraPose::new(Vec3::new(2.0, 2.0, 1.0), 0.0, 0.0);
    assert_eq!(tree.select_lod_cut(&near, 100.0, 2000.0).cells.len(), 4);
}

#[test]
fn mixed_children_block_root() {
    let pts = [(1.0, 1.0, wet(1.0)), (3.0, 1.0, Sample::Dry), (1.0, 3.0, wet(3.0)), (3.0, 3.0, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap();
    assert_eq!(tree.root().node.class, CellClass::Mixed);
    assert!(!tree.root().node.lod_renderable);
    let cam = CameraPose::new(Vec3::new(1e9, 1e9, 1e9), 0.0, 0.0);
    let cut = tree.select_lod_cut(&cam, 100.0, 2000.0);
    assert_eq!(cut.cells.len(), 4);
}

#[test]
fn divergent_flow_blocks_parent() {
    let dir = |deg: f64| {
        let r = deg.to_radians();
        Vec2::new(r.cos(), r.sin())
    };
    let build = |spread: f64| {
        let pts = [
            (1.0, 1.0, Sample::Wet { elevation: 1.0, velocity: dir(0.0) }),
            (3.0, 1.0, Sample::Wet { elevation: 1.0, velocity: dir(spread) }),
            (1.0, 3.0, Sample::Wet { elevation: 1.0, velocity: dir(0.0) }),
            (3.0, 3.0, Sample::Wet { elevation: 1.0, velocity: dir(0.0) }),
        ];
        let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.0));
        build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap()
    };
    assert!(!build(20.0).root().node.lod_renderable);
    assert!(build(14.0).root().node.lod_renderable);
    let cam = CameraPose::new(Vec3::new(1e9, 0.0, 0.0), 0.0, 0.0);
    assert!(build(20.0).select_lod_cut(&cam, 100.0, 2000.0).cells.iter().all(|c| c.key.depth > 0));
}

fn descendants_classes(tree: &HeightFieldQuadtree, key: NodeKey) -> (bool, bool) {
    let mut flooded = false;
    let mut dry = false;
    for leaf in tree.leaves() {
        let inside = if leaf.key.depth >= key.depth {
            let shift = leaf.key.depth - key.depth;
            if key.depth == 0 {
                true
            } else {
                (leaf.key.x >> shift, leaf.key.y >> shift) == (key.x, key.y)
            }
        } else {
            false
        };
        if inside || leaf.key == key {
            match leaf.node.class.lod_class() {
                CellClass::Flooded => flooded = true,
                CellClass::Dry => dry = true,
                _ => {}
            }
        }
    }
    (flooded, dry)
}

#[test]
fn lod_cut_tiles_bounds_and_never_mixes() {
    let sc = random_scenario(21, 500, 500.0);
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
    for cam in [Vec3::new(0.0, 0.0, 50.0), Vec3::new(-2000.0, 300.0, 400.0), Vec3::new(450.0, -450.0, 10.0)] {
        let cut = tree.select_lod_cut(&CameraPose::new(cam, 0.0, -0.3), 100.0, 2000.0);
        let area: f64 = cut.cells.iter().map(|c| c.bounds.side * c.bounds.side).sum();
        assert!((area - 1e6).abs() < 1e-6);
        for cell in &cut.cells {
            let node = tree.descend(&cell.key).unwrap();
            assert_eq!(node.key, cell.key);
            assert!(node.node.lod_renderable);
            let (f, d) = descendants_classes(&tree, cell.key);
            assert!(!(f && d), "frontier node {:?} mixes classes", cell.key);
        }
    }
}

// ---- dynamic updates ----

fn assert_fresh_equivalent(tree: &HeightFieldQuadtree, rng: &mut ChaCha8Rng) {
    let fresh = build_quadtree_in_frame(tree.scenario(), tree.timepoint(), tree.frame(), tree.max_depth()).unwrap();
    assert!(tree.same_content(&fresh));
    let b = tree.bounds();
    let (mut s1, mut s2) = (tree.sampler(tree.max_depth()), fresh.sampler(fresh.max_depth()));
    for _ in 0..1000 {
        let p = b.min + Vec2::new(rng.random::<f64>() * b.side, rng.random::<f64>() * b.side);
        assert!((s1.height(p).unwrap() - s2.height(p).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn interior_motion_keeps_identity() {
    let sc = random_scenario(4, 600, 1500.0);
    let mut tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
    let before: Vec<_> = (0..4).map(|q| Arc::as_ptr(tree.quadrant(q).unwrap())).collect();
    let report = tree.update_quadrants(Vec2::new(100.0, -50.0), tree.default_threshold()).unwrap();
    assert!(report.is_noop());
    let after: Vec<_> = (0..4).map(|q| Arc::as_ptr(tree.quadrant(q).unwrap())).collect();
    assert_eq!(before, after);
}

#[test]
fn eastward_motion_rebuilds_east_pair() {
    let sc = random_scenario(4, 600, 1500.0);
    let mut tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
    let se = Arc::as_ptr(tree.quadrant(1).unwrap());
    let ne = Arc::as_ptr(tree.quadrant(3).unwrap());
    let report = tree.update_quadrants(Vec2::new(480.0, 0.0), tree.default_threshold()).unwrap();
    assert_eq!(report.shift, [1, 0]);
    assert_eq!((report.retained, report.rebuilt), (2, 2));
    assert_eq!(tree.bounds().min, Vec2::new(0.0, -500.0));
    // the old east quadrants are now the west ones
    assert_eq!(Arc::as_ptr(tree.quadrant(0).unwrap()), se);
    assert_eq!(Arc::as_ptr(tree.quadrant(2).unwrap()), ne);
    assert_fresh_equivalent(&tree, &mut ChaCha8Rng::seed_from_u64(0));
}

#[test]
fn diagonal_motion_replaces_three_quadrants() {
    let sc = random_scenario(8, 600, 1500.0);
    let mut tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-500.0, -500.0), 1000.0), 10).unwrap();
    let report = tree.update_quadrants(Vec2::new(-490.0, 490.0), tree.default_threshold()).unwrap();
    assert_eq!(report.shift, [-1, 1]);
    assert_eq!(report.rebuilt, 3);
    assert_fresh_equivalent(&tree, &mut ChaCha8Rng::seed_from_u64(1));
}

#[test]
fn random_walks_match_fresh_builds() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..3 {
        let sc = random_scenario(seed, 800, 2000.0);
        let mut tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-400.0, -400.0), 800.0), 11).unwrap();
        let mut screen = tree.bounds().center();
        for _ in 0..10 {
            screen += Vec2::new(rng.random_range(-350.0..350.0), rng.random_range(-350.0..350.0));
            tree.update_quadrants(screen, tree.default_threshold()).unwrap();
            assert!(is_balanced(&tree));
        }
        assert_fresh_equivalent(&tree, &mut rng);
    }
}

// ---- display bounds ----

#[test]
fn display_bounds_from_frustum() {
    let pose = CameraPose::new(Vec3::new(10.0, 20.0, 0.0), 0.0, 0.0);
    let f = Frustum::perspective(&pose, 90f64.to_radians(), 1.0, 0.1, 1000.0);
    let sq = init_bounds_for_display(&f, 0.0);
    assert!((sq.side - 2000.0).abs() < 1e-9);
    assert!((sq.center() - Vec2::new(10.0, 20.0)).norm() < 1e-9);
    assert!((init_bounds_for_display(&f, 250.0).side - 2500.0).abs() < 1e-9);
}

#[test]
fn off_axis_bounds_match_unprojected_corners() {
    let pose = CameraPose::new(Vec3::new(0.0, 0.0, 30.0), 0.4, -0.2);
    let (fwd, right, up) = pose.basis();
    let f = Frustum::off_axis(pose.position, fwd, right, up, [-0.3, 0.9, -0.2, 0.5], 1.0, 800.0);
    let inv = (f.projection * f.view).try_inverse().unwrap();
    let (mut lo, mut hi) = (Vec2::repeat(f64::MAX), Vec2::repeat(f64::MIN));
    for x in [-1.0, 1.0] {
        for y in [-1.0, 1.0] {
            for z in [-1.0, 1.0] {
                let h = inv * nalgebra::Vector4::new(x, y, z, 1.0);
                let p = Vec2::new(h.x / h.w, h.y / h.w);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    let side = (hi.x - lo.x).max(hi.y - lo.y);
    assert!((init_bounds_for_display(&f, 0.0).side - side).abs() < 1e-6 * side);
}

#[test]
fn json_dump_nests_children() {
    let pts = [(1.0, 1.0, wet(1.0)), (3.0, 1.0, wet(2.0)), (1.0, 3.0, wet(3.0)), (3.0, 3.0, wet(4.0))];
    let sc = scenario_with(&pts, flat_dem(0.0, 4.0, 0.0));
    let tree = build_quadtree(&sc, 0, Square::new(Vec2::zeros(), 4.0), 6).unwrap();
    let j = tree.to_json();
    assert_eq!(j["depth"], 0);
    assert_eq!(j["children"].as_array().unwrap().len(), 4);
    assert_eq!(j["children"][3]["elevation"], 4.0);
    assert_eq!(j["class"], "Flooded");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structure_matches_oracle(
        pts in prop::collection::vec((0.0f64..256.0, 0.0f64..256.0), 2..40),
        max_depth in 3u8..8,
    ) {
        let tree = scatter_tree(&pts, 256.0, max_depth);
        prop_assert_eq!(tree_leaves(&tree), oracle_structure(&pts, 256.0, max_depth, true));
    }

    #[test]
    fn parents_are_exact_child_means(seed in 0u64..1000) {
        let sc = random_scenario(seed, 120, 200.0);
        let tree = build_quadtree(&sc, 0, Square::new(Vec2::new(-200.0, -200.0), 400.0), 9).unwrap();
        let mut ok = true;
        tree.visit(|n| {
            if let Some(c) = n.node.children() {
                let mean = (c[0].elevation + c[1].elevation + c[2].elevation + c[3].elevation) / 4.0;
                ok &= (mean - n.node.elevation).abs() <= 1e-12 * mean.abs().max(1.0);
            } else {
                ok &= n.node.datapoints().len() <= 1 || n.key.depth == tree.max_depth();
            }
        });
        prop_assert!(ok);
    }
}
