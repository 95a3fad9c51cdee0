//! Water surface meshes from a LoD frontier.
//!
//! Each frontier cell is meshed on its own: a regular interior grid whose
//! resolution depends on camera distance and frustum visibility, inset from
//! a boundary ring twice as fine. Along an edge shared with a neighbor the
//! ring takes the finer of the two spacings on a power-of-two lattice, so
//! neighbors meet on identical vertices whatever their sizes or levels.

mod export;
mod render;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{CameraPose, Frustum, Square, Vec2, Vec3};
use crate::heightfield::{HeightFieldQuadtree, LodFrontier, NodeKey};
use crate::scenario::TerrainDem;
use crate::wavesynth::{clamp_against_terrain, WaveCascade, WaveField};

pub use export::{
    decode_oct, encode_oct, export_mesh, read_ply, tiles_json, write_obj, write_ply, ExportError, ExportFormat, MeshTile,
};
pub use render::{render_mesh, MeshError, MeshRequest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshVertex {
    pub position: Vec3,
    pub normal: Vec3,
    pub hidden: bool,
}

/// Triangles of one frontier cell: `strip` boundary triangles followed by
/// `interior` ones, starting at `first`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Patch {
    pub key: NodeKey,
    pub bounds: Square,
    pub first: usize,
    pub strip: usize,
    pub interior: usize,
    /// Interior grid is 2^level × 2^level quads.
    pub level: u8,
}

impl Patch {
    pub fn triangles(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.strip + self.interior
    }

    pub fn interior_triangles(&self) -> std::ops::Range<usize> {
        self.first + self.strip..self.first + self.strip + self.interior
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshMeta {
    pub timepoint: usize,
    pub policy: String,
    pub camera: Option<CameraPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[u32; 3]>,
    pub patches: Vec<Patch>,
    pub meta: MeshMeta,
}

impl SurfaceMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize].position);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    /// Checks index range, finiteness and non-degenerate triangles.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.vertices.len() as u32;
        if let Some(v) = self.vertices.iter().position(|v| !v.position.iter().chain(v.normal.iter()).all(|x| x.is_finite())) {
            return Err(format!("vertex {v} is not finite"));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&k| k >= n) {
                return Err(format!("triangle {i} index out of range"));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || self.triangle_area(i) <= 0.0 {
                return Err(format!("triangle {i} is degenerate"));
            }
        }
        Ok(())
    }
}

/// Tessellation policy. Defaults follow the distances given for the system:
/// full detail within 100 m, minimum detail past 2000 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TessellationPolicy {
    pub near: f64,
    pub far: f64,
    /// Longest interior edge inside the frustum; defaults to a tenth of the
    /// smallest frontier cell side.
    pub max_edge: Option<f64>,
    /// Pass-one subdivision level at or inside `near`.
    pub max_level: u8,
    /// Cap on the pass-two level of a single cell.
    pub max_refine_level: u8,
    /// Vertex count the mesh aims to stay under. Both passes grant levels
    /// nearest cell first; farther cells keep lower levels once it runs out.
    pub vertex_budget: usize,
    pub fov_y: f64,
    pub aspect: f64,
    pub view_distance: f64,
}

impl Default for TessellationPolicy {
    fn default() -> Self {
        Self {
            near: 100.0,
            far: 2000.0,
            max_edge: None,
            max_level: 4,
            max_refine_level: 7,
            vertex_budget: 2_000_000,
            fov_y: 60f64.to_radians(),
            aspect: 16.0 / 9.0,
            view_distance: 20_000.0,
        }
    }
}

impl TessellationPolicy {
    fn describe(&self, max_edge: f64) -> String {
        format!(
            "two-pass near={} far={} max_edge={} max_level={} max_refine_level={} vertex_budget={}",
            self.near, self.far, max_edge, self.max_level, self.max_refine_level, self.vertex_budget
        )
    }
}

fn cell_distance(eye: &Vec3, b: &Square, z: f64) -> f64 {
    b.distance_to(eye.xy()).hypot(eye.z - z)
}

/// Two triangles per frontier cell with corners welded between cells.
pub fn coarse_mesh(tree: &HeightFieldQuadtree, frontier: &LodFrontier) -> SurfaceMesh {
    let unit = frontier.min_side();
    let anchor = tree.bounds().min;
    let mut sampler = crate::heightfield::HeightSampler::for_frontier(tree, frontier);
    let mut index: HashMap<(i64, i64), u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut patches = Vec::new();
    for cell in &frontier.cells {
        let b = cell.bounds;
        let steps = (b.side / unit).round() as i64;
        let i0 = ((b.min.x - anchor.x) / unit).round() as i64;
        let j0 = ((b.min.y - anchor.y) / unit).round() as i64;
        let mut corner = |i: i64, j: i64| {
            *index.entry((i, j)).or_insert_with(|| {
                let p = anchor + Vec2::new(i as f64 * unit, j as f64 * unit);
                let z = sampler.sample_clamped(p).0;
                vertices.push(MeshVertex { position: Vec3::new(p.x, p.y, z), normal: Vec3::z(), hidden: false });
                (vertices.len() - 1) as u32
            })
        };
        let a = corner(i0, j0);
        let b1 = corner(i0 + steps, j0);
        let c = corner(i0 + steps, j0 + steps);
        let d = corner(i0, j0 + steps);
        patches.push(Patch { key: cell.key, bounds: cell.bounds, first: triangles.len(), strip: 0, interior: 2, level: 0 });
        triangles.push([a, b1, c]);
        triangles.push([a, c, d]);
    }
    SurfaceMesh {
        vertices,
        triangles,
        patches,
        meta: MeshMeta { timepoint: tree.timepoint(), policy: "coarse".into(), camera: None },
    }
}

/// Vertex produced while meshing one cell: welded by lattice key when on the
/// cell boundary, private otherwise.
#[derive(Debug, Clone, Copy)]
enum LocalVertex {
    Shared(i64, i64),
    Private(Vec2),
}

struct CellMesh {
    vertices: Vec<LocalVertex>,
    triangles: Vec<[u32; 3]>,
    strip: usize,
    level: u8,
}

/// A frontier cell on the integer lattice of step `u`.
#[derive(Debug, Clone, Copy)]
struct LatticeCell {
    key_depth: u8,
    x0: i64,
    y0: i64,
    n: i64,
    /// Ring spacing the cell asks for on its own edges.
    step: i64,
}

struct Lattice {
    cells: Vec<LatticeCell>,
    index: HashMap<(u8, i64, i64), usize>,
    depth: u8,
    max_cell_depth: u8,
    size: i64,
}

impl Lattice {
    fn new(tree: &HeightFieldQuadtree, frontier: &LodFrontier, levels: &[u8]) -> Self {
        let root = tree.bounds();
        let depths: Vec<u8> = frontier.cells.iter().map(|c| (root.side / c.bounds.side).log2().round() as u8).collect();
        let depth = depths.iter().zip(levels).map(|(d, l)| d + l + 1).max().unwrap_or(1);
        let u = root.side / (1u64 << depth) as f64;
        let mut index = HashMap::with_capacity(levels.len());
        let cells: Vec<LatticeCell> = frontier
            .cells
            .iter()
            .zip(depths.iter().zip(levels))
            .enumerate()
            .map(|(k, (c, (&d, &l)))| {
                let n = 1i64 << (depth - d);
                let x0 = ((c.bounds.min.x - root.min.x) / u).round() as i64;
                let y0 = ((c.bounds.min.y - root.min.y) / u).round() as i64;
                index.insert((d, x0 >> (depth - d), y0 >> (depth - d)), k);
                LatticeCell { key_depth: c.key.depth, x0, y0, n, step: n >> (l + 1) }
            })
            .collect();
        let max_cell_depth = depths.iter().copied().max().unwrap_or(0);
        Self { cells, index, depth, max_cell_depth, size: 1i64 << depth }
    }

    /// Frontier cell containing the unit lattice square at `(x, y)`.
    fn locate(&self, x: i64, y: i64) -> Option<&LatticeCell> {
        if x < 0 || y < 0 || x >= self.size || y >= self.size {
            return None;
        }
        (0..=self.max_cell_depth).find_map(|d| {
            let s = self.depth - d;
            self.index.get(&(d, x >> s, y >> s)).map(|&k| &self.cells[k])
        })
    }

    /// Deepest frontier cell touching lattice point `(i, j)`.
    fn depth_around(&self, i: i64, j: i64) -> u8 {
        [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)]
            .iter()
            .filter_map(|&(x, y)| self.locate(x, y))
            .map(|c| c.key_depth)
            .max()
            .unwrap_or(0)
    }

    /// Ring positions along each side of cell `k`, counter-clockwise from the
    /// lower-left corner. Each stretch shared with a neighbor uses the finer
    /// of the two steps, so both cells place the same vertices on it.
    fn ring(&self, k: usize) -> [Vec<i64>; 4] {
        let c = self.cells[k];
        let (x1, y1) = (c.x0 + c.n, c.y0 + c.n);
        // origin, along direction, outward neighbor offset
        let sides = [((c.x0, c.y0), (1, 0), (0, -1)), ((x1, c.y0), (0, 1), (0, 0)), ((x1, y1), (-1, 0), (0, 0)), ((c.x0, y1), (0, -1), (-1, 0))];
        sides.map(|((ox, oy), (dx, dy), (nx, ny)): ((i64, i64), (i64, i64), (i64, i64))| {
            let mut out = Vec::new();
            let mut k = 0;
            while k < c.n {
                // unit square just outside the edge at along-offset k
                let (ax, ay) = if dx + dy > 0 { (ox + dx * k, oy + dy * k) } else { (ox + dx * (k + 1), oy + dy * (k + 1)) };
                let (ux, uy) = if dx != 0 { (ax, oy + ny) } else { (ox + nx, ay) };
                let (end, step) = match self.locate(ux, uy) {
                    Some(m) => {
                        let (m0, o) = if dx != 0 { (m.x0, ox) } else { (m.y0, oy) };
                        let end = if dx + dy > 0 { m0 + m.n - o } else { o - m0 };
                        (end.min(c.n), c.step.min(m.step))
                    }
                    None => (c.n, c.step),
                };
                while k < end {
                    out.push(k);
                    k += step;
                }
            }
            out
        })
    }
}

fn mesh_cell(b: &Square, cell: &LatticeCell, ring: &[Vec<i64>; 4], level: u8) -> CellMesh {
    let mut vertices = Vec::new();
    let mut push = |v: LocalVertex| {
        vertices.push(v);
        (vertices.len() - 1) as u32
    };

    let g = 1i64 << level;
    let inset = b.side / (1u64 << (level + 2)) as f64;
    let inner_min = b.min + Vec2::repeat(inset);
    let inner_side = b.side - 2.0 * inset;
    let step = inner_side / g as f64;
    let mut grid = Vec::with_capacity(((g + 1) * (g + 1)) as usize);
    for j in 0..=g {
        for i in 0..=g {
            // pin the last row and column exactly to the inner edge
            let x = if i == g { inner_min.x + inner_side } else { inner_min.x + i as f64 * step };
            let y = if j == g { inner_min.y + inner_side } else { inner_min.y + j as f64 * step };
            grid.push(push(LocalVertex::Private(Vec2::new(x, y))));
        }
    }
    let at = |i: i64, j: i64| grid[(j * (g + 1) + i) as usize];

    let (x1, y1) = (cell.x0 + cell.n, cell.y0 + cell.n);
    let lattice_point = |side: usize, k: i64| match side {
        0 => (cell.x0 + k, cell.y0),
        1 => (x1, cell.y0 + k),
        2 => (x1 - k, y1),
        _ => (cell.x0, y1 - k),
    };
    let outer: Vec<Vec<u32>> =
        (0..4).map(|s| ring[s].iter().map(|&k| push(LocalVertex::Shared(lattice_point(s, k).0, lattice_point(s, k).1))).collect()).collect();
    let inner = |side: usize, k: i64| match side {
        0 => at(k, 0),
        1 => at(g, k),
        2 => at(g - k, g),
        _ => at(0, g - k),
    };

    let n = cell.n as f64;
    let mut triangles = Vec::new();
    for side in 0..4 {
        let ks = &ring[side];
        let m = ks.len();
        let next_outer = |i: usize| if i + 1 < m { outer[side][i + 1] } else { outer[(side + 1) % 4][0] };
        let frac = |i: usize| if i < m { ks[i] as f64 / n } else { 1.0 };
        let (mut i, mut j) = (0usize, 0i64);
        while i < m || j < g {
            let advance_outer = j == g || (i < m && frac(i + 1) <= (j + 1) as f64 / g as f64);
            if advance_outer {
                triangles.push([outer[side][i], next_outer(i), inner(side, j)]);
                i += 1;
            } else {
                let o = if i < m { outer[side][i] } else { outer[(side + 1) % 4][0] };
                triangles.push([o, inner(side, j + 1), inner(side, j)]);
                j += 1;
            }
        }
    }
    let strip = triangles.len();
    for j in 0..g {
        for i in 0..g {
            let (a, b1, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            triangles.push([a, b1, c]);
            triangles.push([a, c, d]);
        }
    }
    CellMesh { vertices, triangles, strip, level }
}

/// Vertices a cell costs at interior level `l`, ring included.
fn cell_cost(l: u8) -> usize {
    let g = (1usize << l) + 1;
    g * g + (8usize << l)
}

/// Two-pass tessellation of the frontier cells as seen from `camera`.
/// Pass one picks an interior level from distance; pass two refines cells
/// intersecting the view frustum until interior edges fit `max_edge`.
/// Levels are granted nearest cell first, as far as the vertex budget allows.
pub fn tessellate(
    tree: &HeightFieldQuadtree,
    frontier: &LodFrontier,
    camera: &CameraPose,
    frustum: Option<&Frustum>,
    policy: &TessellationPolicy,
) -> SurfaceMesh {
    let unit = frontier.min_side();
    let max_edge = policy.max_edge.unwrap_or(unit / 10.0);
    let default_frustum;
    let frustum = match frustum {
        Some(f) => f,
        None => {
            default_frustum = Frustum::perspective(camera, policy.fov_y, policy.aspect, 0.1, policy.view_distance);
            &default_frustum
        }
    };
    let span = (policy.far - policy.near).max(f64::MIN_POSITIVE);
    // (distance, pass-one level, pass-two level)
    let wanted: Vec<(f64, u8, u8)> = frontier
        .cells
        .par_iter()
        .map(|cell| {
            let b = cell.bounds;
            let d = cell_distance(&camera.position, &b, cell.elevation);
            let t = ((d - policy.near) / span).clamp(0.0, 1.0);
            let first = (policy.max_level as f64 * (1.0 - t)).round() as u8;
            let mut level = first;
            let lo = Vec3::new(b.min.x, b.min.y, cell.elevation - 10.0);
            let hi = Vec3::new(b.max().x, b.max().y, cell.elevation + 10.0);
            if frustum.intersects_box(&lo, &hi) {
                while level < policy.max_refine_level && b.side / (1u64 << level) as f64 * std::f64::consts::SQRT_2 > max_edge {
                    level += 1;
                }
            }
            (d, first, level.max(first))
        })
        .collect();
    let mut order: Vec<usize> = (0..wanted.len()).collect();
    order.sort_by(|&a, &b| wanted[a].0.total_cmp(&wanted[b].0).then(a.cmp(&b)));
    let mut levels = vec![0u8; wanted.len()];
    let mut used: usize = wanted.len() * cell_cost(0);
    for pass in [1, 2] {
        for &k in &order {
            let (_, first, second) = wanted[k];
            let target = if pass == 1 { first } else { second };
            let have = levels[k];
            if let Some(l) = (have + 1..=target).rev().find(|&l| used + cell_cost(l) - cell_cost(have) <= policy.vertex_budget) {
                used += cell_cost(l) - cell_cost(have);
                levels[k] = l;
            }
        }
    }

    let meta = MeshMeta { timepoint: tree.timepoint(), policy: policy.describe(max_edge), camera: Some(*camera) };
    assemble(tree, frontier, &levels, meta)
}

/// Meshes every frontier cell at level 0: two interior triangles inside a
/// boundary ring, without a camera.
pub fn tessellate_flat(tree: &HeightFieldQuadtree, frontier: &LodFrontier) -> SurfaceMesh {
    let meta = MeshMeta { timepoint: tree.timepoint(), policy: "flat".into(), camera: None };
    assemble(tree, frontier, &vec![0; frontier.cells.len()], meta)
}

fn assemble(tree: &HeightFieldQuadtree, frontier: &LodFrontier, levels: &[u8], meta: MeshMeta) -> SurfaceMesh {
    let anchor = tree.bounds().min;
    let lattice = Lattice::new(tree, frontier, levels);
    let u = tree.bounds().side / lattice.size as f64;
    let cells: Vec<CellMesh> = (0..frontier.cells.len())
        .into_par_iter()
        .map(|k| mesh_cell(&frontier.cells[k].bounds, &lattice.cells[k], &lattice.ring(k), levels[k]))
        .collect();

    let mut shared: HashMap<(i64, i64), u32> = HashMap::new();
    let mut positions: Vec<Vec2> = Vec::new();
    // lattice level each vertex is sampled at: that of its cell, or the
    // deepest cell around a ring vertex
    let mut sample_level: Vec<u8> = Vec::new();
    let mut triangles = Vec::new();
    let mut patches = Vec::with_capacity(cells.len());
    for (cell, fc) in cells.iter().zip(&frontier.cells) {
        let map: Vec<u32> = cell
            .vertices
            .iter()
            .map(|v| match *v {
                LocalVertex::Shared(i, j) => *shared.entry((i, j)).or_insert_with(|| {
                    positions.push(anchor + Vec2::new(i as f64 * u, j as f64 * u));
                    sample_level.push(lattice.depth_around(i, j));
                    (positions.len() - 1) as u32
                }),
                LocalVertex::Private(p) => {
                    positions.push(p);
                    sample_level.push(fc.key.depth);
                    (positions.len() - 1) as u32
                }
            })
            .collect();
        patches.push(Patch {
            key: fc.key,
            bounds: fc.bounds,
            first: triangles.len(),
            strip: cell.strip,
            interior: cell.triangles.len() - cell.strip,
            level: cell.level,
        });
        triangles.extend(cell.triangles.iter().map(|t| t.map(|k| map[k as usize])));
    }

    let vertices: Vec<MeshVertex> = positions
        .par_chunks(4096)
        .zip(sample_level.par_chunks(4096))
        .flat_map_iter(|(chunk, lv)| {
            let mut sampler = crate::heightfield::HeightSampler::for_frontier(tree, frontier);
            chunk
                .iter()
                .zip(lv)
                .map(|(p, &l)| {
                    let z = sampler.sample_clamped_at(*p, l).0;
                    MeshVertex { position: Vec3::new(p.x, p.y, z), normal: Vec3::z(), hidden: false }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    SurfaceMesh { vertices, triangles, patches, meta }
}

/// Displaces every vertex by the wave cascade at time `t`, clamps against the
/// terrain and replaces normals with the analytic ones.
pub fn displace_mesh(
    mesh: &SurfaceMesh,
    tree: &HeightFieldQuadtree,
    cascade: &WaveCascade,
    dem: &TerrainDem,
    t: f64,
) -> SurfaceMesh {
    let vertices: Vec<MeshVertex> = mesh
        .vertices
        .par_chunks(2048)
        .flat_map_iter(|chunk| {
            let mut field = WaveField::new(tree, cascade.clone());
            chunk
                .iter()
                .map(|v| {
                    let Ok(sample) = field.evaluate(&v.position, t) else {
                        return *v;
                    };
                    let (mut offset, mut dx, mut dy, mut hidden) = (sample.offset, sample.dx, sample.dy, false);
                    if let Ok(c) = clamp_against_terrain(&v.position, offset, sample.amplitude, dem) {
                        if c.clamped {
                            let scale = crate::wavesynth::MIN_AMPLITUDE / sample.amplitude;
                            dx *= scale;
                            dy *= scale;
                        }
                        offset = c.displacement;
                        hidden = c.hidden;
                    }
                    let tx = Vec3::x() + dx;
                    let ty = Vec3::y() + dy;
                    MeshVertex { position: v.position + offset, normal: tx.cross(&ty).normalize(), hidden }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    SurfaceMesh { vertices, ..mesh.clone() }
}
