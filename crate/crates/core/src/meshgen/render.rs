//! One-call mesh pipeline shared by the service and the command line:
//! LoD cut, bounding-box selection, tessellation, wave displacement and
//! hiding around a selected point.

use thiserror::Error;

use super::{displace_mesh, tessellate, tessellate_flat, SurfaceMesh, TessellationPolicy};
use crate::geom::{Aabb2, CameraPose, Square, Vec2};
use crate::heightfield::{HeightFieldQuadtree, LodFrontier};
use crate::wavesynth::WaveCascade;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("bounding box {0:?} is not inside the scenario bounds {1:?}")]
    OutOfBounds(Aabb2, Aabb2),
    #[error("camera pose is not finite")]
    BadCamera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRequest {
    /// Depth cap on the LoD cut; `None` lets the camera distance decide.
    pub lod: Option<u8>,
    /// Only cells overlapping this box are meshed; `None` meshes the whole cut.
    pub bbox: Option<Aabb2>,
    /// Without a camera every selected cell is meshed at level 0.
    pub camera: Option<CameraPose>,
    /// Wave animation time, seconds.
    pub t_anim: f64,
    pub cascade: WaveCascade,
    pub policy: TessellationPolicy,
    /// Vertices within this horizontal distance of the point are hidden.
    pub clear: Option<(Vec2, f64)>,
}

impl MeshRequest {
    pub fn new(cascade: WaveCascade, policy: TessellationPolicy) -> Self {
        Self { lod: None, bbox: None, camera: None, t_anim: 0.0, cascade, policy, clear: None }
    }
}

/// Overlap with positive extent along each axis where the box has extent,
/// closed containment along a degenerate axis.
fn overlaps(cell: &Square, b: &Aabb2) -> bool {
    let axis = |lo: f64, hi: f64, min: f64, max: f64| {
        if max > min {
            hi.min(max) > lo.max(min)
        } else {
            lo <= min && min <= hi
        }
    };
    let m = cell.max();
    axis(cell.min.x, m.x, b.min.x, b.max.x) && axis(cell.min.y, m.y, b.min.y, b.max.y)
}

pub fn render_mesh(tree: &HeightFieldQuadtree, req: &MeshRequest) -> Result<SurfaceMesh, MeshError> {
    let bounds = tree.bounds().aabb();
    if let Some(b) = req.bbox {
        let finite = [b.min.x, b.min.y, b.max.x, b.max.y].iter().all(|v| v.is_finite());
        if !finite || b.min.x > b.max.x || b.min.y > b.max.y || !bounds.contains_box(&b) {
            return Err(MeshError::OutOfBounds(b, bounds));
        }
    }
    if req.camera.is_some_and(|c| !c.is_finite()) {
        return Err(MeshError::BadCamera);
    }
    let lod = req.lod.map(|l| l.min(tree.max_depth()));
    let mut frontier = tree.select_cut(req.camera.as_ref(), req.policy.near, req.policy.far, lod);
    if let Some(b) = req.bbox {
        frontier = LodFrontier { cells: frontier.cells.into_iter().filter(|c| overlaps(&c.bounds, &b)).collect() };
    }
    let mesh = match &req.camera {
        Some(camera) => tessellate(tree, &frontier, camera, None, &req.policy),
        None => tessellate_flat(tree, &frontier),
    };
    let mut mesh = displace_mesh(&mesh, tree, &req.cascade, &tree.scenario().dem, req.t_anim);
    if let Some((center, radius)) = req.clear {
        for v in &mut mesh.vertices {
            if (v.position.xy() - center).norm() <= radius {
                v.hidden = true;
            }
        }
    }
    Ok(mesh)
}
