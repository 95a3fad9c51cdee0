//! Navigation between viewpoints: straight legs where the chord is clear,
//! quadratic Bézier detours around obstacles otherwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::{ShoreField, VisibilityGrid};
use crate::geom::{normalize_yaw, CameraPose, Vec2, Vec3};
use crate::scenario::OffshoreMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Straight,
    QuadBezier,
}

/// Camera orientation at curve parameter `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookKey {
    pub u: f64,
    pub yaw: f64,
    pub pitch: f64,
}

/// One leg. `points` is `[a, b]` for a straight leg and `[a, control, b]`
/// for a Bézier leg; `look` holds orientation keys from `u = 0` to `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    #[serde(rename = "type")]
    pub kind: SegmentKind,
    pub points: Vec<Vec3>,
    pub look: Vec<LookKey>,
}

impl PathSegment {
    pub fn start(&self) -> Vec3 {
        self.points[0]
    }

    pub fn end(&self) -> Vec3 {
        *self.points.last().expect("segment has points")
    }

    pub fn point_at(&self, u: f64) -> Vec3 {
        curve_point(&self.points, u)
    }

    pub fn tangent_at(&self, u: f64) -> Vec3 {
        match self.points.as_slice() {
            [a, b] => b - a,
            [a, c, b] => (c - a) * (2.0 * (1.0 - u)) + (b - c) * (2.0 * u),
            _ => Vec3::zeros(),
        }
    }

    /// Upper bound on the curve length.
    pub fn length_bound(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Pose at `u`, interpolating the look keys; equals the end viewpoints
    /// exactly at `u = 0` and `u = 1`.
    pub fn pose_at(&self, u: f64) -> CameraPose {
        let u = u.clamp(0.0, 1.0);
        let position = self.point_at(u);
        let j = self.look.partition_point(|k| k.u <= u).clamp(1, self.look.len() - 1);
        let (k0, k1) = (self.look[j - 1], self.look[j]);
        if u <= k0.u {
            return CameraPose::new(position, k0.yaw, k0.pitch);
        }
        if u >= k1.u && j == self.look.len() - 1 {
            return CameraPose::new(position, k1.yaw, k1.pitch);
        }
        let s = (u - k0.u) / (k1.u - k0.u);
        CameraPose::new(position, k0.yaw + normalize_yaw(k1.yaw - k0.yaw) * s, k0.pitch + (k1.pitch - k0.pitch) * s)
    }
}

fn curve_point(points: &[Vec3], u: f64) -> Vec3 {
    match points {
        [a, b] => a + (b - a) * u,
        [a, c, b] => {
            let v = 1.0 - u;
            a * (v * v) + c * (2.0 * u * v) + b * (u * u)
        }
        _ => points[0],
    }
}

/// Viewpoints plus the path through them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PlanDoc", from = "PlanDoc")]
pub struct ViewPlan {
    pub viewpoints: Vec<CameraPose>,
    pub path: Vec<PathSegment>,
}

#[derive(Serialize, Deserialize)]
struct ViewpointDoc {
    pos: Vec3,
    yaw: f64,
    pitch: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    viewpoints: Vec<ViewpointDoc>,
    #[serde(default)]
    path: Vec<PathSegment>,
}

impl From<ViewPlan> for PlanDoc {
    fn from(p: ViewPlan) -> Self {
        Self {
            viewpoints: p.viewpoints.iter().map(|v| ViewpointDoc { pos: v.position, yaw: v.yaw, pitch: v.pitch }).collect(),
            path: p.path,
        }
    }
}

impl From<PlanDoc> for ViewPlan {
    fn from(d: PlanDoc) -> Self {
        Self { viewpoints: d.viewpoints.iter().map(|v| CameraPose::new(v.pos, v.yaw, v.pitch)).collect(), path: d.path }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("a path needs at least two viewpoints")]
    TooFewViewpoints,
    #[error("no collision-free curve found for leg {0}")]
    PathBlocked(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// Spacing of collision samples along a curve, meters.
    pub sample_step: f64,
    /// Times the control offset is doubled before trying another root.
    pub retries: u32,
    /// Root candidates tried per blocked leg.
    pub roots: usize,
    pub look_keys: usize,
    /// Weight of the shoreline direction against the travel direction.
    pub shore_blend: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { sample_step: 0.5, retries: 6, roots: 8, look_keys: 17, shore_blend: 0.5 }
    }
}

pub fn plan_path(
    viewpoints: &[CameraPose],
    grid: &VisibilityGrid,
    mask: Option<&OffshoreMask>,
    clearance: f64,
) -> Result<Vec<PathSegment>, PathError> {
    plan_path_with(viewpoints, grid, mask, clearance, &PathConfig::default())
}

fn clear(points: &[Vec3], grid: &VisibilityGrid, clearance: f64, step: f64) -> bool {
    let len: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let n = ((len / step).ceil() as usize).max(1);
    let extent = grid.extent();
    (0..=n).all(|i| {
        let p = curve_point(points, i as f64 / n as f64);
        extent.contains(p.xy()) && !grid.point_collides(p, clearance)
    })
}

fn chord_foot(a: Vec2, b: Vec2, p: Vec2) -> (f64, Vec2) {
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { (p - a).dot(&ab) / ab.norm_squared() } else { 0.0 };
    (t, a + ab * t)
}

/// Roots for a detour: offshore cell centers nearest the chord midpoint,
/// skipping those within half a cell of the chord line, then free points
/// stepping sideways from the midpoint.
fn root_candidates(a: Vec3, b: Vec3, grid: &VisibilityGrid, mask: Option<&OffshoreMask>, clearance: f64, n: usize) -> Vec<Vec2> {
    let mid = (a.xy() + b.xy()) * 0.5;
    let line_dist = |p: Vec2| (p - chord_foot(a.xy(), b.xy(), p).1).norm();
    let mut roots = Vec::new();
    if let Some(mask) = mask {
        let min_off = 0.5 * mask.spec.cell_size;
        let mut cells: Vec<(f64, Vec2)> =
            mask.offshore_centers().filter(|c| line_dist(*c) >= min_off).map(|c| ((c - mid).norm(), c)).collect();
        cells.sort_by(|x, y| x.0.total_cmp(&y.0));
        roots.extend(cells.into_iter().take(n).map(|(_, c)| c));
    }
    let chord = b.xy() - a.xy();
    if chord.norm() > 0.0 && roots.len() < n {
        let side = Vec2::new(-chord.y, chord.x).normalize();
        let z = 0.5 * (a.z + b.z);
        let step = grid.spec.cell_size;
        for k in 1..=(4 * n) {
            for sign in [1.0, -1.0] {
                let p = mid + side * (sign * k as f64 * step);
                if roots.len() < n && z - clearance >= grid.clearance_height(p, clearance) {
                    roots.push(p);
                }
            }
        }
    }
    roots
}

/// Bézier control point for a detour rooted at `root`: from the root,
/// pushed away from the chord by `factor` times the root's distance to it.
pub fn detour_control(a: Vec3, b: Vec3, root: Vec2, factor: f64) -> Vec3 {
    let (t, foot) = chord_foot(a.xy(), b.xy(), root);
    let off = root - foot;
    let d = off.norm();
    let dir = if d > 0.0 { off / d } else { Vec2::zeros() };
    let c = root + dir * (factor * d);
    Vec3::new(c.x, c.y, a.z + (b.z - a.z) * t.clamp(0.0, 1.0))
}

fn shortest_yaw_lerp(a: f64, b: f64, s: f64) -> f64 {
    normalize_yaw(a + normalize_yaw(b - a) * s)
}

fn look_keys(points: &[Vec3], from: &CameraPose, to: &CameraPose, shore: Option<&ShoreField>, cfg: &PathConfig) -> Vec<LookKey> {
    let n = cfg.look_keys.max(2) - 1;
    let seg = PathSegment { kind: SegmentKind::Straight, points: points.to_vec(), look: vec![] };
    (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            if i == 0 {
                return LookKey { u: 0.0, yaw: from.yaw, pitch: from.pitch };
            }
            if i == n {
                return LookKey { u: 1.0, yaw: to.yaw, pitch: to.pitch };
            }
            let base_yaw = shortest_yaw_lerp(from.yaw, to.yaw, u);
            let base = Vec2::new(base_yaw.cos(), base_yaw.sin());
            let tangent = seg.tangent_at(u).xy();
            let tangent = if tangent.norm() > 0.0 { tangent.normalize() } else { base };
            let toward = shore.map_or(Vec2::zeros(), |s| s.toward_shore(seg.point_at(u).xy()));
            let target = tangent * (1.0 - cfg.shore_blend) + toward * cfg.shore_blend;
            let target = if target.norm() > 1e-9 { target.normalize() } else { tangent };
            let w = (PI * u).sin();
            let dir = base * (1.0 - w) + target * w;
            let yaw = if dir.norm() > 1e-9 { dir.y.atan2(dir.x) } else { base_yaw };
            LookKey { u, yaw: normalize_yaw(yaw), pitch: from.pitch + (to.pitch - from.pitch) * u }
        })
        .collect()
}

/// Path through consecutive viewpoints, confined to the grid extent. A leg
/// stays straight when every sample keeps `clearance` from all columns; otherwise it becomes a
/// quadratic Bézier whose control point sits three root distances out
/// from a root point, doubling the offset until the sampled curve is clear.
pub fn plan_path_with(
    viewpoints: &[CameraPose],
    grid: &VisibilityGrid,
    mask: Option<&OffshoreMask>,
    clearance: f64,
    cfg: &PathConfig,
) -> Result<Vec<PathSegment>, PathError> {
    if viewpoints.len() < 2 {
        return Err(PathError::TooFewViewpoints);
    }
    let shore = mask.map(ShoreField::from_mask);
    let mut legs = Vec::with_capacity(viewpoints.len() - 1);
    for (i, pair) in viewpoints.windows(2).enumerate() {
        let (from, to) = (&pair[0], &pair[1]);
        let (a, b) = (from.position, to.position);
        let straight = [a, b];
        let points = if clear(&straight, grid, clearance, cfg.sample_step) {
            Some(straight.to_vec())
        } else {
            root_candidates(a, b, grid, mask, clearance, cfg.roots).into_iter().find_map(|root| {
                (0..=cfg.retries).find_map(|k| {
                    let curve = [a, detour_control(a, b, root, 3.0 * 2f64.powi(k as i32)), b];
                    clear(&curve, grid, clearance, cfg.sample_step).then(|| curve.to_vec())
                })
            })
        };
        let points = points.ok_or(PathError::PathBlocked(i))?;
        let kind = if points.len() == 2 { SegmentKind::Straight } else { SegmentKind::QuadBezier };
        let look = look_keys(&points, from, to, shore.as_ref(), cfg);
        legs.push(PathSegment { kind, points, look });
    }
    Ok(legs)
}
