//! Shared geometric primitives and domain values.
//!
//! Frame convention: x east, y north, z up, meters, in a local projected
//! plane. `z = 0` is the scenario's sea-level datum. Angles are radians.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Axis-aligned rectangle in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb2 {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb2 {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    /// Smallest rectangle holding every point; `None` for an empty iterator.
    pub fn from_points<I: IntoIterator<Item = Vec2>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| b.expanded_to(p)))
    }

    pub fn expanded_to(self, p: Vec2) -> Self {
        Self {
            min: Vec2::new(self.min.x.min(p.x), self.min.y.min(p.y)),
            max: Vec2::new(self.max.x.max(p.x), self.max.y.max(p.y)),
        }
    }

    pub fn union(self, other: Self) -> Self {
        self.expanded_to(other.min).expanded_to(other.max)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Square with the same center whose side is the larger of width and height.
    pub fn enclosing_square(&self) -> Square {
        let side = self.width().max(self.height());
        Square::centered(self.center(), side)
    }
}

/// Axis-aligned square, stored as its lower-left corner and side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub min: Vec2,
    pub side: f64,
}

impl Square {
    pub fn new(min: Vec2, side: f64) -> Self {
        Self { min, side }
    }

    pub fn centered(center: Vec2, side: f64) -> Self {
        Self { min: center - Vec2::repeat(side * 0.5), side }
    }

    pub fn max(&self) -> Vec2 {
        self.min + Vec2::repeat(self.side)
    }

    pub fn center(&self) -> Vec2 {
        self.min + Vec2::repeat(self.side * 0.5)
    }

    pub fn aabb(&self) -> Aabb2 {
        Aabb2::new(self.min, self.max())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.aabb().contains(p)
    }

    /// Distance from `p` to the nearest point of the square (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let max = self.max();
        let dx = (self.min.x - p.x).max(0.0).max(p.x - max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - max.y);
        dx.hypot(dy)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = (yaw + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Unit look direction for a yaw (counter-clockwise from +x) and a pitch
/// (positive up).
pub fn yaw_pitch_to_direction(yaw: f64, pitch: f64) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(cp * cy, cp * sy, sp)
}

/// Inverse of [`yaw_pitch_to_direction`]. The input need not be normalized.
pub fn direction_to_yaw_pitch(dir: &Vec3) -> (f64, f64) {
    let horizontal = dir.x.hypot(dir.y);
    let pitch = dir.z.atan2(horizontal);
    let yaw = if horizontal == 0.0 { 0.0 } else { dir.y.atan2(dir.x) };
    (normalize_yaw(yaw), pitch)
}

/// Camera position plus yaw and pitch. Roll is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    /// Normalizes yaw and clamps pitch into `[-π/2, π/2]`.
    pub fn new(position: Vec3, yaw: f64, pitch: f64) -> Self {
        Self { position, yaw: normalize_yaw(yaw), pitch: pitch.clamp(-FRAC_PI_2, FRAC_PI_2) }
    }

    pub fn looking_at(position: Vec3, target: Vec3) -> Self {
        let (yaw, pitch) = direction_to_yaw_pitch(&(target - position));
        Self::new(position, yaw, pitch)
    }

    pub fn direction(&self) -> Vec3 {
        yaw_pitch_to_direction(self.yaw, self.pitch)
    }

    /// Camera basis `(forward, right, up)` with zero roll.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = self.direction();
        let (sy, cy) = self.yaw.sin_cos();
        let right = Vec3::new(sy, -cy, 0.0);
        let up = right.cross(&forward);
        (forward, right, up)
    }

    pub fn rotated_yaw(&self, delta: f64) -> Self {
        Self::new(self.position, self.yaw + delta, self.pitch)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.yaw.is_finite() && self.pitch.is_finite()
    }
}

/// Point of interest: a position and a bounding radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: u64,
    pub position: Vec3,
    pub radius: f64,
}

/// Building footprint extruded to a height above local terrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: u64,
    pub footprint: Vec<Vec2>,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Building {
    pub fn contains(&self, p: Vec2) -> bool {
        polygon_contains(&self.footprint, p)
    }

    pub fn bbox(&self) -> Aabb2 {
        Aabb2::from_points(self.footprint.iter().copied()).unwrap_or(Aabb2::new(Vec2::zeros(), Vec2::zeros()))
    }

    /// Area centroid of the footprint.
    pub fn centroid(&self) -> Vec2 {
        polygon_centroid(&self.footprint)
    }

    /// Checks the footprint invariants: at least 3 vertices, simple, height > 0.
    pub fn validate(&self) -> Result<(), String> {
        if self.footprint.len() < 3 {
            return Err(format!("building {} footprint has {} vertices", self.id, self.footprint.len()));
        }
        if !(self.height > 0.0) {
            return Err(format!("building {} height must be positive", self.id));
        }
        if self.footprint.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(format!("building {} footprint is not finite", self.id));
        }
        if !polygon_is_simple(&self.footprint) {
            return Err(format!("building {} footprint self-intersects", self.id));
        }
        Ok(())
    }
}

/// Winding-number point-in-polygon test. Vertices may be in either order and
/// the ring is implicitly closed.
pub fn polygon_contains(ring: &[Vec2], p: Vec2) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut winding = 0i32;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let side = orient(a, b, p);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Twice the signed area of triangle `abc` (positive when counter-clockwise).
pub fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

pub fn polygon_signed_area(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].perp(&ring[(i + 1) % n])).sum::<f64>() * 0.5
}

pub fn polygon_centroid(ring: &[Vec2]) -> Vec2 {
    let area = polygon_signed_area(ring);
    if area.abs() < 1e-300 {
        let n = ring.len().max(1) as f64;
        return ring.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    }
    let n = ring.len();
    let mut c = Vec2::zeros();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        c += (a + b) * a.perp(&b);
    }
    c / (6.0 * area)
}

/// Proper or touching intersection of closed segments `ab` and `cd`.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// True when no two non-adjacent edges of the closed ring touch.
pub fn polygon_is_simple(ring: &[Vec2]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Plane `normal · x + offset = 0` with a unit normal; positive side is inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    /// Plane through three points, oriented so that `inside` has positive distance.
    pub fn through(a: Vec3, b: Vec3, c: Vec3, inside: Vec3) -> Self {
        let normal = (b - a).cross(&(c - a)).normalize();
        let mut plane = Self { normal, offset: -normal.dot(&a) };
        if plane.distance(&inside) < 0.0 {
            plane = Self { normal: -plane.normal, offset: -plane.offset };
        }
        plane
    }

    pub fn from_point_normal(point: Vec3, normal: Vec3) -> Self {
        let normal = normal.normalize();
        Self { normal, offset: -normal.dot(&point) }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Perspective frustum, possibly off-axis, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    pub eye: Vec3,
    /// Left, right, bottom, top, near, far; all oriented inward.
    pub planes: [Plane; 6],
    /// Near plane corners (ll, lr, ur, ul) followed by far plane corners.
    pub corners: [Vec3; 8],
    pub view: Matrix4<f64>,
    pub projection: Matrix4<f64>,
}

/// Index of each plane in [`Frustum::planes`].
pub mod plane_index {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const BOTTOM: usize = 2;
    pub const TOP: usize = 3;
    pub const NEAR: usize = 4;
    pub const FAR: usize = 5;
}

impl Frustum {
    /// Builds a frustum from a camera basis and near-plane extents
    /// `(left, right, bottom, top)` measured at distance `near`.
    #[allow(clippy::too_many_arguments)]
    pub fn off_axis(
        eye: Vec3,
        forward: Vec3,
        right: Vec3,
        up: Vec3,
        extents: [f64; 4],
        near: f64,
        far: f64,
    ) -> Self {
        let [l, r, b, t] = extents;
        let at = |x: f64, y: f64, depth: f64| {
            let s = depth / near;
            eye + forward * depth + right * (x * s) + up * (y * s)
        };
        let corners = [
            at(l, b, near),
            at(r, b, near),
            at(r, t, near),
            at(l, t, near),
            at(l, b, far),
            at(r, b, far),
            at(r, t, far),
            at(l, t, far),
        ];
        let inside = corners.iter().fold(Vec3::zeros(), |acc, c| acc + c) / 8.0;
        let planes = [
            Plane::through(eye, corners[4], corners[7], inside),
            Plane::through(eye, corners[5], corners[6], inside),
            Plane::through(eye, corners[4], corners[5], inside),
            Plane::through(eye, corners[7], corners[6], inside),
            Plane::from_point_normal(eye + forward * near, forward),
            Plane::from_point_normal(eye + forward * far, -forward),
        ];

        let back = -forward;
        let view = Matrix4::new(
            right.x, right.y, right.z, -right.dot(&eye),
            up.x, up.y, up.z, -up.dot(&eye),
            back.x, back.y, back.z, -back.dot(&eye),
            0.0, 0.0, 0.0, 1.0,
        );
        let projection = Matrix4::new(
            2.0 * near / (r - l), 0.0, (r + l) / (r - l), 0.0,
            0.0, 2.0 * near / (t - b), (t + b) / (t - b), 0.0,
            0.0, 0.0, -(far + near) / (far - near), -2.0 * far * near / (far - near),
            0.0, 0.0, -1.0, 0.0,
        );
        Self { eye, planes, corners, view, projection }
    }

    /// Symmetric frustum looking along the pose direction.
    pub fn perspective(pose: &CameraPose, fov_y: f64, aspect: f64, near: f64, far: f64) -> Self {
        let (forward, right, up) = pose.basis();
        let t = near * (fov_y * 0.5).tan();
        let r = t * aspect;
        Self::off_axis(pose.position, forward, right, up, [-r, r, -t, t], near, far)
    }

    /// Normalized device coordinates of a world point.
    pub fn project_ndc(&self, p: &Vec3) -> Vec3 {
        let clip = self.projection * self.view * Vector4::new(p.x, p.y, p.z, 1.0);
        Vec3::new(clip.x / clip.w, clip.y / clip.w, clip.z / clip.w)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.planes.iter().all(|pl| pl.distance(p) >= 0.0)
    }

    /// Conservative box test: false only when the box lies fully outside a plane.
    pub fn intersects_box(&self, min: &Vec3, max: &Vec3) -> bool {
        self.planes.iter().all(|pl| {
            let far_corner = Vec3::new(
                if pl.normal.x >= 0.0 { max.x } else { min.x },
                if pl.normal.y >= 0.0 { max.y } else { min.y },
                if pl.normal.z >= 0.0 { max.z } else { min.z },
            );
            pl.distance(&far_corner) >= 0.0
        })
    }

    /// Ground-plane bounding box of the eight frustum corners.
    pub fn horizontal_extent(&self) -> Aabb2 {
        Aabb2::from_points(self.corners.iter().map(|c| c.xy())).expect("frustum has corners")
    }
}
