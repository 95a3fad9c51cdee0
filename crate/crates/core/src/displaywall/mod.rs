//! Display layouts, per-screen off-axis frusta and the sync contract.

mod sync;

pub use sync::{
    decode_frame, encode_frame, Annotation, AnnotationKind, ClientSink, ClientState, CodecError, FrameDecoder,
    HeartbeatPolicy, PoiChange, SessionSnapshot, SyncBody, SyncError, SyncHub, SyncMessage, MAX_FRAME_LEN,
};

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraPose, Frustum, Square, Vec3};
use crate::heightfield::init_bounds_for_display;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("head lies on or behind the plane of screen {0}")]
    DegenerateGeometry(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("unknown screen {0}")]
    UnknownScreen(String),
    #[error("cannot read layout {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Yaw, pitch and roll of a screen in radians. At zero the screen faces a
/// viewer looking along +x; roll turns the screen about that viewing axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub yaw: f64,
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub center: Vec3,
    pub orientation: Orientation,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub node_address: String,
    #[serde(default)]
    pub gpu_port: u16,
}

impl Screen {
    /// `(right, up, normal)` of the screen surface; the normal points back
    /// toward the viewer.
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let (forward, right, up) = CameraPose::new(Vec3::zeros(), self.orientation.yaw, self.orientation.pitch).basis();
        let (sr, cr) = self.orientation.roll.sin_cos();
        let r = right * cr + up * sr;
        let u = up * cr - right * sr;
        (r, u, -forward)
    }

    /// Lower-left, lower-right, upper-right and upper-left corners.
    pub fn corners(&self) -> [Vec3; 4] {
        let (r, u, _) = self.axes();
        let (hw, hh) = (r * (self.width * 0.5), u * (self.height * 0.5));
        [self.center - hw - hh, self.center + hw - hh, self.center + hw + hh, self.center - hw + hh]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayLayout {
    pub screens: Vec<Screen>,
    pub head: Vec3,
}

impl DisplayLayout {
    /// One screen of the given size straight ahead of a head at the origin.
    pub fn single(width: f64, height: f64, distance: f64) -> Self {
        Self {
            screens: vec![Screen {
                id: "main".into(),
                center: Vec3::new(distance, 0.0, 0.0),
                orientation: Orientation::default(),
                width,
                height,
                node_address: String::new(),
                gpu_port: 0,
            }],
            head: Vec3::zeros(),
        }
    }

    /// Four walls of a square room of side `side` and height `height`, head
    /// at the room center, screens facing +x, +y, −x, −y in that order.
    pub fn four_walls(side: f64, height: f64) -> Self {
        let names = ["front", "left", "back", "right"];
        let screens = (0..4)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::FRAC_PI_2;
                Screen {
                    id: names[i].into(),
                    center: Vec3::new(yaw.cos(), yaw.sin(), 0.0) * (side * 0.5),
                    orientation: Orientation { yaw, pitch: 0.0, roll: 0.0 },
                    width: side,
                    height,
                    node_address: format!("wall{i}:9000"),
                    gpu_port: i as u16,
                }
            })
            .collect();
        Self { screens, head: Vec3::zeros() }
    }

    pub fn load(path: &Path) -> Result<Self, LayoutError> {
        let read = |reason: String| LayoutError::Read { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| read(e.to_string()))?;
        let layout: Self = serde_json::from_str(&text).map_err(|e| read(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn screen(&self, id: &str) -> Result<&Screen, LayoutError> {
        self.screens.iter().find(|s| s.id == id).ok_or_else(|| LayoutError::UnknownScreen(id.into()))
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.screens.is_empty() {
            return Err(LayoutError::Invalid("layout has no screens".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.screens {
            if !ids.insert(s.id.as_str()) {
                return Err(LayoutError::Invalid(format!("duplicate screen id {}", s.id)));
            }
            let finite = s.center.iter().all(|c| c.is_finite())
                && [s.orientation.yaw, s.orientation.pitch, s.orientation.roll].iter().all(|a| a.is_finite());
            if !finite || !(s.width > 0.0 && s.height > 0.0) {
                return Err(LayoutError::Invalid(format!("screen {} needs finite pose and positive size", s.id)));
            }
            head_distance(self.head, s)?;
        }
        Ok(())
    }

    /// Yaw of each screen relative to the first one.
    pub fn relative_yaws(&self) -> Vec<f64> {
        let base = self.screens.first().map_or(0.0, |s| s.orientation.yaw);
        self.screens.iter().map(|s| s.orientation.yaw - base).collect()
    }
}

fn head_distance(head: Vec3, screen: &Screen) -> Result<f64, LayoutError> {
    let (_, _, n) = screen.axes();
    let d = n.dot(&(head - screen.center));
    if !(d > 1e-9 * screen.width.max(screen.height)) {
        return Err(LayoutError::DegenerateGeometry(screen.id.clone()));
    }
    Ok(d)
}

/// Rigid map from the physical frame (head at origin, facing +x) into the
/// virtual scene placed at the `virtual_head` pose.
fn virtual_rotation(virtual_head: &CameraPose) -> Rotation3<f64> {
    let (forward, right, up) = virtual_head.basis();
    Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[forward, -right, up]))
}

/// Generalized perspective frustum whose image plane is `screen` as seen
/// from the layout head, carried into the scene by `virtual_head`.
pub fn frustum_for_screen(
    layout: &DisplayLayout,
    screen: &Screen,
    virtual_head: &CameraPose,
    near: f64,
    far: f64,
) -> Result<Frustum, LayoutError> {
    if !(near > 0.0 && near < far) {
        return Err(LayoutError::Invalid(format!("need 0 < near < far, got {near}, {far}")));
    }
    let d = head_distance(layout.head, screen)?;
    let (vr, vu, vn) = screen.axes();
    let [pa, pb, _, pc] = screen.corners().map(|c| c - layout.head);
    let s = near / d;
    let extents = [vr.dot(&pa) * s, vr.dot(&pb) * s, vu.dot(&pa) * s, vu.dot(&pc) * s];
    let rot = virtual_rotation(virtual_head);
    Ok(Frustum::off_axis(virtual_head.position, rot * -vn, rot * vr, rot * vu, extents, near, far))
}

/// Ground square of scene data needed to fill `screen`.
pub fn data_extents(
    layout: &DisplayLayout,
    screen: &Screen,
    virtual_head: &CameraPose,
    near: f64,
    far: f64,
    buffer: f64,
) -> Result<Square, LayoutError> {
    let f = frustum_for_screen(layout, screen, virtual_head, near, far)?;
    Ok(init_bounds_for_display(&f, buffer))
}

/// Smallest square holding every screen's data extents.
pub fn layout_extents(
    layout: &DisplayLayout,
    virtual_head: &CameraPose,
    near: f64,
    far: f64,
    buffer: f64,
) -> Result<Square, LayoutError> {
    let mut acc: Option<crate::geom::Aabb2> = None;
    for s in &layout.screens {
        let b = data_extents(layout, s, virtual_head, near, far, buffer)?.aabb();
        acc = Some(acc.map_or(b, |a| a.union(b)));
    }
    let a = acc.ok_or_else(|| LayoutError::Invalid("layout has no screens".into()))?;
    Ok(Square::centered(a.center(), a.width().max(a.height())))
}

/// Per-screen frustum sanity figures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenReport {
    pub id: String,
    pub head_distance: f64,
    /// Left, right, bottom and top half-angles in degrees; negative values
    /// mean the edge lies on the other side of the screen normal.
    pub half_angles_deg: [f64; 4],
    pub corner_ndc_error: f64,
}

pub fn layout_report(layout: &DisplayLayout, near: f64, far: f64) -> Result<Vec<ScreenReport>, LayoutError> {
    layout.validate()?;
    let pose = CameraPose::new(Vec3::zeros(), 0.0, 0.0);
    layout
        .screens
        .iter()
        .map(|s| {
            let f = frustum_for_screen(layout, s, &pose, near, far)?;
            let d = head_distance(layout.head, s)?;
            let (vr, vu, _) = s.axes();
            let [pa, pb, _, pc] = s.corners().map(|c| c - layout.head);
            let deg = |x: f64| (x / d).atan().to_degrees();
            let half_angles_deg = [-deg(vr.dot(&pa)), deg(vr.dot(&pb)), -deg(vu.dot(&pa)), deg(vu.dot(&pc))];
            let expect = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
            let corner_ndc_error = s
                .corners()
                .iter()
                .zip(expect)
                .map(|(c, (ex, ey))| {
                    let ndc = f.project_ndc(&(c - layout.head));
                    (ndc.x - ex).abs().max((ndc.y - ey).abs())
                })
                .fold(0.0, f64::max);
            Ok(ScreenReport { id: s.id.clone(), head_distance: d, half_angles_deg, corner_ndc_error })
        })
        .collect()
}
