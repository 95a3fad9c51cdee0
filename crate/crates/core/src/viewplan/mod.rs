//! Camera viewpoint scoring, swarm search over poses, greedy multi-POI
//! covering and navigation paths between viewpoints.

mod grid;
mod path;
mod pso;

pub use grid::{distance_transform, polygon_overlaps_rect, ShoreField, VisibilityGrid};
pub use path::{detour_control, plan_path, plan_path_with, LookKey, PathConfig, PathError, PathSegment, SegmentKind, ViewPlan};
pub use pso::{pso_minimize, PsoConfig, PsoResult};

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::displaywall::DisplayLayout;
use crate::geom::{CameraPose, Poi, Vec3};
use crate::scenario::{FloodScenario, OffshoreMask};

/// Default visibility cell size in meters.
pub const DEFAULT_CELL_SIZE: f64 = 50.0;

/// How several screens combine into one pose score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiDisplayMode {
    /// Each POI is scored by the screen whose yawed pose frames it best.
    #[default]
    PerPoiBest,
    /// Full objective per yawed pose, summed over screens.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub omega_u: f64,
    /// Constant per-POI offset Ω.
    pub omega: f64,
    pub omega_o: f64,
    pub omega_d: f64,
    pub omega_l: f64,
    /// Largest allowed pitch magnitude A_p, radians.
    pub max_pitch: f64,
    /// Largest allowed normalized distance K, meters.
    pub max_distance: f64,
    /// Distance normalizer k, meters.
    pub distance_norm: f64,
    pub e_r: f64,
    pub e_o: f64,
    pub e_d: f64,
    pub e_l: f64,
    pub multi_display: MultiDisplayMode,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            omega_u: 0.5,
            omega: 10.0,
            omega_o: 1.0,
            omega_d: 1.0,
            omega_l: 0.5,
            max_pitch: FRAC_PI_3,
            max_distance: 500.0,
            distance_norm: 500.0,
            e_r: 100.0,
            e_o: 100.0,
            e_d: 100.0,
            e_l: 100.0,
            multi_display: MultiDisplayMode::PerPoiBest,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("max pitch {0} outside [0, π/2]")]
    MaxPitch(f64),
    #[error("distance constants must be positive (K = {0}, k = {1})")]
    Distance(f64, f64),
    #[error("weight {0} must be finite and non-negative")]
    Weight(&'static str),
    #[error("penalty {name} = {value} does not exceed the largest regular score {bound}")]
    PenaltyNotDominant { name: &'static str, value: f64, bound: f64 },
}

impl ObjectiveWeights {
    /// Single tiled-display preset: POIs centered and close.
    pub fn tiled_display() -> Self {
        Self { omega_u: 0.9, max_pitch: PI / 12.0, omega_d: 0.75, max_distance: 500.0, distance_norm: 500.0, ..Self::default() }
    }

    /// Four-wall room preset: wide field of view, several POIs per view.
    pub fn four_wall_room() -> Self {
        Self { omega_u: 0.1, max_pitch: PI / 6.0, omega_d: 0.25, max_distance: 1000.0, distance_norm: 1000.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        if !(0.0..=FRAC_PI_2).contains(&self.max_pitch) {
            return Err(WeightError::MaxPitch(self.max_pitch));
        }
        if !(self.max_distance > 0.0 && self.distance_norm > 0.0) {
            return Err(WeightError::Distance(self.max_distance, self.distance_norm));
        }
        let named = [
            ("omega_u", self.omega_u),
            ("omega", self.omega),
            ("omega_o", self.omega_o),
            ("omega_d", self.omega_d),
            ("omega_l", self.omega_l),
            ("e_r", self.e_r),
            ("e_o", self.e_o),
            ("e_d", self.e_d),
            ("e_l", self.e_l),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(WeightError::Weight(name));
            }
        }
        Ok(())
    }

    /// Largest per-POI score of a pose with no penalty active, minus Ω.
    pub fn regular_bound(&self) -> f64 {
        self.omega_u + 1.0 + self.omega_d * self.max_distance
    }

    /// Checks that every penalty, once weighted, makes a violating pose
    /// score strictly worse than any non-violating one for the same POI.
    pub fn check_dominance(&self) -> Result<(), WeightError> {
        let bound = self.regular_bound();
        // a violating pose still collects at best R = −1 from the other terms
        let checks = [
            ("e_r", self.e_r, self.e_r),
            ("e_o", self.e_o, self.omega_o * self.e_o - 1.0),
            ("e_d", self.e_d, self.omega_d * self.e_d - 1.0),
            ("e_l", self.e_l, self.omega_l * self.e_l - 1.0),
        ];
        for (name, value, worst_case) in checks {
            if !(worst_case > bound) {
                return Err(WeightError::PenaltyNotDominant { name, value, bound });
            }
        }
        Ok(())
    }

    /// Copy with each penalty raised just enough to dominate.
    pub fn with_dominant_penalties(&self) -> Self {
        let bound = self.regular_bound() + 1.0;
        let lift = |e: f64, w: f64| if w > 0.0 { e.max((bound + 1.0) / w) } else { e };
        Self {
            e_r: self.e_r.max(bound),
            e_o: lift(self.e_o, self.omega_o),
            e_d: lift(self.e_d, self.omega_d),
            e_l: lift(self.e_l, self.omega_l),
            ..self.clone()
        }
    }

    /// Every weight, Ω and penalty multiplied by `c`. Thresholds stay.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            omega_u: self.omega_u * c,
            omega: self.omega * c,
            omega_o: self.omega_o * c,
            omega_d: self.omega_d * c,
            omega_l: self.omega_l * c,
            e_r: self.e_r * c,
            e_o: self.e_o * c,
            e_d: self.e_d * c,
            e_l: self.e_l * c,
            ..self.clone()
        }
    }
}

/// View coverage: pitch eccentricity against alignment of the look-at with
/// the unit camera-to-POI direction.
pub fn term_r(v: &CameraPose, poi: &Poi, w: &ObjectiveWeights) -> f64 {
    let a_p = v.pitch.abs();
    if a_p > w.max_pitch {
        return w.e_r;
    }
    let pq = poi.position - v.position;
    let align = if pq.norm() > 0.0 { pq.normalize().dot(&v.direction()) } else { 0.0 };
    w.omega_u * (2.0 * a_p / PI).powi(2) - align
}

/// Occlusion: `E_O` when the sight line from the camera to the POI's
/// bounding sphere enters an obstacle column or another POI's sphere.
pub fn term_o(v: &CameraPose, poi: &Poi, grid: &VisibilityGrid, others: &[Poi], w: &ObjectiveWeights) -> f64 {
    if occluded(v.position, poi, grid, others) {
        w.e_o
    } else {
        0.0
    }
}

pub fn occluded(eye: Vec3, poi: &Poi, grid: &VisibilityGrid, others: &[Poi]) -> bool {
    let to = poi.position - eye;
    let len = to.norm();
    if len <= poi.radius {
        return false;
    }
    let end = eye + to * ((len - poi.radius) / len);
    if grid.segment_blocked(eye, end) {
        return true;
    }
    // a sphere around the target itself is never in front of it
    others.iter().any(|o| {
        o.id != poi.id && (o.position - poi.position).norm() >= o.radius && segment_hits_sphere(eye, end, o.position, o.radius)
    })
}

fn segment_hits_sphere(a: Vec3, b: Vec3, c: Vec3, r: f64) -> bool {
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { ((c - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - c).norm() < r
}

/// Normalized squared distance, or `E_D` beyond the allowed range.
pub fn term_d(v: &CameraPose, poi: &Poi, w: &ObjectiveWeights) -> f64 {
    let d = (poi.position - v.position).norm_squared() / w.distance_norm;
    if d > w.max_distance {
        w.e_d
    } else {
        d
    }
}

/// Coastal vicinity: free over offshore cells, `E_L` elsewhere including
/// outside the mask.
pub fn term_l(v: &CameraPose, mask: Option<&OffshoreMask>, w: &ObjectiveWeights) -> f64 {
    match mask.and_then(|m| m.is_offshore(v.position.xy())) {
        Some(true) => 0.0,
        _ => w.e_l,
    }
}

/// The four terms of one POI at one pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoiTerms {
    pub r: f64,
    pub o: f64,
    pub d: f64,
    pub l: f64,
    pub penalty_free: bool,
}

impl PoiTerms {
    pub fn total(&self, w: &ObjectiveWeights) -> f64 {
        w.omega + self.r + w.omega_o * self.o + w.omega_d * self.d + w.omega_l * self.l
    }
}

/// Obstacles and offshore mask a pose is scored against.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub grid: &'a VisibilityGrid,
    pub mask: Option<&'a OffshoreMask>,
}

pub fn poi_terms(v: &CameraPose, poi: &Poi, others: &[Poi], w: &ObjectiveWeights, scene: Scene<'_>) -> PoiTerms {
    let pitch_ok = v.pitch.abs() <= w.max_pitch;
    let r = term_r(v, poi, w);
    let occ = occluded(v.position, poi, scene.grid, others);
    let dist_ok = (poi.position - v.position).norm_squared() / w.distance_norm <= w.max_distance;
    let offshore = matches!(scene.mask.and_then(|m| m.is_offshore(v.position.xy())), Some(true));
    PoiTerms {
        r,
        o: if occ { w.e_o } else { 0.0 },
        d: term_d(v, poi, w),
        l: term_l(v, scene.mask, w),
        penalty_free: pitch_ok && !occ && dist_ok && offshore,
    }
}

/// Sum over POIs of Ω + R + ω_o·O + ω_d·D + ω_l·L.
pub fn objective(v: &CameraPose, pois: &[Poi], w: &ObjectiveWeights, grid: &VisibilityGrid, mask: Option<&OffshoreMask>) -> f64 {
    let scene = Scene { grid, mask };
    pois.iter().map(|p| poi_terms(v, p, pois, w, scene).total(w)).sum()
}

/// Per-POI terms under a display layout: for each POI, the terms and the
/// screen index used for it.
pub fn layout_poi_terms(
    v: &CameraPose,
    pois: &[Poi],
    layout: &DisplayLayout,
    w: &ObjectiveWeights,
    scene: Scene<'_>,
) -> Vec<(usize, PoiTerms)> {
    let yaws = layout.relative_yaws();
    pois.iter()
        .map(|p| {
            let mut best: Option<(usize, PoiTerms)> = None;
            for (i, &dy) in yaws.iter().enumerate() {
                let t = poi_terms(&v.rotated_yaw(dy), p, pois, w, scene);
                if best.as_ref().is_none_or(|(_, b)| t.total(w) < b.total(w)) {
                    best = Some((i, t));
                }
            }
            best.expect("layout has screens")
        })
        .collect()
}

/// Pose score for a multi-screen layout. One screen reduces to
/// [`objective`]. Otherwise the pose is yawed into each screen's facing
/// relative to the first screen and combined per [`MultiDisplayMode`].
pub fn objective_multidisplay(
    v: &CameraPose,
    pois: &[Poi],
    layout: &DisplayLayout,
    w: &ObjectiveWeights,
    grid: &VisibilityGrid,
    mask: Option<&OffshoreMask>,
) -> f64 {
    if layout.screens.len() <= 1 {
        return objective(v, pois, w, grid, mask);
    }
    match w.multi_display {
        MultiDisplayMode::Sum => layout.relative_yaws().iter().map(|&dy| objective(&v.rotated_yaw(dy), pois, w, grid, mask)).sum(),
        MultiDisplayMode::PerPoiBest => {
            layout_poi_terms(v, pois, layout, w, Scene { grid, mask }).iter().map(|(_, t)| t.total(w)).sum()
        }
    }
}

/// Search box over `(x, y, z, yaw, pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseBounds {
    pub min: [f64; 5],
    pub max: [f64; 5],
}

impl PoseBounds {
    /// Scenario footprint, altitudes from just above the lowest terrain to
    /// `altitude` above the highest column, any yaw, pitch within ±A_p.
    pub fn for_scene(grid: &VisibilityGrid, w: &ObjectiveWeights, altitude: f64) -> Self {
        let e = grid.extent();
        let z0 = grid.min_terrain() + 1.0;
        Self {
            min: [e.min.x, e.min.y, z0, -PI, -w.max_pitch],
            max: [e.max.x, e.max.y, grid.max_height().max(z0) + altitude, PI, w.max_pitch],
        }
    }

    pub fn pose(x: &[f64; 5]) -> CameraPose {
        CameraPose::new(Vec3::new(x[0], x[1], x[2]), x[3], x[4])
    }

    pub fn ranges(&self) -> [(f64, f64); 5] {
        std::array::from_fn(|k| (self.min[k], self.max[k]))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no POIs to plan for")]
    NoPois,
    #[error("POIs {ids:?} cannot be viewed without a penalty")]
    Unreachable { ids: Vec<u64>, viewpoints: Vec<CameraPose> },
    #[error(transparent)]
    Weights(#[from] WeightError),
}

/// Everything [`plan_views`] needs about the scene.
#[derive(Debug, Clone)]
pub struct PlanContext {
    pub grid: VisibilityGrid,
    pub mask: Option<OffshoreMask>,
    pub bounds: PoseBounds,
}

impl PlanContext {
    pub fn new(scenario: &FloodScenario, w: &ObjectiveWeights, cell_size: f64, altitude: f64) -> Self {
        let grid = VisibilityGrid::build(scenario, cell_size);
        let bounds = PoseBounds::for_scene(&grid, w, altitude);
        Self { grid, mask: Some(scenario.offshore().clone()), bounds }
    }

    pub fn scene(&self) -> Scene<'_> {
        Scene { grid: &self.grid, mask: self.mask.as_ref() }
    }
}

/// Greedy penalty-free cover of `pois`: optimize over the uncovered set,
/// mark the POIs the winning pose frames without any penalty, repeat.
/// A set that yields no covered POI falls back to its first POI alone; a
/// POI that fails alone too is reported as unreachable.
pub fn plan_views(
    pois: &[Poi],
    layout: &DisplayLayout,
    ctx: &PlanContext,
    w: &ObjectiveWeights,
    cfg: &PsoConfig,
) -> Result<Vec<CameraPose>, PlanError> {
    if pois.is_empty() {
        return Err(PlanError::NoPois);
    }
    w.validate()?;
    let scene = ctx.scene();
    let ranges = ctx.bounds.ranges();
    let mut uncovered: Vec<Poi> = pois.to_vec();
    let mut poses = Vec::new();
    let mut unreachable = Vec::new();
    let mut round = 0u64;
    while !uncovered.is_empty() {
        let run = |set: &[Poi], round: u64| {
            let cfg = PsoConfig { seed: cfg.seed.wrapping_add(round), ..*cfg };
            let res = pso_minimize(
                |x| objective_multidisplay(&PoseBounds::pose(x), set, layout, w, scene.grid, scene.mask),
                &ranges,
                &cfg,
            );
            let pose = PoseBounds::pose(&res.best);
            let free: Vec<u64> = layout_poi_terms(&pose, set, layout, w, scene)
                .iter()
                .zip(set)
                .filter(|((_, t), _)| t.penalty_free)
                .map(|(_, p)| p.id)
                .collect();
            (pose, free)
        };
        let (pose, free) = run(&uncovered, round);
        round += 1;
        if !free.is_empty() {
            poses.push(pose);
            uncovered.retain(|p| !free.contains(&p.id));
            continue;
        }
        let first = uncovered.remove(0);
        if uncovered.is_empty() {
            unreachable.push(first.id);
            break;
        }
        let (pose, free) = run(std::slice::from_ref(&first), round);
        round += 1;
        if free.is_empty() {
            unreachable.push(first.id);
        } else {
            poses.push(pose);
        }
    }
    if unreachable.is_empty() {
        Ok(poses)
    } else {
        Err(PlanError::Unreachable { ids: unreachable, viewpoints: poses })
    }
}
