//! Gerstner waves driven by the interpolated tidal velocity field.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Vec2, Vec3};
use crate::heightfield::{CellClass, HeightFieldQuadtree, HeightSampler, HeightfieldError};
use crate::scenario::{OutOfExtent, TerrainDem};

pub const GRAVITY: f64 = 9.81;
/// Amplitude a clamped vertex keeps, in meters.
pub const MIN_AMPLITUDE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveError {
    #[error("invalid wave parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Field(#[from] HeightfieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub wavelength: f64,
    pub steepness: f64,
    pub direction: Vec2,
    pub gravity: f64,
}

impl WaveParams {
    pub fn new(wavelength: f64, steepness: f64, direction: Vec2) -> Self {
        Self { wavelength, steepness, direction, gravity: GRAVITY }
    }

    pub fn validate(&self) -> Result<(), WaveError> {
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(WaveError::InvalidParams(format!("wavelength {}", self.wavelength)));
        }
        if !(0.0..=1.0).contains(&self.steepness) {
            return Err(WaveError::InvalidParams(format!("steepness {}", self.steepness)));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(WaveError::InvalidParams("direction must be a unit vector".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        TAU / self.wavelength
    }

    pub fn c(&self) -> f64 {
        (self.gravity / self.k()).sqrt()
    }

    pub fn amplitude(&self) -> f64 {
        self.steepness / self.k()
    }

    pub fn phase(&self, p: Vec2, t: f64) -> f64 {
        self.k() * p.dot(&self.direction) - self.c() * t
    }

    /// Time after which the wave repeats.
    pub fn period(&self) -> f64 {
        TAU / self.c()
    }
}

/// Displacement vector of one wave at `p`.
pub fn gerstner_offset(p: &Vec3, w: &WaveParams, t: f64) -> Vec3 {
    let f = w.phase(p.xy(), t);
    let a = w.amplitude();
    Vec3::new(w.direction.x * a * f.cos(), w.direction.y * a * f.cos(), a * f.sin())
}

/// Displaced position of `p`.
pub fn gerstner_displace(p: &Vec3, w: &WaveParams, t: f64) -> Vec3 {
    p + gerstner_offset(p, w, t)
}

/// Deviation of the two surface tangents from (1,0,0) and (0,1,0).
fn tangent_deltas(p: &Vec3, w: &WaveParams, t: f64) -> (Vec3, Vec3) {
    let f = w.phase(p.xy(), t);
    let (sn, cs) = f.sin_cos();
    let (vx, vy, s) = (w.direction.x, w.direction.y, w.steepness);
    (
        Vec3::new(-vx * vx * s * sn, -vx * vy * s * sn, vx * s * cs),
        Vec3::new(-vx * vy * s * sn, -vy * vy * s * sn, vy * s * cs),
    )
}

fn normal_from_deltas(dx: &Vec3, dy: &Vec3) -> Vec3 {
    let tx = Vec3::x() + dx;
    let ty = Vec3::y() + dy;
    tx.cross(&ty).normalize()
}

/// Unit normal of the displaced surface from its analytic tangents.
pub fn analytic_normal(p: &Vec3, w: &WaveParams, t: f64) -> Vec3 {
    let (dx, dy) = tangent_deltas(p, w, t);
    normal_from_deltas(&dx, &dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tile {
    pub min: Vec2,
    pub max: Vec2,
}

impl Tile {
    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }
}

/// Tile of side 2λ on the 2λ lattice containing `p`.
pub fn tile_of(p: Vec2, wavelength: f64) -> Tile {
    let span = 2.0 * wavelength;
    let min = Vec2::new((p.x / span).floor() * span, (p.y / span).floor() * span);
    Tile { min, max: min + Vec2::repeat(span) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    /// Weights ½ − ½cos(πΔ/λ), spanning [0, 1] across the overlap.
    #[default]
    Cosine,
    /// Weights ½ − ½cos(Δ/2λ) exactly as printed; kept for comparison.
    Printed,
}

pub fn blend_weight(delta: f64, wavelength: f64, mode: BlendMode) -> f64 {
    match mode {
        BlendMode::Cosine => 0.5 - 0.5 * (PI * delta / wavelength).cos(),
        BlendMode::Printed => 0.5 - 0.5 * (delta / (2.0 * wavelength)).cos(),
    }
}

/// The four overlapping tiles around `p`, as tile-center lattice indices
/// (center = index·λ) with their blend weights: own tile, x-shifted,
/// y-shifted and diagonal.
pub fn blend_tiles(p: Vec2, wavelength: f64, mode: BlendMode) -> [((i64, i64), f64); 4] {
    let own = tile_of(p, wavelength).center();
    let ix = (own.x / wavelength).round() as i64;
    let iy = (own.y / wavelength).round() as i64;
    let sx = if p.x >= own.x { 1 } else { -1 };
    let sy = if p.y >= own.y { 1 } else { -1 };
    let a = blend_weight((p.x - own.x).abs(), wavelength, mode);
    let b = blend_weight((p.y - own.y).abs(), wavelength, mode);
    [
        ((ix, iy), (1.0 - a) * (1.0 - b)),
        ((ix + sx, iy), a * (1.0 - b)),
        ((ix, iy + sy), (1.0 - a) * b),
        ((ix + sx, iy + sy), a * b),
    ]
}

/// Wavelength ladder λ_i = r_i·2^i·λ₀ with seeded r_i ∈ [0.8, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveCascade {
    pub lambda0: f64,
    pub levels: usize,
    pub ratios: Vec<f64>,
    pub seed: u64,
    /// Steepness used by every level.
    pub steepness: f64,
}

pub const DEFAULT_LAMBDA0: f64 = 4.0;
pub const DEFAULT_LEVELS: usize = 4;

impl WaveCascade {
    pub fn new(lambda0: f64, levels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ratios = (0..levels).map(|_| rng.random_range(0.8..=1.0)).collect();
        Self { lambda0, levels, ratios, seed, steepness: 0.4 / (levels + 1) as f64 }
    }

    pub fn with_steepness(mut self, s: f64) -> Self {
        self.steepness = s;
        self
    }

    /// λ₀ followed by the cascade levels.
    pub fn wavelengths(&self) -> Vec<f64> {
        std::iter::once(self.lambda0)
            .chain(self.ratios.iter().enumerate().map(|(i, r)| r * 2f64.powi(i as i32 + 1) * self.lambda0))
            .collect()
    }

    pub fn validate(&self) -> Result<(), WaveError> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(WaveError::InvalidParams(format!("lambda0 {}", self.lambda0)));
        }
        if self.ratios.len() != self.levels || self.ratios.iter().any(|r| !(0.8..=1.0).contains(r)) {
            return Err(WaveError::InvalidParams("ratios must lie in [0.8, 1]".into()));
        }
        if self.steepness < 0.0 || self.steepness * (self.levels + 1) as f64 > 1.0 + 1e-12 {
            return Err(WaveError::InvalidParams("total steepness exceeds 1".into()));
        }
        if self.wavelengths().windows(2).any(|w| w[1] <= w[0]) {
            return Err(WaveError::InvalidParams("wavelengths must increase".into()));
        }
        Ok(())
    }
}

impl Default for WaveCascade {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA0, DEFAULT_LEVELS, 0)
    }
}

/// Displacement, tangent deviations and amplitude bound of a wave sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WaveSample {
    pub offset: Vec3,
    pub dx: Vec3,
    pub dy: Vec3,
    /// Upper bound of the vertical excursion.
    pub amplitude: f64,
}

impl WaveSample {
    pub fn normal(&self) -> Vec3 {
        normal_from_deltas(&self.dx, &self.dy)
    }

    fn add_scaled(&mut self, other: &WaveSample, w: f64) {
        self.offset += other.offset * w;
        self.dx += other.dx * w;
        self.dy += other.dy * w;
        self.amplitude += other.amplitude * w;
    }
}

/// Evaluates tile-blended waves over a height-field, caching per-tile
/// directions. Not shared between threads; clone per worker.
pub struct WaveField<'a> {
    tree: &'a HeightFieldQuadtree,
    sampler: HeightSampler<'a>,
    pub cascade: WaveCascade,
    pub mode: BlendMode,
    pub gravity: f64,
    directions: HashMap<(u64, i64, i64), Option<Vec2>>,
}

impl<'a> WaveField<'a> {
    pub fn new(tree: &'a HeightFieldQuadtree, cascade: WaveCascade) -> Self {
        Self {
            tree,
            sampler: tree.sampler(tree.max_depth()),
            cascade,
            mode: BlendMode::default(),
            gravity: GRAVITY,
            directions: HashMap::default(),
        }
    }

    pub fn with_mode(mut self, mode: BlendMode) -> Self {
        self.mode = mode;
        self
    }

    /// Lattice level velocities are read at for tiles of `wavelength`: the
    /// first whose cells fit inside it, or the full depth.
    pub fn tile_level(&self, wavelength: f64) -> u8 {
        let frame = self.tree.frame();
        (0..self.tree.max_depth()).find(|&l| frame.cell_size(l) <= wavelength).unwrap_or(self.tree.max_depth())
    }

    /// Mean tidal direction over the four corners of the tile centered at
    /// `index·λ`; `None` when the mean flow vanishes.
    pub fn tile_direction(&mut self, wavelength: f64, index: (i64, i64)) -> Option<Vec2> {
        let key = (wavelength.to_bits(), index.0, index.1);
        if let Some(d) = self.directions.get(&key) {
            return *d;
        }
        let level = self.tile_level(wavelength);
        let c = Vec2::new(index.0 as f64 * wavelength, index.1 as f64 * wavelength);
        let mut sum = Vec2::zeros();
        for (dx, dy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            sum += self.sampler.sample_clamped_at(c + Vec2::new(dx, dy) * wavelength, level).1;
        }
        let mean = sum / 4.0;
        let dir = (mean.norm() > 1e-12).then(|| mean.normalize());
        self.directions.insert(key, dir);
        dir
    }

    /// Tile-blended wave at one wavelength.
    pub fn blended(&mut self, p: &Vec3, wavelength: f64, steepness: f64, t: f64) -> Result<WaveSample, WaveError> {
        if !self.tree.bounds().contains(p.xy()) {
            return Err(HeightfieldError::OutOfBounds { x: p.x, y: p.y }.into());
        }
        let mut out = WaveSample::default();
        for (index, weight) in blend_tiles(p.xy(), wavelength, self.mode) {
            if weight == 0.0 {
                continue;
            }
            let Some(direction) = self.tile_direction(wavelength, index) else { continue };
            let w = WaveParams { wavelength, steepness, direction, gravity: self.gravity };
            let (dx, dy) = tangent_deltas(p, &w, t);
            let sample = WaveSample { offset: gerstner_offset(p, &w, t), dx, dy, amplitude: w.amplitude() };
            out.add_scaled(&sample, weight);
        }
        Ok(out)
    }

    /// Displacement of the blended wave at `wavelength` with cascade steepness.
    pub fn blended_wave(&mut self, p: &Vec3, wavelength: f64, t: f64) -> Result<Vec3, WaveError> {
        let s = self.cascade.steepness;
        Ok(self.blended(p, wavelength, s, t)?.offset)
    }

    /// True where the full-depth leaf under `p` is dry.
    pub fn is_dry(&self, p: Vec2) -> Result<bool, WaveError> {
        Ok(self.tree.leaf_at(p)?.node.class == CellClass::Dry)
    }

    /// Sum over the cascade; the shortest wave is muted over dry leaves.
    pub fn evaluate(&mut self, p: &Vec3, t: f64) -> Result<WaveSample, WaveError> {
        let dry = self.is_dry(p.xy())?;
        let s = self.cascade.steepness;
        let mut out = WaveSample::default();
        for (i, lambda) in self.cascade.wavelengths().into_iter().enumerate() {
            if i == 0 && dry {
                continue;
            }
            let level = self.blended(p, lambda, s, t)?;
            out.add_scaled(&level, 1.0);
        }
        Ok(out)
    }

    pub fn superpose(&mut self, p: &Vec3, t: f64) -> Result<Vec3, WaveError> {
        Ok(self.evaluate(p, t)?.offset)
    }
}

/// Result of [`clamp_against_terrain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub displacement: Vec3,
    pub hidden: bool,
    pub clamped: bool,
}

/// Shrinks the wave to [`MIN_AMPLITUDE`] where its trough would cut the
/// terrain and hides vertices whose resting height is under the terrain.
/// `amplitude` is the vertical excursion bound of `displacement`.
pub fn clamp_against_terrain(p: &Vec3, displacement: Vec3, amplitude: f64, dem: &TerrainDem) -> Result<Clamped, OutOfExtent> {
    let ground = dem.height_at(p.xy())?;
    if p.z < ground {
        return Ok(Clamped { displacement, hidden: true, clamped: false });
    }
    if p.z - amplitude < ground && amplitude > MIN_AMPLITUDE {
        let scale = MIN_AMPLITUDE / amplitude;
        return Ok(Clamped { displacement: displacement * scale, hidden: false, clamped: true });
    }
    Ok(Clamped { displacement, hidden: false, clamped: false })
}

#[cfg(test)]
mod tests;
