//! Flood scenario values: datapoints with per-timepoint samples, terrain
//! raster, offshore mask and buildings.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb2, Building, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("point ({x}, {y}) lies outside the raster extent")]
pub struct OutOfExtent {
    pub x: f64,
    pub y: f64,
}

/// Lazily computed cache that never takes part in equality.
#[derive(Debug)]
pub(crate) struct Memo<T>(OnceLock<T>);

impl<T> Default for Memo<T> {
    fn default() -> Self {
        Self(OnceLock::new())
    }
}

impl<T> Memo<T> {
    pub(crate) fn get_or_init(&self, f: impl FnOnce() -> T) -> &T {
        self.0.get_or_init(f)
    }
}

impl<T> Clone for Memo<T> {
    fn clone(&self) -> Self {
        Self(OnceLock::new())
    }
}

impl<T> PartialEq for Memo<T> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Regular raster layout. Row 0 is the southern row; `origin` is the
/// lower-left corner of cell (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec2,
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new((col as f64 + 0.5) * self.cell_size, (row as f64 + 0.5) * self.cell_size)
    }

    pub fn extent(&self) -> Aabb2 {
        Aabb2::new(
            self.origin,
            self.origin + Vec2::new(self.cols as f64 * self.cell_size, self.rows as f64 * self.cell_size),
        )
    }

    /// Cell holding `p`; points on the far edges belong to the last cell.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        if !self.extent().contains(p) {
            return None;
        }
        let col = (((p.x - self.origin.x) / self.cell_size).floor() as usize).min(self.cols - 1);
        let row = (((p.y - self.origin.y) / self.cell_size).floor() as usize).min(self.rows - 1);
        Some((row, col))
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inclusive index range of cell centers within `[lo, hi]` along one axis.
    fn center_range(&self, lo: f64, hi: f64, origin: f64, count: usize) -> Option<(usize, usize)> {
        let first = ((lo - origin) / self.cell_size - 0.5).ceil().max(0.0);
        let last = ((hi - origin) / self.cell_size - 0.5).floor().min(count as f64 - 1.0);
        if first > last {
            None
        } else {
            Some((first as usize, last as usize))
        }
    }

    /// Row and column ranges of the cells whose centers lie inside `area`.
    pub fn centers_within(&self, area: &Aabb2) -> Option<((usize, usize), (usize, usize))> {
        let rows = self.center_range(area.min.y, area.max.y, self.origin.y, self.rows)?;
        let cols = self.center_range(area.min.x, area.max.x, self.origin.x, self.cols)?;
        Some((rows, cols))
    }
}

/// Terrain elevation raster, meters above datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainDem {
    pub spec: GridSpec,
    pub elevations: Vec<f64>,
    #[serde(skip)]
    summed: Memo<Vec<f64>>,
}

impl TerrainDem {
    pub fn new(spec: GridSpec, elevations: Vec<f64>) -> Result<Self, String> {
        if !(spec.cell_size > 0.0) {
            return Err("cell size must be positive".into());
        }
        if spec.rows == 0 || spec.cols == 0 {
            return Err("raster must have at least one cell".into());
        }
        if elevations.len() != spec.len() {
            return Err(format!("expected {} elevations, got {}", spec.len(), elevations.len()));
        }
        Ok(Self { spec, elevations, summed: Memo::default() })
    }

    /// Constant-height raster, mostly for fixtures.
    pub fn flat(origin: Vec2, cell_size: f64, rows: usize, cols: usize, height: f64) -> Self {
        Self::new(GridSpec { origin, cell_size, rows, cols }, vec![height; rows * cols]).expect("valid flat raster")
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec2) -> f64) -> Self {
        let mut elevations = Vec::with_capacity(spec.len());
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                elevations.push(f(spec.cell_center(r, c)));
            }
        }
        Self::new(spec, elevations).expect("valid raster")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.elevations[row * self.spec.cols + col]
    }

    pub fn extent(&self) -> Aabb2 {
        self.spec.extent()
    }

    /// Bilinear interpolation between the four surrounding cell centers,
    /// clamped to the outermost centers near the border.
    pub fn height_at(&self, p: Vec2) -> Result<f64, OutOfExtent> {
        if !self.extent().contains(p) {
            return Err(OutOfExtent { x: p.x, y: p.y });
        }
        Ok(self.height_at_clamped(p))
    }

    /// As [`height_at`](Self::height_at) but clamps points outside the extent.
    pub fn height_at_clamped(&self, p: Vec2) -> f64 {
        let s = &self.spec;
        let gx = ((p.x - s.origin.x) / s.cell_size - 0.5).clamp(0.0, (s.cols - 1) as f64);
        let gy = ((p.y - s.origin.y) / s.cell_size - 0.5).clamp(0.0, (s.rows - 1) as f64);
        let c0 = (gx.floor() as usize).min(s.cols.saturating_sub(2));
        let r0 = (gy.floor() as usize).min(s.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(s.cols - 1);
        let r1 = (r0 + 1).min(s.rows - 1);
        let fx = gx - c0 as f64;
        let fy = gy - r0 as f64;
        let bottom = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
        let top = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
        bottom * (1.0 - fy) + top * fy
    }

    fn summed_area(&self) -> &Vec<f64> {
        self.summed.get_or_init(|| {
            let (rows, cols) = (self.spec.rows, self.spec.cols);
            let w = cols + 1;
            let mut sat = vec![0.0; (rows + 1) * w];
            for r in 0..rows {
                let mut row_sum = 0.0;
                for c in 0..cols {
                    row_sum += self.get(r, c);
                    sat[(r + 1) * w + c + 1] = sat[r * w + c + 1] + row_sum;
                }
            }
            sat
        })
    }

    /// Mean of the cell values whose centers fall inside `area`, falling back
    /// to a clamped bilinear sample at the area center when none do.
    pub fn mean_over(&self, area: &Aabb2) -> f64 {
        match self.spec.centers_within(area) {
            Some(((r0, r1), (c0, c1))) => {
                let sat = self.summed_area();
                let w = self.spec.cols + 1;
                let total = sat[(r1 + 1) * w + c1 + 1] - sat[r0 * w + c1 + 1] - sat[(r1 + 1) * w + c0] + sat[r0 * w + c0];
                total / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
            }
            None => self.height_at_clamped(area.center()),
        }
    }

    /// Maximum over cell centers inside `area` and the sample at its center.
    pub fn max_over(&self, area: &Aabb2) -> f64 {
        let mut best = self.height_at_clamped(area.center());
        if let Some(((r0, r1), (c0, c1))) = self.spec.centers_within(area) {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    best = best.max(self.get(r, c));
                }
            }
        }
        best
    }
}

/// Boolean raster marking water-at-rest cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffshoreMask {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl OffshoreMask {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.spec.cols + col]
    }

    /// `None` outside the mask extent.
    pub fn is_offshore(&self, p: Vec2) -> Option<bool> {
        self.spec.cell_of(p).map(|(r, c)| self.get(r, c))
    }

    pub fn offshore_centers(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.spec.rows).flat_map(move |r| {
            (0..self.spec.cols).filter(move |&c| self.get(r, c)).map(move |c| self.spec.cell_center(r, c))
        })
    }
}

/// Offshore cells are those whose terrain lies at or below the datum.
pub fn derive_offshore_mask(dem: &TerrainDem) -> OffshoreMask {
    OffshoreMask { spec: dem.spec, cells: dem.elevations.iter().map(|&z| z <= 0.0).collect() }
}

/// Simulation sample of one datapoint at one timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    Wet { elevation: f64, velocity: Vec2 },
    Dry,
}

impl Sample {
    pub fn is_wet(&self) -> bool {
        matches!(self, Sample::Wet { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datapoint {
    pub id: u64,
    pub position: Vec2,
}

/// Complete scenario. `samples[t][i]` belongs to `datapoints[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodScenario {
    pub name: String,
    pub datapoints: Vec<Datapoint>,
    pub samples: Vec<Vec<Sample>>,
    pub interval: f64,
    pub dem: TerrainDem,
    pub buildings: Vec<Building>,
    pub offshore_mask: Option<OffshoreMask>,
    pub bounds: Aabb2,
    derived_mask: Memo<OffshoreMask>,
}

impl FloodScenario {
    /// Assembles a scenario and computes its bounds as the union of the
    /// datapoint box and the terrain extent.
    pub fn new(
        name: impl Into<String>,
        datapoints: Vec<Datapoint>,
        samples: Vec<Vec<Sample>>,
        interval: f64,
        dem: TerrainDem,
        buildings: Vec<Building>,
        offshore_mask: Option<OffshoreMask>,
    ) -> Self {
        let bounds = Aabb2::from_points(datapoints.iter().map(|d| d.position))
            .map(|b| b.union(dem.extent()))
            .unwrap_or(dem.extent());
        Self {
            name: name.into(),
            datapoints,
            samples,
            interval,
            dem,
            buildings,
            offshore_mask,
            bounds,
            derived_mask: Memo::default(),
        }
    }

    pub fn timepoints(&self) -> usize {
        self.samples.len()
    }

    /// The provided mask, or the one derived from terrain when absent.
    pub fn offshore(&self) -> &OffshoreMask {
        match &self.offshore_mask {
            Some(mask) => mask,
            None => self.derived_mask.get_or_init(|| derive_offshore_mask(&self.dem)),
        }
    }

    pub fn building_at(&self, p: Vec2) -> Option<&Building> {
        self.buildings.iter().find(|b| b.bbox().contains(p) && b.contains(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_bilinear(dem: &TerrainDem, p: Vec2) -> f64 {
        // independent formulation: weights over all cells via hat functions
        let s = dem.spec;
        let gx = ((p.x - s.origin.x) / s.cell_size - 0.5).clamp(0.0, (s.cols - 1) as f64);
        let gy = ((p.y - s.origin.y) / s.cell_size - 0.5).clamp(0.0, (s.rows - 1) as f64);
        let mut acc = 0.0;
        for r in 0..s.rows {
            for c in 0..s.cols {
                let wx = (1.0 - (gx - c as f64).abs()).max(0.0);
                let wy = (1.0 - (gy - r as f64).abs()).max(0.0);
                acc += wx * wy * dem.get(r, c);
            }
        }
        acc
    }

    #[test]
    fn constant_dem_is_constant() {
        let dem = TerrainDem::flat(Vec2::new(-10.0, 5.0), 2.0, 6, 7, 5.0);
        for p in [Vec2::new(-10.0, 5.0), Vec2::new(-3.3, 9.1), Vec2::new(4.0, 17.0)] {
            assert_eq!(dem.height_at(p).unwrap(), 5.0);
        }
    }

    #[test]
    fn planar_dem_is_reproduced_in_interior() {
        let spec = GridSpec { origin: Vec2::zeros(), cell_size: 1.0, rows: 8, cols: 8 };
        let dem = TerrainDem::from_fn(spec, |p| p.x);
        for x in [0.5, 1.25, 3.7, 7.5] {
            assert!((dem.height_at(Vec2::new(x, 4.2)).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_extent_is_an_error() {
        let dem = TerrainDem::flat(Vec2::zeros(), 1.0, 2, 2, 0.0);
        assert!(dem.height_at(Vec2::new(2.5, 1.0)).is_err());
    }

    #[test]
    fn random_dem_matches_naive_bilinear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let spec = GridSpec { origin: Vec2::new(100.0, -50.0), cell_size: 3.0, rows: 9, cols: 11 };
        let values: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(-5.0..20.0)).collect();
        let dem = TerrainDem::new(spec, values).unwrap();
        for _ in 0..100 {
            let p = Vec2::new(rng.random_range(100.0..133.0), rng.random_range(-50.0..-23.0));
            assert!((dem.height_at(p).unwrap() - naive_bilinear(&dem, p)).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_over_matches_direct_sum() {
        let spec = GridSpec { origin: Vec2::zeros(), cell_size: 1.0, rows: 10, cols: 10 };
        let dem = TerrainDem::from_fn(spec, |p| p.x * 2.0 + p.y * p.y);
        let area = Aabb2::new(Vec2::new(2.2, 3.0), Vec2::new(6.6, 7.5));
        let mut sum = 0.0;
        let mut n = 0;
        for r in 0..10 {
            for c in 0..10 {
                if area.contains(spec.cell_center(r, c)) {
                    sum += dem.get(r, c);
                    n += 1;
                }
            }
        }
        assert!((dem.mean_over(&area) - sum / n as f64).abs() < 1e-9);
        let tiny = Aabb2::new(Vec2::new(2.6, 2.6), Vec2::new(2.9, 2.9));
        assert_eq!(dem.mean_over(&tiny), dem.height_at_clamped(tiny.center()));
    }

    #[test]
    fn offshore_mask_thresholds() {
        let dem = TerrainDem::flat(Vec2::zeros(), 1.0, 3, 3, 2.0);
        assert!(derive_offshore_mask(&dem).cells.iter().all(|&c| !c));
        let dem = TerrainDem::flat(Vec2::zeros(), 1.0, 3, 3, -1.0);
        assert!(derive_offshore_mask(&dem).cells.iter().all(|&c| c));
        // ramp crossing zero between columns 3 and 4
        let spec = GridSpec { origin: Vec2::zeros(), cell_size: 1.0, rows: 4, cols: 8 };
        let dem = TerrainDem::from_fn(spec, |p| p.x - 4.0);
        let mask = derive_offshore_mask(&dem);
        for r in 0..4 {
            for c in 0..8 {
                assert_eq!(mask.get(r, c), dem.get(r, c) <= 0.0);
            }
            assert!(mask.get(r, 3) && !mask.get(r, 4));
        }
    }
}
