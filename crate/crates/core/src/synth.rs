//! Deterministic synthetic scenarios for tests, benchmarks and demos.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{Building, Vec2};
use crate::scenario::{Datapoint, FloodScenario, GridSpec, Sample, TerrainDem};

/// Scenario with datapoints on an `n`×`n` grid of cell centers over `[0, side]²`.
pub fn grid_scenario(side: f64, n: usize, dem: TerrainDem, sample: impl Fn(Vec2) -> Sample) -> FloodScenario {
    let step = side / n as f64;
    let mut datapoints = Vec::with_capacity(n * n);
    let mut samples = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let p = Vec2::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step);
            datapoints.push(Datapoint { id: (j * n + i) as u64, position: p });
            samples.push(sample(p));
        }
    }
    FloodScenario::new("grid", datapoints, vec![samples], 60.0, dem, vec![], None)
}

/// Parameters of [`coastal_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoastSpec {
    pub side: f64,
    pub points: usize,
    pub timepoints: usize,
    pub buildings: usize,
    pub dem_cells: usize,
    pub seed: u64,
}

impl Default for CoastSpec {
    fn default() -> Self {
        Self { side: 2000.0, points: 5000, timepoints: 4, buildings: 40, dem_cells: 200, seed: 7 }
    }
}

/// Terrain rising west to east through a shoreline near the middle.
pub fn coastal_terrain(side: f64, p: Vec2) -> f64 {
    -8.0 + 16.0 * p.x / side + 1.5 * (p.y / (side / 20.0)).sin() + 0.8 * (p.x / (side / 13.0)).cos()
}

/// A coastline under a rising surge: the western half is sea, the eastern
/// half land with buildings. Wet/dry state follows the surge level.
pub fn coastal_scenario(spec: &CoastSpec) -> FloodScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.side;
    let cell = side / spec.dem_cells as f64;
    let grid = GridSpec { origin: Vec2::zeros(), cell_size: cell, rows: spec.dem_cells, cols: spec.dem_cells };
    let dem = TerrainDem::from_fn(grid, |p| coastal_terrain(side, p));

    let mut datapoints = Vec::with_capacity(spec.points);
    for id in 0..spec.points {
        // half the points concentrate along the shore band
        let x = if id % 2 == 0 { rng.random_range(0.0..side) } else { side * (0.5 + 0.15 * (rng.random::<f64>() - 0.5)) };
        let y = rng.random_range(0.0..side);
        datapoints.push(Datapoint { id: id as u64, position: Vec2::new(x, y) });
    }
    let mut samples = Vec::with_capacity(spec.timepoints);
    for t in 0..spec.timepoints {
        let surge = 3.0 * (std::f64::consts::PI * (t + 1) as f64 / (spec.timepoints + 1) as f64).sin();
        let row = datapoints
            .iter()
            .map(|d| {
                let p = d.position;
                let level = surge + 0.2 * (p.y / 70.0).sin();
                if level > coastal_terrain(side, p) + 0.05 {
                    let swirl = 0.3 * (p.y / 300.0).sin();
                    Sample::Wet { elevation: level, velocity: Vec2::new(0.6 + 0.1 * surge, swirl) }
                } else {
                    Sample::Dry
                }
            })
            .collect();
        samples.push(row);
    }

    let mut buildings = Vec::new();
    let mut attempts = 0;
    while buildings.len() < spec.buildings && attempts < spec.buildings * 50 {
        attempts += 1;
        let c = Vec2::new(rng.random_range(0.55 * side..0.95 * side), rng.random_range(0.05 * side..0.95 * side));
        if coastal_terrain(side, c) < 0.5 {
            continue;
        }
        let half = rng.random_range(5.0..15.0);
        let footprint = vec![
            c + Vec2::new(-half, -half),
            c + Vec2::new(half, -half),
            c + Vec2::new(half, half),
            c + Vec2::new(-half, half),
        ];
        let id = buildings.len() as u64 + 1;
        let mut meta = BTreeMap::new();
        meta.insert("use".to_string(), if id % 3 == 0 { "residential" } else { "commercial" }.to_string());
        buildings.push(Building {
            id,
            footprint,
            height: rng.random_range(6.0..60.0),
            name: Some(format!("Building {id}")),
            meta,
        });
    }
    FloodScenario::new("coast", datapoints, samples, 3600.0, dem, buildings, None)
}

/// Parameters of [`city_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CitySpec {
    pub side: f64,
    /// Shoreline x coordinate; sea to the west.
    pub shore: f64,
    pub buildings: usize,
    pub dem_cell: f64,
    pub seed: u64,
}

impl Default for CitySpec {
    fn default() -> Self {
        Self { side: 1500.0, shore: 500.0, buildings: 100, dem_cell: 10.0, seed: 0 }
    }
}

/// Coastal town: sea west of the shoreline, land rising gently to the east
/// and covered with box buildings. Datapoints sit on a coarse grid and are
/// wet where the terrain lies under a 1 m surge.
pub fn city_scenario(spec: &CitySpec) -> FloodScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.side;
    let n = (side / spec.dem_cell).round() as usize;
    let grid = GridSpec { origin: Vec2::zeros(), cell_size: side / n as f64, rows: n, cols: n };
    let shore = spec.shore;
    let terrain = move |p: Vec2| if p.x < shore { -4.0 + 3.0 * p.x / shore } else { 0.5 + 20.0 * (p.x - shore) / side };
    let dem = TerrainDem::from_fn(grid, terrain);

    let mut buildings = Vec::with_capacity(spec.buildings);
    for i in 0..spec.buildings {
        let c = Vec2::new(rng.random_range(shore + 25.0..side - 25.0), rng.random_range(25.0..side - 25.0));
        let h = Vec2::new(rng.random_range(5.0..20.0), rng.random_range(5.0..20.0));
        let footprint = vec![c - h, Vec2::new(c.x + h.x, c.y - h.y), c + h, Vec2::new(c.x - h.x, c.y + h.y)];
        buildings.push(Building {
            id: i as u64 + 1,
            footprint,
            height: rng.random_range(8.0..70.0),
            name: None,
            meta: BTreeMap::new(),
        });
    }

    let m = 32;
    let step = side / m as f64;
    let mut datapoints = Vec::with_capacity(m * m);
    let mut samples = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            let p = Vec2::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step);
            datapoints.push(Datapoint { id: (j * m + i) as u64, position: p });
            samples.push(if terrain(p) < 1.0 {
                Sample::Wet { elevation: 1.0, velocity: Vec2::new(0.5, 0.1 * (p.y / 200.0).sin()) }
            } else {
                Sample::Dry
            });
        }
    }
    FloodScenario::new("city", datapoints, vec![samples], 600.0, dem, buildings, None)
}

/// `n` points of interest on open land near the shore, 2 m above the terrain.
pub fn city_pois(scenario: &FloodScenario, spec: &CitySpec, n: usize) -> Vec<crate::geom::Poi> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n)
        .map(|i| {
            let p = loop {
                let p = Vec2::new(
                    rng.random_range(spec.shore + 10.0..spec.shore + 0.4 * (spec.side - spec.shore)),
                    rng.random_range(0.2 * spec.side..0.8 * spec.side),
                );
                if scenario.buildings.iter().all(|b| !b.bbox().contains(p)) {
                    break p;
                }
            };
            let z = scenario.dem.height_at_clamped(p) + 2.0;
            crate::geom::Poi { id: i as u64 + 1, position: crate::geom::Vec3::new(p.x, p.y, z), radius: 5.0 }
        })
        .collect()
}
