//! Point queries behind the dip-stick and building inspection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Building, Vec2};
use crate::heightfield::{CellClass, HeightFieldQuadtree};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("point ({x}, {y}) is outside the scenario bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("no building at ({x}, {y})")]
    NoBuilding { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthReading {
    pub water_elevation: f64,
    pub terrain: f64,
    pub depth: f64,
    /// The leaf under the point is dry; depth is then 0.
    pub dry: bool,
}

/// Water depth at `p`: interpolated surface minus terrain, never negative.
pub fn depth_at(tree: &HeightFieldQuadtree, p: Vec2) -> Result<DepthReading, QueryError> {
    let out = || QueryError::OutOfBounds { x: p.x, y: p.y };
    let scenario = tree.scenario();
    if !(p.x.is_finite() && p.y.is_finite()) || !scenario.bounds.contains(p) {
        return Err(out());
    }
    let water = tree.interpolate_height(p, tree.max_depth()).map_err(|_| out())?;
    let terrain = scenario.dem.height_at_clamped(p);
    let dry = tree.leaf_at(p).map_err(|_| out())?.node.class == CellClass::Dry;
    let depth = if dry { 0.0 } else { (water - terrain).max(0.0) };
    Ok(DepthReading { water_elevation: water, terrain, depth, dry })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Med,
    High,
}

/// Lower bounds of the `Med` and `High` bands on the flood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityBands {
    pub medium: f64,
    pub high: f64,
}

impl Default for SeverityBands {
    fn default() -> Self {
        Self { medium: 0.1, high: 0.4 }
    }
}

impl SeverityBands {
    pub fn classify(&self, ratio: f64) -> Severity {
        if ratio >= self.high {
            Severity::High
        } else if ratio >= self.medium {
            Severity::Med
        } else {
            Severity::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingReport {
    pub building: Building,
    pub depth: DepthReading,
    pub flood_ratio: f64,
    pub severity: Severity,
    /// Other buildings whose centroid lies within the clearing radius.
    pub occluders: Vec<u64>,
}

/// Flood exposure of the building at `p`, measured at its footprint centroid.
pub fn building_report(
    tree: &HeightFieldQuadtree,
    p: Vec2,
    bands: &SeverityBands,
    radius: f64,
) -> Result<BuildingReport, QueryError> {
    let scenario = tree.scenario();
    let building = scenario.building_at(p).ok_or(QueryError::NoBuilding { x: p.x, y: p.y })?;
    let c = building.centroid();
    let depth = depth_at(tree, c)?;
    let flood_ratio = (depth.depth / building.height).clamp(0.0, 1.0);
    let occluders = scenario
        .buildings
        .iter()
        .filter(|b| b.id != building.id && (b.centroid() - c).norm() <= radius)
        .map(|b| b.id)
        .collect();
    Ok(BuildingReport { building: building.clone(), depth, flood_ratio, severity: bands.classify(flood_ratio), occluders })
}
