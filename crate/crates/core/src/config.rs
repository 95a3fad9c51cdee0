//! Engine configuration loaded from JSON. Every field is optional and
//! unknown fields are rejected.
//!
//! ```json
//! {
//!   "max_depth": 14,
//!   "weights": { "omega": 10.0, "max_pitch": 1.0471975511965976 },
//!   "cascade": { "lambda0": 4.0, "levels": 4, "seed": 0, "steepness": 0.08 },
//!   "tessellation": { "near": 100.0, "far": 2000.0, "max_level": 4 },
//!   "pso": { "particles": 1000, "iterations": 300 },
//!   "path": { "sample_step": 0.5 },
//!   "planning": { "cell_size": 50.0, "altitude": 200.0, "clearance": 10.0 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heightfield::{DEFAULT_MAX_DEPTH, MAX_SUPPORTED_DEPTH};
use crate::meshgen::TessellationPolicy;
use crate::viewplan::{ObjectiveWeights, PathConfig, PsoConfig, DEFAULT_CELL_SIZE};
use crate::wavesynth::{WaveCascade, DEFAULT_LAMBDA0, DEFAULT_LEVELS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// Cascade parameters; ratios are drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub lambda0: f64,
    pub levels: usize,
    pub seed: u64,
    /// Steepness per level; `None` keeps the cascade default.
    pub steepness: Option<f64>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { lambda0: DEFAULT_LAMBDA0, levels: DEFAULT_LEVELS, seed: 0, steepness: None }
    }
}

impl CascadeConfig {
    pub fn build(&self) -> WaveCascade {
        let c = WaveCascade::new(self.lambda0, self.levels, self.seed);
        match self.steepness {
            Some(s) => c.with_steepness(s),
            None => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningConfig {
    /// Visibility grid cell size, meters.
    pub cell_size: f64,
    /// Headroom above the tallest column for candidate poses, meters.
    pub altitude: f64,
    /// Minimum distance kept from buildings along paths, meters.
    pub clearance: f64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self { cell_size: DEFAULT_CELL_SIZE, altitude: 200.0, clearance: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_depth: u8,
    pub weights: ObjectiveWeights,
    pub cascade: CascadeConfig,
    pub tessellation: TessellationPolicy,
    pub pso: PsoConfig,
    pub path: PathConfig,
    pub planning: PlanningConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            weights: ObjectiveWeights::default(),
            cascade: CascadeConfig::default(),
            tessellation: TessellationPolicy::default(),
            pso: PsoConfig::default(),
            path: PathConfig::default(),
            planning: PlanningConfig::default(),
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, reason: format!("{v} must be positive") })
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_depth == 0 || self.max_depth > MAX_SUPPORTED_DEPTH {
            return Err(ConfigError::Invalid {
                field: "max_depth",
                reason: format!("{} outside 1..={MAX_SUPPORTED_DEPTH}", self.max_depth),
            });
        }
        self.weights.validate().map_err(|e| ConfigError::Invalid { field: "weights", reason: e.to_string() })?;
        self.cascade.build().validate().map_err(|e| ConfigError::Invalid { field: "cascade", reason: e.to_string() })?;
        let t = &self.tessellation;
        positive("tessellation.near", t.near)?;
        positive("tessellation.far", t.far)?;
        if t.far <= t.near {
            return Err(ConfigError::Invalid { field: "tessellation", reason: "far must exceed near".into() });
        }
        if let Some(e) = t.max_edge {
            positive("tessellation.max_edge", e)?;
        }
        positive("tessellation.fov_y", t.fov_y)?;
        positive("tessellation.aspect", t.aspect)?;
        positive("tessellation.view_distance", t.view_distance)?;
        if self.pso.particles == 0 {
            return Err(ConfigError::Invalid { field: "pso.particles", reason: "at least one particle".into() });
        }
        positive("path.sample_step", self.path.sample_step)?;
        positive("planning.cell_size", self.planning.cell_size)?;
        if !(self.planning.altitude.is_finite() && self.planning.altitude >= 0.0) {
            return Err(ConfigError::Invalid { field: "planning.altitude", reason: "must be non-negative".into() });
        }
        if !(self.planning.clearance.is_finite() && self.planning.clearance >= 0.0) {
            return Err(ConfigError::Invalid { field: "planning.clearance", reason: "must be non-negative".into() });
        }
        Ok(())
    }
}
