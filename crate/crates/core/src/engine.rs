//! A loaded scenario with its configuration: height-fields built on first
//! use per timepoint, the planning context, and the mesh, query and planning
//! calls the command line and the service share.

use std::sync::{Arc, OnceLock};

use serde::Serialize;
use thiserror::Error;

use crate::config::EngineConfig;
use crate::displaywall::DisplayLayout;
use crate::geom::{CameraPose, Poi};
use crate::heightfield::{build_quadtree, HeightFieldQuadtree, HeightfieldError};
use crate::meshgen::{render_mesh, MeshError, MeshRequest, SurfaceMesh};
use crate::scenario::FloodScenario;
use crate::viewplan::{plan_path_with, plan_views, ObjectiveWeights, PathError, PlanContext, PlanError, PoseBounds, ViewPlan};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("timepoint {t} outside a series of {count}")]
    Timepoint { t: usize, count: usize },
    #[error(transparent)]
    Heightfield(#[from] HeightfieldError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Summary of a loaded scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub datapoints: usize,
    pub timepoints: usize,
    pub interval: f64,
    pub buildings: usize,
    pub bounds: [f64; 4],
    pub dem: [usize; 2],
    pub dem_cell_size: f64,
}

pub struct Engine {
    scenario: Arc<FloodScenario>,
    config: EngineConfig,
    trees: Vec<OnceLock<Result<Arc<HeightFieldQuadtree>, HeightfieldError>>>,
    plan: OnceLock<PlanContext>,
}

impl Engine {
    pub fn new(scenario: FloodScenario, config: EngineConfig) -> Self {
        let trees = (0..scenario.timepoints()).map(|_| OnceLock::new()).collect();
        Self { scenario: Arc::new(scenario), config, trees, plan: OnceLock::new() }
    }

    pub fn scenario(&self) -> &Arc<FloodScenario> {
        &self.scenario
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn summary(&self) -> ScenarioSummary {
        let s = &self.scenario;
        let b = s.bounds;
        ScenarioSummary {
            name: s.name.clone(),
            datapoints: s.datapoints.len(),
            timepoints: s.timepoints(),
            interval: s.interval,
            buildings: s.buildings.len(),
            bounds: [b.min.x, b.min.y, b.max.x, b.max.y],
            dem: [s.dem.spec.rows, s.dem.spec.cols],
            dem_cell_size: s.dem.spec.cell_size,
        }
    }

    /// Height-field of timepoint `t` over the square enclosing the scenario.
    pub fn tree(&self, t: usize) -> Result<Arc<HeightFieldQuadtree>, EngineError> {
        let slot = self.trees.get(t).ok_or(EngineError::Timepoint { t, count: self.trees.len() })?;
        slot.get_or_init(|| {
            build_quadtree(&self.scenario, t, self.scenario.bounds.enclosing_square(), self.config.max_depth).map(Arc::new)
        })
        .clone()
        .map_err(EngineError::from)
    }

    /// Mesh request carrying the configured cascade and tessellation policy.
    pub fn mesh_request(&self) -> MeshRequest {
        MeshRequest::new(self.config.cascade.build(), self.config.tessellation)
    }

    pub fn mesh(&self, t: usize, req: &MeshRequest) -> Result<SurfaceMesh, EngineError> {
        Ok(render_mesh(&*self.tree(t)?, req)?)
    }

    fn context(&self) -> &PlanContext {
        let p = &self.config.planning;
        self.plan.get_or_init(|| PlanContext::new(&self.scenario, &self.config.weights, p.cell_size, p.altitude))
    }

    /// Planning context for `w`: the shared grid, with pose bounds redone
    /// when `w` changes the pitch limit.
    fn context_for(&self, w: &ObjectiveWeights) -> std::borrow::Cow<'_, PlanContext> {
        let ctx = self.context();
        let bounds = PoseBounds::for_scene(&ctx.grid, w, self.config.planning.altitude);
        if bounds == ctx.bounds {
            std::borrow::Cow::Borrowed(ctx)
        } else {
            std::borrow::Cow::Owned(PlanContext { bounds, ..ctx.clone() })
        }
    }

    /// Viewpoints covering `pois` and the path through them.
    pub fn plan_tour(&self, pois: &[Poi], layout: &DisplayLayout, w: &ObjectiveWeights, seed: u64) -> Result<ViewPlan, EngineError> {
        let ctx = self.context_for(w);
        let pso = crate::viewplan::PsoConfig { seed, ..self.config.pso };
        let viewpoints = plan_views(pois, layout, &ctx, w, &pso)?;
        let path = if viewpoints.len() < 2 { Vec::new() } else { self.path_in(&ctx, &viewpoints)? };
        Ok(ViewPlan { viewpoints, path })
    }

    /// Path through given viewpoints.
    pub fn plan_path(&self, viewpoints: &[CameraPose]) -> Result<ViewPlan, EngineError> {
        let path = self.path_in(self.context(), viewpoints)?;
        Ok(ViewPlan { viewpoints: viewpoints.to_vec(), path })
    }

    fn path_in(&self, ctx: &PlanContext, viewpoints: &[CameraPose]) -> Result<Vec<crate::viewplan::PathSegment>, EngineError> {
        Ok(plan_path_with(viewpoints, &ctx.grid, ctx.mask.as_ref(), self.config.planning.clearance, &self.config.path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{city_pois, city_scenario, CitySpec};

    fn small() -> (Engine, CitySpec) {
        let spec = CitySpec::default();
        let mut cfg = EngineConfig::default();
        cfg.pso = crate::viewplan::PsoConfig { particles: 40, iterations: 40, init_samples: 2000, ..Default::default() };
        (Engine::new(city_scenario(&spec), cfg), spec)
    }

    #[test]
    fn trees_are_built_once_per_timepoint() {
        let (e, _) = small();
        let a = e.tree(0).unwrap();
        let b = e.tree(0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let n = e.scenario().timepoints();
        assert_eq!(e.tree(n).unwrap_err(), EngineError::Timepoint { t: n, count: n });
    }

    #[test]
    fn tour_is_deterministic() {
        let (e, spec) = small();
        let pois = city_pois(e.scenario(), &spec, 2);
        let layout = DisplayLayout::single(1.6, 0.9, 1.0);
        let w = e.config().weights.clone();
        let a = e.plan_tour(&pois, &layout, &w, 3);
        let b = e.plan_tour(&pois, &layout, &w, 3);
        assert_eq!(a, b);
        if let Ok(plan) = a {
            assert_eq!(plan.path.len(), plan.viewpoints.len().saturating_sub(1));
        }
    }

    #[test]
    fn summary_counts() {
        let (e, _) = small();
        let s = e.summary();
        assert_eq!(s.datapoints, e.scenario().datapoints.len());
        assert_eq!(s.timepoints, e.scenario().timepoints());
    }
}
