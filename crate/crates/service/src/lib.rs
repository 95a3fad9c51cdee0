//! HTTP and WebSocket front end over the engine.
//!
//! Scenarios are loaded by `POST /scenarios` and addressed by the returned
//! id. Heavy work (ingest, meshing, planning) runs on the blocking pool;
//! each scenario's session state sits behind one mutex so a single writer
//! orders every change before it is broadcast on `/sync`.

mod error;
mod handlers;
mod sync;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::routing::{delete, get, post};
use axum::Router;
use tokio::net::TcpListener;

use surgedeck_core::config::EngineConfig;
use surgedeck_core::displaywall::{HeartbeatPolicy, SessionSnapshot, SyncHub};
use surgedeck_core::engine::Engine;
use surgedeck_core::query::SeverityBands;

pub use error::ApiError;

/// Response header telling whether a plan came from the cache.
pub const CACHE_HEADER: &str = "x-surgedeck-cache";
/// Response header carrying the animation time a mesh was displaced at.
pub const T_ANIM_HEADER: &str = "x-surgedeck-t-anim";
/// Occlusion-clearing radius around a selected building, meters.
pub const DEFAULT_CLEAR_RADIUS: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    /// Manifests and packs posted by relative path are resolved against it.
    pub data_dir: PathBuf,
    pub engine: EngineConfig,
    pub bands: SeverityBands,
    pub heartbeat: HeartbeatPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: PathBuf::from("."),
            engine: EngineConfig::default(),
            bands: SeverityBands::default(),
            heartbeat: HeartbeatPolicy::default(),
        }
    }
}

pub(crate) struct ScenarioEntry {
    pub id: String,
    pub engine: Arc<Engine>,
    pub hub: Mutex<SyncHub>,
}

/// Plans keyed by scenario id and the canonical request.
type PlanCache = HashMap<(String, String), Arc<Vec<u8>>>;

pub struct AppState {
    pub(crate) config: ServiceConfig,
    pub(crate) scenarios: RwLock<BTreeMap<String, Arc<ScenarioEntry>>>,
    pub(crate) plans: Mutex<PlanCache>,
    started: Instant,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { config, scenarios: RwLock::default(), plans: Mutex::default(), started: Instant::now() })
    }

    /// Seconds since start; the hub clock and the default animation time.
    pub fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub(crate) fn entry(&self, id: &str) -> Result<Arc<ScenarioEntry>, ApiError> {
        self.scenarios.read().expect("scenario lock").get(id).cloned().ok_or_else(|| ApiError::unknown_scenario(id))
    }

    /// Installs `engine` under `id`, replacing any previous load and its
    /// cached plans.
    pub(crate) fn install(&self, id: String, engine: Engine) -> Arc<ScenarioEntry> {
        let hub = SyncHub::new(SessionSnapshot::default(), engine.scenario().timepoints(), self.config.heartbeat);
        let entry = Arc::new(ScenarioEntry { id: id.clone(), engine: Arc::new(engine), hub: Mutex::new(hub) });
        self.plans.lock().expect("plan cache").retain(|(sid, _), _| *sid != id);
        self.scenarios.write().expect("scenario lock").insert(id, entry.clone());
        entry
    }

    /// Heartbeats and liveness checks on every session.
    pub fn tick(&self) {
        let now = self.now();
        let entries: Vec<_> = self.scenarios.read().expect("scenario lock").values().cloned().collect();
        for e in entries {
            for dropped in e.hub.lock().expect("hub lock").tick(now) {
                tracing::info!(scenario = %e.id, "{dropped}");
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenarios", post(handlers::post_scenario))
        .route("/scenarios/{id}", get(handlers::get_scenario))
        .route("/mesh", get(handlers::get_mesh))
        .route("/depth", get(handlers::get_depth))
        .route("/building", get(handlers::get_building))
        .route("/pois", post(handlers::post_poi))
        .route("/pois/{id}", delete(handlers::delete_poi))
        .route("/plan/views", post(handlers::plan_views))
        .route("/plan/path", post(handlers::plan_path))
        .route("/sync", get(sync::sync_socket))
        .layer(axum::middleware::from_fn(handlers::log_request))
        .with_state(state)
}

/// Log filter from `SURGEDECK_LOG`, `info` when unset.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SURGEDECK_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Serves on an already bound listener until the process is interrupted.
pub async fn serve_on(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let ticker = state.clone();
    let period = Duration::from_secs_f64((state.config.heartbeat.interval / 2.0).clamp(0.05, 5.0));
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            ticker.tick();
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, AppState::new(config)).await
}
