use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use surgedeck_core::displaywall::{DisplayLayout, PoiChange, SyncBody};
use surgedeck_core::engine::{Engine, EngineError};
use surgedeck_core::geom::{Aabb2, CameraPose, Poi, Vec2, Vec3};
use surgedeck_core::ingest::{load_scenario, IngestError, ScenarioManifest};
use surgedeck_core::meshgen::tiles_json;
use surgedeck_core::pack::read_pack;
use surgedeck_core::query::{building_report, depth_at};
use surgedeck_core::viewplan::ObjectiveWeights;

use crate::{ApiError, AppState, CACHE_HEADER, DEFAULT_CLEAR_RADIUS, T_ANIM_HEADER};

type Shared = State<Arc<AppState>>;

pub async fn log_request(req: Request, next: Next) -> Response {
    let (method, uri) = (req.method().clone(), req.uri().clone());
    let start = Instant::now();
    let res = next.run(req).await;
    tracing::info!(%method, %uri, status = res.status().as_u16(), ms = start.elapsed().as_secs_f64() * 1e3, "request");
    res
}

/// Runs `f` on the blocking pool. A dropped request abandons the result.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "Malformed", e.to_string()))
}

fn json_bytes(status: StatusCode, bytes: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], bytes).into_response()
}

fn json_response(status: StatusCode, value: &impl Serialize) -> Result<Response, ApiError> {
    let bytes = serde_json::to_vec(value).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_bytes(status, bytes))
}

fn finite(name: &str, v: f64) -> Result<f64, ApiError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ApiError::bad_request(format!("{name} must be finite")))
    }
}

fn numbers<const N: usize>(name: &str, text: &str) -> Result<[f64; N], ApiError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || ApiError::bad_request(format!("{name} expects {N} comma-separated numbers, got {text:?}"));
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = finite(name, p.parse().map_err(|_| bad())?)?;
    }
    Ok(out)
}

/// Scenario name reduced to `[A-Za-z0-9_-]`, then the CRC32 of the request.
fn scenario_id(name: &str, request: &[u8]) -> String {
    let slug: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' }).collect();
    format!("{}-{:08x}", if slug.is_empty() { "scenario" } else { &slug }, crc32fast::hash(request))
}

fn ingest_error(e: IngestError) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), e.to_string())
}

pub async fn post_scenario(State(state): Shared, bytes: Bytes) -> Result<Response, ApiError> {
    let value: Value = body(&bytes)?;
    let data_dir = state.config.data_dir.clone();
    let scenario = if let Some(pack) = value.get("pack") {
        let path = data_dir.join(pack.as_str().ok_or_else(|| ApiError::bad_request("pack must be a path string"))?);
        blocking(move || read_pack(&path))
            .await?
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "Pack", e.to_string()))?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let manifest = ScenarioManifest::from_json(text, data_dir).map_err(|e| match e {
            IngestError::InvalidManifest(m) => ApiError::new(StatusCode::BAD_REQUEST, "Malformed", m),
            other => ingest_error(other),
        })?;
        blocking(move || load_scenario(&manifest)).await?.map_err(ingest_error)?
    };
    let id = scenario_id(&scenario.name, &bytes);
    let entry = state.install(id.clone(), Engine::new(scenario, state.config.engine.clone()));
    tracing::info!(scenario = %id, "loaded");
    json_response(StatusCode::CREATED, &json!({ "id": id, "summary": entry.engine.summary() }))
}

pub async fn get_scenario(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.entry(&id)?;
    let hub = entry.hub.lock().expect("hub lock");
    let summary = entry.engine.summary();
    let body = json!({
        "id": id,
        "summary": summary,
        "pois": hub.session().pois.len(),
        "clients": hub.clients(),
        "seq": hub.seq(),
    });
    drop(hub);
    json_response(StatusCode::OK, &body)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshQuery {
    scenario: String,
    t: Option<usize>,
    lod: Option<u8>,
    /// `minx,miny,maxx,maxy`
    bbox: Option<String>,
    /// `x,y,z,yaw,pitch`
    camera: Option<String>,
    t_anim: Option<f64>,
    /// Building whose surroundings are hidden.
    building: Option<u64>,
    radius: Option<f64>,
}

fn radius(r: Option<f64>) -> Result<f64, ApiError> {
    let r = finite("radius", r.unwrap_or(DEFAULT_CLEAR_RADIUS))?;
    if r < 0.0 {
        return Err(ApiError::bad_request("radius must not be negative"));
    }
    Ok(r)
}

pub async fn get_mesh(State(state): Shared, q: Result<Query<MeshQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let q = query(q)?;
    let entry = state.entry(&q.scenario)?;
    let engine = entry.engine.clone();
    let mut req = engine.mesh_request();
    req.lod = q.lod;
    if let Some(b) = &q.bbox {
        let [x0, y0, x1, y1] = numbers::<4>("bbox", b)?;
        req.bbox = Some(Aabb2 { min: Vec2::new(x0, y0), max: Vec2::new(x1, y1) });
    }
    if let Some(c) = &q.camera {
        let [x, y, z, yaw, pitch] = numbers::<5>("camera", c)?;
        req.camera = Some(CameraPose::new(Vec3::new(x, y, z), yaw, pitch));
    }
    req.t_anim = finite("t_anim", q.t_anim.unwrap_or_else(|| state.now()))?;
    let r = radius(q.radius)?;
    if let Some(id) = q.building {
        let b = engine.scenario().buildings.iter().find(|b| b.id == id).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "NoBuilding", format!("no building with id {id}"))
        })?;
        req.clear = Some((b.centroid(), r));
    }
    let t = q.t.unwrap_or(0);
    let t_anim = req.t_anim;
    let bytes = blocking(move || -> Result<Vec<u8>, EngineError> {
        let mesh = engine.mesh(t, &req)?;
        Ok(serde_json::to_vec(&tiles_json(&mesh)).expect("tiles serialize"))
    })
    .await??;
    let mut res = json_bytes(StatusCode::OK, bytes);
    res.headers_mut().insert(T_ANIM_HEADER, HeaderValue::from_str(&t_anim.to_string()).expect("number header"));
    Ok(res)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointQuery {
    scenario: String,
    t: Option<usize>,
    x: f64,
    y: f64,
    radius: Option<f64>,
}

pub async fn get_depth(State(state): Shared, q: Result<Query<PointQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let q = query(q)?;
    let engine = state.entry(&q.scenario)?.engine.clone();
    let p = Vec2::new(finite("x", q.x)?, finite("y", q.y)?);
    let t = q.t.unwrap_or(0);
    let reading = blocking(move || engine.tree(t).map(|tree| depth_at(&tree, p))).await??;
    json_response(StatusCode::OK, &reading?)
}

pub async fn get_building(State(state): Shared, q: Result<Query<PointQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let q = query(q)?;
    let engine = state.entry(&q.scenario)?.engine.clone();
    let p = Vec2::new(finite("x", q.x)?, finite("y", q.y)?);
    let t = q.t.unwrap_or(0);
    let r = radius(q.radius)?;
    let bands = state.config.bands;
    let report = blocking(move || engine.tree(t).map(|tree| building_report(&tree, p, &bands, r))).await??;
    let mut body = serde_json::to_value(report?).map_err(|e| ApiError::internal(e.to_string()))?;
    body["radius"] = json!(r);
    json_response(StatusCode::OK, &body)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiBody {
    scenario: String,
    id: Option<u64>,
    position: Vec3,
    radius: f64,
}

pub async fn post_poi(State(state): Shared, bytes: Bytes) -> Result<Response, ApiError> {
    let b: PoiBody = body(&bytes)?;
    let entry = state.entry(&b.scenario)?;
    for v in b.position.iter() {
        finite("position", *v)?;
    }
    if !(finite("radius", b.radius)? >= 0.0) {
        return Err(ApiError::bad_request("radius must not be negative"));
    }
    let mut hub = entry.hub.lock().expect("hub lock");
    let id = b.id.unwrap_or_else(|| hub.session().pois.keys().next_back().map_or(1, |k| k + 1));
    let poi = Poi { id, position: b.position, radius: b.radius };
    let seq = hub.publish(SyncBody::PoiUpdate(PoiChange::Upsert { poi })).map_err(|e| ApiError::internal(e.to_string()))?;
    drop(hub);
    json_response(StatusCode::CREATED, &json!({ "id": id, "seq": seq }))
}

#[derive(Debug, Deserialize)]
pub struct ScenarioQuery {
    scenario: String,
}

pub async fn delete_poi(
    State(state): Shared,
    id: Result<Path<u64>, PathRejection>,
    q: Result<Query<ScenarioQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Path(id) = id.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let entry = state.entry(&query(q)?.scenario)?;
    let mut hub = entry.hub.lock().expect("hub lock");
    if !hub.session().pois.contains_key(&id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownPoi", format!("no POI {id}")));
    }
    let seq = hub.publish(SyncBody::PoiUpdate(PoiChange::Remove { id })).map_err(|e| ApiError::internal(e.to_string()))?;
    drop(hub);
    json_response(StatusCode::OK, &json!({ "id": id, "seq": seq }))
}

/// Serves `key` from the plan cache or computes, stores and returns it.
async fn cached_plan(
    state: &AppState,
    scenario: &str,
    key: String,
    compute: impl FnOnce() -> Result<Vec<u8>, EngineError> + Send + 'static,
) -> Result<Response, ApiError> {
    let key = (scenario.to_string(), key);
    let hit = state.plans.lock().expect("plan cache").get(&key).cloned();
    let (bytes, flag) = match hit {
        Some(bytes) => (bytes, "hit"),
        None => {
            let bytes = Arc::new(blocking(compute).await??);
            state.plans.lock().expect("plan cache").insert(key, bytes.clone());
            (bytes, "miss")
        }
    };
    let mut res = json_bytes(StatusCode::OK, bytes.as_ref().clone());
    res.headers_mut().insert(CACHE_HEADER, HeaderValue::from_static(flag));
    Ok(res)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanViewsBody {
    scenario: String,
    /// The session's POIs when absent.
    pois: Option<Vec<Poi>>,
    layout: Option<DisplayLayout>,
    weights: Option<ObjectiveWeights>,
    seed: Option<u64>,
}

/// Layout used when a plan request names none: one 16:9 screen.
pub fn default_layout() -> DisplayLayout {
    DisplayLayout::single(1.6, 0.9, 1.0)
}

pub async fn plan_views(State(state): Shared, bytes: Bytes) -> Result<Response, ApiError> {
    let b: PlanViewsBody = body(&bytes)?;
    let entry = state.entry(&b.scenario)?;
    let engine = entry.engine.clone();
    let mut pois = match b.pois {
        Some(p) => p,
        None => entry.hub.lock().expect("hub lock").session().pois.values().copied().collect(),
    };
    pois.sort_by_key(|p| p.id);
    let layout = b.layout.unwrap_or_else(default_layout);
    layout.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidLayout", e.to_string()))?;
    let weights = b.weights.unwrap_or_else(|| engine.config().weights.clone());
    let seed = b.seed.unwrap_or(engine.config().pso.seed);
    let key = serde_json::to_string(&json!({ "op": "views", "pois": pois, "layout": layout, "weights": weights, "seed": seed }))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    cached_plan(&state, &entry.id, key, move || {
        let plan = engine.plan_tour(&pois, &layout, &weights, seed)?;
        Ok(serde_json::to_vec(&plan).expect("plan serializes"))
    })
    .await
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewpointDoc {
    pos: Vec3,
    yaw: f64,
    pitch: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanPathBody {
    scenario: String,
    viewpoints: Vec<ViewpointDoc>,
}

pub async fn plan_path(State(state): Shared, bytes: Bytes) -> Result<Response, ApiError> {
    let b: PlanPathBody = body(&bytes)?;
    let entry = state.entry(&b.scenario)?;
    let engine = entry.engine.clone();
    let poses: Vec<CameraPose> = b.viewpoints.iter().map(|v| CameraPose::new(v.pos, v.yaw, v.pitch)).collect();
    if poses.iter().any(|p| !p.is_finite()) {
        return Err(ApiError::bad_request("viewpoints must be finite"));
    }
    let key = serde_json::to_string(&json!({ "op": "path", "viewpoints": b.viewpoints }))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    cached_plan(&state, &entry.id, key, move || {
        let plan = engine.plan_path(&poses)?;
        Ok(serde_json::to_vec(&plan).expect("plan serializes"))
    })
    .await
}
