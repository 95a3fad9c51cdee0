use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde_json::{json, Value};

use surgedeck_core::engine::EngineError;
use surgedeck_core::meshgen::MeshError;
use surgedeck_core::query::QueryError;
use surgedeck_core::viewplan::{PathError, PlanError};

/// Error response: `{"error": kind, "detail": message, ...extra}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub detail: String,
    pub extra: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Self {
        Self { status, kind, detail: detail.into(), extra: None }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    pub fn unknown_scenario(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownScenario", format!("no scenario {id:?}"))
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }

    fn with(mut self, extra: Value) -> Self {
        self.extra = Some(extra);
        self
    }

    pub fn body(&self) -> Value {
        let mut body = json!({ "error": self.kind, "detail": self.detail });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (&self.extra, &mut body) {
            map.extend(extra.clone());
        }
        body
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body())).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let detail = e.to_string();
        match e {
            EngineError::Timepoint { .. } => Self::new(StatusCode::RANGE_NOT_SATISFIABLE, "TimepointOutOfRange", detail),
            EngineError::Heightfield(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Heightfield", detail),
            EngineError::Mesh(MeshError::OutOfBounds(..)) => Self::new(StatusCode::RANGE_NOT_SATISFIABLE, "OutOfBounds", detail),
            EngineError::Mesh(MeshError::BadCamera) => Self::bad_request(detail),
            EngineError::Plan(PlanError::Unreachable { ids, viewpoints }) => {
                let viewpoints: Vec<Value> =
                    viewpoints.iter().map(|v| json!({ "pos": v.position, "yaw": v.yaw, "pitch": v.pitch })).collect();
                Self::new(StatusCode::CONFLICT, "Unreachable", detail).with(json!({ "pois": ids, "viewpoints": viewpoints }))
            }
            EngineError::Plan(PlanError::NoPois) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "NoPois", detail),
            EngineError::Plan(PlanError::Weights(_)) => Self::new(StatusCode::BAD_REQUEST, "InvalidWeights", detail),
            EngineError::Path(PathError::PathBlocked(leg)) => {
                Self::new(StatusCode::CONFLICT, "PathBlocked", detail).with(json!({ "leg": leg }))
            }
            EngineError::Path(PathError::TooFewViewpoints) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "TooFewViewpoints", detail)
            }
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let detail = e.to_string();
        match e {
            QueryError::OutOfBounds { .. } => Self::new(StatusCode::RANGE_NOT_SATISFIABLE, "OutOfBounds", detail),
            QueryError::NoBuilding { .. } => Self::new(StatusCode::NOT_FOUND, "NoBuilding", detail),
        }
    }
}
