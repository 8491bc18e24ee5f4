//! JSON HTTP API over a [`SessionManager`]. Sessions are kept in memory and
//! vanish with the process.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use psro_core::config::ParamRange;
use psro_core::scenario::{canonical_test_paths, TestCatalog};
use psro_core::session::SessionManager;
use psro_core::Error;

pub type Shared = Arc<SessionManager>;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownSession(_) => StatusCode::NOT_FOUND,
            Error::StepOverflow(_) => StatusCode::CONFLICT,
            Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::Shape(_) | Error::OutOfDomain { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": {"kind": crate::exit::kind(&self.0), "message": self.0.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
pub struct CreateSession {
    pub scenario: String,
}

#[derive(Deserialize)]
pub struct SubmitStep {
    pub mu: Vec<f64>,
}

#[derive(Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub bounds: Vec<ParamRange>,
    pub n_steps: usize,
    pub fields: Vec<String>,
    pub catalog: TestCatalog,
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn scenarios(State(m): State<Shared>) -> ApiResult<Vec<ScenarioSummary>> {
    let mut out = Vec::new();
    for name in m.scenario_names() {
        let s = m.surrogate(&name).expect("listed scenario is loaded");
        out.push(ScenarioSummary {
            name,
            bounds: s.scenario.bounds.clone(),
            n_steps: s.n_steps(),
            fields: s.registry().iter().map(|f| f.to_string()).collect(),
            catalog: canonical_test_paths(&s.scenario)?,
        });
    }
    Ok(Json(out))
}

async fn create(State(m): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let info = m.create(&req.scenario)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn step(State(m): State<Shared>, Path(id): Path<String>, Json(req): Json<SubmitStep>) -> Result<Response, ApiError> {
    let resp = m.step(&id, req.mu)?;
    Ok(Json(resp).into_response())
}

async fn history(State(m): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(m.history(&id)?).into_response())
}

async fn delete(State(m): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    m.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(manager: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/scenarios", get(scenarios))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(history).delete(delete))
        .route("/sessions/{id}/steps", post(step))
        .with_state(manager)
        .layer(CorsLayer::permissive());
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(manager: Shared, addr: &str, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, scenarios = ?manager.scenario_names(), "listening");
    axum::serve(listener, router(manager, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
