use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Pipeline, PipelineError};

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownPatient(_) => StatusCode::NOT_FOUND,
            PipelineError::NoHistory(_) => StatusCode::BAD_REQUEST,
            e if e.is_provider_failure() => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        ApiError(status, e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictBody {
    patient_id: String,
    #[serde(default)]
    comment: Option<String>,
}

async fn patients(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "patients": s.pipeline.test.patient_ids() }))
}

async fn history(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let p = &s.pipeline;
    let patient = p
        .test
        .patient(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown patient {id:?}")))?;
    let visits = patient.visits();
    let describe = |codes: &[usize]| -> Vec<Value> {
        codes
            .iter()
            .map(|&c| json!({ "code": p.registry.code(c), "name": p.registry.get(c).name }))
            .collect()
    };
    // the final visit is the prediction target and stays hidden
    let history: Vec<Vec<Value>> = visits[..visits.len() - 1].iter().map(|v| describe(v)).collect();
    Ok(Json(json!({ "patient_id": id, "visits": history })))
}

async fn predict(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: PredictBody =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request: {e}")))?;
    let pipeline = s.pipeline.clone();
    let artifact = tokio::task::spawn_blocking(move || {
        let patient = pipeline
            .test
            .patient(&req.patient_id)
            .ok_or_else(|| PipelineError::UnknownPatient(req.patient_id.clone()))?;
        pipeline.predict_patient(patient, req.comment.as_deref())
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let summaries = artifact.synthesis.as_ref().map(|s| s.summaries.clone()).unwrap_or_default();
    Ok(Json(json!({
        "patient_id": artifact.patient_id,
        "codes": artifact.prediction.codes,
        "explanation": artifact.prediction.explanation,
        "graph": artifact.graph,
        "summaries": summaries,
        "usage": artifact.usage,
        "history": artifact.history,
        "candidates": artifact.candidates,
        "stop_reason": artifact.discovery.as_ref().map(|d| d.stop_reason),
        "clinician_comment_used": artifact.prediction.clinician_comment_used,
        "fallback": artifact.prediction.fallback,
        "parse_failure": artifact.prediction.parse_failure,
        "warnings": artifact.prediction.warnings,
    })))
}

async fn metrics(State(s): State<AppState>, Path(run_id): Path<String>) -> Result<Response, ApiError> {
    if run_id.is_empty() || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ApiError(StatusCode::BAD_REQUEST, format!("invalid run id {run_id:?}")));
    }
    let path = s.pipeline.config.runs_dir.join(&run_id).join("metrics.json");
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError(StatusCode::NOT_FOUND, format!("no metrics for run {run_id}")))
        }
        Err(e) => Err(PipelineError::io(path, e).into()),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/patients", get(patients))
        .route("/patients/{id}/history", get(history))
        .route("/predict", post(predict))
        .route("/runs/{run_id}/metrics", get(metrics))
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(pipeline: Arc<Pipeline>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState { pipeline })).await
}
