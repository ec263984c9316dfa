//! HTTP+JSON routes over a [`SuggestService`].

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::{ServiceError, SuggestRequest, SuggestService};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Inference(_) | ServiceError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            error: self.to_string(),
            code: self.code().to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct SuggestParams {
    pub uid: String,
    pub prefix: String,
    pub k: Option<usize>,
    #[serde(default)]
    pub debug: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickBody {
    pub uid: String,
    pub text: String,
    pub kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickAck {
    pub status: String,
    pub history_len: usize,
}

async fn suggest(
    State(svc): State<Arc<SuggestService>>,
    params: Result<Query<SuggestParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(p) = params.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let req = SuggestRequest {
        user_id: p.uid,
        prefix: p.prefix,
        k: p.k,
        debug: p.debug,
    };
    Ok(Json(svc.suggest(&req).await?).into_response())
}

async fn click(
    State(svc): State<Arc<SuggestService>>,
    body: Result<Json<ClickBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ServiceError> {
    let Json(b) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let n = svc.record_click(&b.uid, &b.text, &b.kind)?;
    Ok(Json(ClickAck {
        status: "ok".into(),
        history_len: n,
    })
    .into_response())
}

async fn health(State(svc): State<Arc<SuggestService>>) -> Response {
    Json(svc.health()).into_response()
}

pub fn router(service: Arc<SuggestService>) -> Router {
    Router::new()
        .route("/suggest", get(suggest))
        .route("/click", post(click))
        .route("/health", get(health))
        .with_state(service)
}
