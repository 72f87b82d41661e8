//! HTTP and WebSocket surface over a [`ServiceHandle`].

use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feedsim_core::params::ParamPatch;
use tokio::sync::broadcast::error::RecvError;

use crate::service::{tree_catalog, ActionRequest, ApiError, ServiceHandle};

/// Upper bound on how long `POST /estop` waits for the latch before answering.
const ESTOP_ACK_WAIT: Duration = Duration::from_secs(2);

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Busy { .. } | ApiError::AlreadyTerminal { .. } => StatusCode::CONFLICT,
            ApiError::SafetyLockout { .. } => StatusCode::LOCKED,
            ApiError::ValidationFailed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::UnknownId { .. } => StatusCode::NOT_FOUND,
            ApiError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = serde_json::to_value(&self).unwrap_or_default();
        body["message"] = self.to_string().into();
        (self.status(), Json(body)).into_response()
    }
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v).map_err(|e| ApiError::ValidationFailed {
        field: None,
        message: e.body_text(),
    })
}

pub fn router(handle: ServiceHandle) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/actions", post(post_action))
        .route("/actions/{id}", get(get_action))
        .route("/actions/{id}/preempt", post(post_preempt))
        .route("/params", get(get_params).patch(patch_params))
        .route("/estop", post(post_estop))
        .route("/estop/reset", post(post_estop_reset))
        .route("/trees", get(get_trees))
        .route("/telemetry", get(ws_telemetry))
        .with_state(handle)
}

async fn get_state(State(h): State<ServiceHandle>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.state().await?))
}

async fn post_action(
    State(h): State<ServiceHandle>,
    req: Result<Json<ActionRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let rec = h.start_action(body(req)?).await?;
    Ok((StatusCode::ACCEPTED, Json(rec)))
}

async fn get_action(
    State(h): State<ServiceHandle>,
    Path(id): Path<u64>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.action(id).await?))
}

async fn post_preempt(
    State(h): State<ServiceHandle>,
    Path(id): Path<u64>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.preempt(id).await?))
}

async fn get_params(State(h): State<ServiceHandle>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.params().await?))
}

async fn patch_params(
    State(h): State<ServiceHandle>,
    patch: Result<Json<ParamPatch>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.patch_params(body(patch)?).await?))
}

async fn post_estop(State(h): State<ServiceHandle>) -> impl IntoResponse {
    Json(h.estop(ESTOP_ACK_WAIT).await)
}

async fn post_estop_reset(State(h): State<ServiceHandle>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(h.reset_estop().await?))
}

async fn get_trees() -> impl IntoResponse {
    Json(tree_catalog())
}

async fn ws_telemetry(State(h): State<ServiceHandle>, ws: WebSocketUpgrade) -> Response {
    let rx = h.subscribe();
    ws.on_upgrade(move |socket| stream_telemetry(socket, rx))
}

async fn stream_telemetry(
    mut socket: WebSocket,
    mut rx: tokio::sync::broadcast::Receiver<feedsim_core::runtime::TelemetryFrame>,
) {
    loop {
        let frame = match rx.recv().await {
            Ok(f) => f,
            // A slow client skips frames; sequence numbers expose the gap.
            Err(RecvError::Lagged(_)) => continue,
            Err(RecvError::Closed) => break,
        };
        let text = match serde_json::to_string(&frame) {
            Ok(t) => t,
            Err(e) => {
                log::error!("telemetry serialization failed: {e}");
                break;
            }
        };
        if socket.send(Message::Text(text.into())).await.is_err() {
            break;
        }
    }
}
