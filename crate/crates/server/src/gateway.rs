//! Browser-facing HTTP bridge onto the same hub the TCP protocol serves.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde_json::{json, Value};
use thermotwin::assistant::{assist, AssistError};
use thermotwin::telemetry::{error_reply, TelemetryError};

use crate::hub::Hub;

/// Push period of `/api/stream`.
pub const STREAM_PERIOD: Duration = Duration::from_secs(1);

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/api/state", get(state))
        .route("/api/stream", get(stream_state))
        .route("/api/command", post(command))
        .route("/api/assist", post(assist_query))
        .with_state(hub)
}

async fn state(State(hub): State<Arc<Hub>>) -> Json<Value> {
    Json(hub.state_json())
}

async fn stream_state(State(hub): State<Arc<Hub>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let ticker = tokio::time::interval(STREAM_PERIOD);
    let s = stream::unfold((hub, ticker), |(hub, mut ticker)| async move {
        ticker.tick().await;
        let ev = Event::default().event("state").data(hub.state_json().to_string());
        Some((Ok(ev), (hub, ticker)))
    });
    Sse::new(s).keep_alive(KeepAlive::default())
}

fn telemetry_error(e: TelemetryError) -> Response {
    let status = match e {
        TelemetryError::UnknownNode(_) => StatusCode::NOT_FOUND,
        TelemetryError::AccessDenied(_) => StatusCode::FORBIDDEN,
        TelemetryError::OutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        TelemetryError::MalformedMessage(_) => StatusCode::BAD_REQUEST,
    };
    (status, Json(error_reply(&e))).into_response()
}

/// Body: `{"node": "...", "value": x}`.
async fn command(State(hub): State<Arc<Hub>>, body: Option<Json<Value>>) -> Response {
    let parsed = body.and_then(|Json(v)| Some((v.get("node")?.as_str()?.to_string(), v.get("value")?.as_f64()?)));
    let Some((node, value)) = parsed else {
        return telemetry_error(TelemetryError::MalformedMessage("expected {\"node\": string, \"value\": number}".into()));
    };
    match hub.write(&node, value) {
        Ok(applied) => Json(json!({ "ok": true, "node": node, "value": applied })).into_response(),
        Err(e) => telemetry_error(e),
    }
}

/// Body: `{"query": "..."}`.
async fn assist_query(State(hub): State<Arc<Hub>>, body: Option<Json<Value>>) -> Response {
    let query = body.and_then(|Json(v)| v.get("query")?.as_str().map(str::to_string)).unwrap_or_default();
    let (frame, twin) = hub.assist_inputs();
    let Some(frame) = frame else {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "ok": false, "err": "NoData" }))).into_response();
    };
    match assist(&query, &frame, twin.as_ref(), &hub.backend, hub.heater_max_kw).await {
        Ok(reply) => Json(json!({ "ok": true, "reply": reply })).into_response(),
        Err(e) => {
            let (status, code) = match e {
                AssistError::EmptyQuery => (StatusCode::BAD_REQUEST, "EmptyQuery"),
                AssistError::MissingChannel(_) => (StatusCode::SERVICE_UNAVAILABLE, "MissingChannel"),
                AssistError::Timeout => (StatusCode::GATEWAY_TIMEOUT, "Timeout"),
                AssistError::BackendUnavailable(_) => (StatusCode::BAD_GATEWAY, "BackendUnavailable"),
                AssistError::BadResponse(_) => (StatusCode::BAD_GATEWAY, "BadResponse"),
            };
            (status, Json(json!({ "ok": false, "err": code, "msg": e.to_string() }))).into_response()
        }
    }
}
