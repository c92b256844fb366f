//! HTTP scoring and classification service.

use std::sync::Arc;

use arrowrl_core::classify::Classifier;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use serde_json::{json, Value};

use crate::scoring::{render, ScoreError, Scorer};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct AppState {
    pub scorer: Scorer,
    /// Classifier behind `/v1/classify`.
    pub classifier: Arc<dyn Classifier>,
    pub max_batch: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/score", post(score))
        .route("/v1/score_batch", post(score_batch))
        .route("/v1/classify", post(classify))
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(Arc::new(state))
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn json_value<T: Serialize>(status: StatusCode, value: &T) -> Response {
    json_body(status, serde_json::to_string(value).expect("response serializes"))
}

#[allow(clippy::result_large_err)]
fn parse(body: &Bytes) -> Result<Value, Response> {
    serde_json::from_slice(body).map_err(|e| {
        json_value(
            StatusCode::BAD_REQUEST,
            &ScoreError {
                error: format!("malformed JSON: {e}"),
                fields: Vec::new(),
            },
        )
    })
}

async fn health() -> Response {
    json_value(StatusCode::OK, &json!({"status": "ok", "version": VERSION}))
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value = match parse(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    match state.scorer.score_value(&value) {
        Ok(b) => json_body(StatusCode::OK, render(&b)),
        Err(e) => json_value(StatusCode::BAD_REQUEST, &e),
    }
}

#[derive(Serialize)]
struct ItemError {
    index: usize,
    #[serde(flatten)]
    error: ScoreError,
}

async fn score_batch(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value = match parse(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Value::Array(items) = value else {
        return json_value(
            StatusCode::BAD_REQUEST,
            &json!({"error": "expected a JSON array of score requests"}),
        );
    };
    if items.len() > state.max_batch {
        return json_value(
            StatusCode::PAYLOAD_TOO_LARGE,
            &json!({"error": format!("batch of {} exceeds the limit of {}", items.len(), state.max_batch)}),
        );
    }
    let mut rendered = Vec::with_capacity(items.len());
    let mut errors = Vec::new();
    for (index, item) in items.iter().enumerate() {
        match state.scorer.score_value(item) {
            Ok(b) => rendered.push(render(&b)),
            Err(error) => errors.push(ItemError { index, error }),
        }
    }
    if !errors.is_empty() {
        return json_value(
            StatusCode::BAD_REQUEST,
            &json!({"error": "invalid batch", "items": errors}),
        );
    }
    json_body(StatusCode::OK, format!("[{}]", rendered.join(",")))
}

async fn classify(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value = match parse(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Some(query) = value.get("query").and_then(Value::as_str).map(str::to_owned) else {
        return json_value(
            StatusCode::BAD_REQUEST,
            &json!({"error": "invalid request", "fields": [{"field": "query", "message": "expected a string"}]}),
        );
    };
    let classifier = Arc::clone(&state.classifier);
    // LLM calls block on network I/O
    let outcome = tokio::task::spawn_blocking(move || classifier.classify(&query)).await;
    match outcome {
        Ok(Ok(result)) => json_value(StatusCode::OK, &result),
        Ok(Err(e)) if e.is_retryable() => json_value(
            StatusCode::SERVICE_UNAVAILABLE,
            &json!({"error": format!("classifier backend unavailable: {e}")}),
        ),
        Ok(Err(e)) => json_value(StatusCode::BAD_GATEWAY, &json!({"error": e.to_string()})),
        Err(e) => json_value(StatusCode::INTERNAL_SERVER_ERROR, &json!({"error": e.to_string()})),
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: &str, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
