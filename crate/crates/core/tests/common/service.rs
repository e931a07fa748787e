//! In-process stand-in for the inference service, backed by the mock
//! scorer and encoder.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use soup::prelude::*;

#[derive(Default)]
pub struct Behaviour {
    /// Answer this many requests with 503 before serving normally.
    pub fail_first: usize,
    /// Report this `dim` from `/embed` regardless of the vectors.
    pub wrong_dim: Option<usize>,
}

pub struct Service {
    scorer: MockScorer,
    encoder: MockEncoder,
    behaviour: Behaviour,
    pub hits: AtomicUsize,
}

pub struct Running {
    pub url: String,
    pub service: Arc<Service>,
}

#[derive(Deserialize)]
struct EmbedBody {
    texts: Vec<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

impl Service {
    fn flaky(&self) -> Option<Response> {
        let n = self.hits.fetch_add(1, Ordering::SeqCst);
        (n < self.behaviour.fail_first)
            .then(|| error(StatusCode::SERVICE_UNAVAILABLE, "warming up"))
    }
}

async fn score_mask(State(s): State<Arc<Service>>, Json(req): Json<ScoreRequest>) -> Response {
    if let Some(r) = s.flaky() {
        return r;
    }
    match s.scorer.score_mask(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn embed(State(s): State<Arc<Service>>, Json(req): Json<EmbedBody>) -> Response {
    if let Some(r) = s.flaky() {
        return r;
    }
    match s.encoder.embed(&req.texts) {
        Ok(vectors) => {
            let dim = s.behaviour.wrong_dim.unwrap_or(s.encoder.dim());
            Json(json!({ "dim": dim, "vectors": vectors })).into_response()
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn info(State(s): State<Arc<Service>>) -> Response {
    if let Some(r) = s.flaky() {
        return r;
    }
    Json(json!({
        "model": "mock-mlm",
        "encoder": "mock-encoder",
        "dim": s.encoder.dim(),
        "max_context_tokens": 512
    }))
    .into_response()
}

/// Serve on an ephemeral localhost port from a background thread.
pub fn spawn(scorer: MockScorer, encoder: MockEncoder, behaviour: Behaviour) -> Running {
    let service = Arc::new(Service {
        scorer,
        encoder,
        behaviour,
        hits: AtomicUsize::new(0),
    });
    let app = Router::new()
        .route("/score_mask", post(score_mask))
        .route("/embed", post(embed))
        .route("/info", get(info))
        .with_state(Arc::clone(&service));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    Running { url, service }
}
