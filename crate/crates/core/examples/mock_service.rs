//! A local stand-in for the inference service, serving the mock scorer over
//! the `/score_mask`, `/embed` and `/info` endpoints, driven through the
//! HTTP client.
//!
//! Run with: cargo run --example mock_service

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use soup::prelude::*;
use soup::scorer::ScorePart;

struct Backend {
    scorer: MockScorer,
    encoder: MockEncoder,
}

#[derive(Deserialize)]
struct EmbedBody {
    texts: Vec<String>,
}

fn bad_request(e: SoupError) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": e.to_string() })),
    )
        .into_response()
}

async fn score_mask(State(b): State<Arc<Backend>>, Json(req): Json<ScoreRequest>) -> Response {
    match b.scorer.score_mask(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => bad_request(e),
    }
}

async fn embed(State(b): State<Arc<Backend>>, Json(req): Json<EmbedBody>) -> Response {
    match b.encoder.embed(&req.texts) {
        Ok(vectors) => Json(json!({ "dim": b.encoder.dim(), "vectors": vectors })).into_response(),
        Err(e) => bad_request(e),
    }
}

async fn info(State(b): State<Arc<Backend>>) -> Json<serde_json::Value> {
    Json(json!({
        "model": "mock",
        "encoder": "mock",
        "dim": b.encoder.dim(),
        "max_context_tokens": 512
    }))
}

fn main() -> Result<()> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/data/reviews/mock.json"
    );
    let (scorer, encoder) = MockFixture::from_json_file(path)?.build()?;
    let app = Router::new()
        .route("/score_mask", post(score_mask))
        .route("/embed", post(embed))
        .route("/info", get(info))
        .with_state(Arc::new(Backend { scorer, encoder }));

    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let url = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            axum::serve(listener, app).await.expect("server");
        });
    });

    let client = HttpScorer::new(&url)?;
    println!("serving on {url}: {:?}", client.info()?);

    let imdb = builtin_task("imdb").unwrap();
    let request = ScoreRequest {
        parts: vec![ScorePart::new(
            "Not worth the time! The movie is [MASK].",
            Some(120),
        )],
        candidates: imdb.verbalizer_tokens().to_vec(),
    };
    println!("score_mask: {:?}", client.score_mask(&request)?.scores);

    let two_masks = ScoreRequest {
        parts: vec![ScorePart::new("[MASK] and [MASK]", None)],
        candidates: vec!["good".into()],
    };
    println!("two masks: {}", client.score_mask(&two_masks).unwrap_err());

    let vectors = client.embed(&["Not worth watching.".to_string()])?;
    println!("embed: {:?}", vectors[0]);
    Ok(())
}
