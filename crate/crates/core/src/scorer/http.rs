use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};

use super::{Encoder, ScoreRequest, ScoreResponse, Scorer};
use crate::error::{Result, SoupError};

/// Environment variable consulted when no scorer URL is configured.
pub const SCORER_URL_ENV: &str = "SOUP_SCORER_URL";

/// Body of `GET /info`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub model: String,
    pub encoder: String,
    pub dim: usize,
    pub max_context_tokens: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Client for the inference service's `/score_mask`, `/embed` and `/info`
/// endpoints.
///
/// Connection failures and 5xx responses are retried up to `retries` times
/// with linear backoff; 400 responses surface as protocol errors.
#[derive(Clone, Debug)]
pub struct HttpScorer {
    base_url: String,
    client: Client,
    retries: usize,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        Self::with_timeout(base_url, Duration::from_secs(120))
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SoupError::Transport(e.to_string()))?;
        Ok(HttpScorer {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
            retries: 2,
        })
    }

    /// Uses `url` if given, otherwise `$SOUP_SCORER_URL`.
    pub fn from_config(url: Option<&str>) -> Result<Self> {
        match url {
            Some(url) => Self::new(url),
            None => match std::env::var(SCORER_URL_ENV) {
                Ok(url) if !url.is_empty() => Self::new(url),
                _ => Err(SoupError::Config(format!(
                    "no scorer URL configured and {SCORER_URL_ENV} is unset"
                ))),
            },
        }
    }

    pub fn retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn info(&self) -> Result<ServiceInfo> {
        self.with_retries(|| {
            let resp = self
                .client
                .get(format!("{}/info", self.base_url))
                .send()
                .map_err(transport)?;
            decode(resp)
        })
    }

    fn post<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<T> {
        self.with_retries(|| {
            let resp = self
                .client
                .post(format!("{}{path}", self.base_url))
                .json(body)
                .send()
                .map_err(transport)?;
            decode(resp)
        })
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(200 * attempt as u64));
                }
                other => return other,
            }
        }
    }
}

fn transport(e: reqwest::Error) -> SoupError {
    SoupError::Transport(e.to_string())
}

fn decode<T: for<'de> Deserialize<'de>>(resp: Response) -> Result<T> {
    let status = resp.status();
    let body = resp.bytes().map_err(transport)?;
    if status.is_success() {
        return serde_json::from_slice(&body)
            .map_err(|e| SoupError::Protocol(format!("malformed response body: {e}")));
    }
    let message = serde_json::from_slice::<ErrorBody>(&body)
        .map(|b| b.error)
        .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
    if status.is_client_error() {
        Err(SoupError::Protocol(format!("{status}: {message}")))
    } else {
        Err(SoupError::Transport(format!("{status}: {message}")))
    }
}

impl Scorer for HttpScorer {
    fn identity(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn score_mask(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        self.post("/score_mask", request)
    }
}

impl Encoder for HttpScorer {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp: EmbedResponse = self.post("/embed", &EmbedRequest { texts })?;
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(SoupError::Protocol(format!(
                "service reported dim {} but returned a vector of length {}",
                resp.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }
}
