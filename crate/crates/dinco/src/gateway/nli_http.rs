//! Remote NLI scorer: `POST {premise, hypothesis}` → `{entail, contradict, neutral}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GatewayError, NliBackend, NliProbs, NliRequest};

#[derive(Serialize)]
pub(crate) struct WireNliRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Deserialize)]
struct WireNliResponse {
    entail: f64,
    contradict: f64,
    neutral: f64,
}

pub(crate) fn parse_nli_response(body: &str) -> Result<NliProbs, GatewayError> {
    let r: WireNliResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::InvalidResponse(format!("NLI response: {e}")))?;
    NliProbs::new(r.entail, r.contradict, r.neutral)
}

pub struct HttpNliBackend {
    id: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpNliBackend {
    pub fn new(url: impl Into<String>, timeout_secs: u64) -> Result<Self, GatewayError> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpNliBackend {
            id: format!("nli-http:{url}"),
            url,
            client,
        })
    }
}

impl NliBackend for HttpNliBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, request: &NliRequest) -> Result<NliProbs, GatewayError> {
        let (premise, hypothesis) = request.conditioned_texts();
        let resp = self
            .client
            .post(&self.url)
            .json(&WireNliRequest {
                premise,
                hypothesis,
            })
            .send()
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(GatewayError::Transient(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(GatewayError::InvalidResponse(format!(
                "HTTP {status}: {text}"
            )));
        }
        parse_nli_response(&text)
    }
}
