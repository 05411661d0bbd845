//! OpenAI-compatible `chat/completions` provider.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChatMessage, Completion, DecodeParams, GatewayError, Provider, ProviderCapabilities,
    TokenLogprob,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Unset or empty
    /// variables send no `Authorization` header (local servers).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub capabilities: ProviderCapabilities,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct OpenAiCompatibleProvider {
    id: String,
    config: ProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatibleProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        if config.capabilities.has_beam_search {
            return Err(GatewayError::Capability(
                "beam search is not part of the chat/completions protocol".into(),
            ));
        }
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(OpenAiCompatibleProvider {
            id: format!(
                "openai-compatible:{}@{}",
                config.model,
                config.base_url.trim_end_matches('/')
            ),
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

pub(crate) fn build_chat_request(
    model: &str,
    caps: &ProviderCapabilities,
    messages: &[ChatMessage],
    params: &DecodeParams,
) -> Value {
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    if caps.has_logprobs {
        body["logprobs"] = json!(true);
        if params.num_top_alternatives > 0 {
            body["top_logprobs"] = json!(params.num_top_alternatives);
        }
    }
    body
}

#[derive(Deserialize)]
struct WireTop {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireTop>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Parses a `chat/completions` response body. A missing or null message
/// content (refusals) yields an empty text.
pub(crate) fn parse_chat_response(body: &str) -> Result<Completion, GatewayError> {
    let resp: WireResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::InvalidResponse(format!("chat response: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::InvalidResponse("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let content = choice.logprobs.and_then(|l| l.content).unwrap_or_default();
    let mut tokens = Vec::with_capacity(content.len());
    let mut alternatives = Vec::with_capacity(content.len());
    for t in content {
        tokens.push(TokenLogprob::new(t.token, t.logprob));
        alternatives.push(
            t.top_logprobs
                .into_iter()
                .map(|a| TokenLogprob::new(a.token, a.logprob))
                .collect::<Vec<_>>(),
        );
    }
    if alternatives.iter().all(Vec::is_empty) {
        alternatives.clear();
    }
    Ok(Completion {
        text,
        tokens,
        alternatives,
    })
}

impl Provider for OpenAiCompatibleProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> ProviderCapabilities {
        self.config.capabilities
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        let body = build_chat_request(
            &self.config.model,
            &self.config.capabilities,
            messages,
            params,
        );
        let mut req = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
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
        parse_chat_response(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_carries_logprob_fields_per_capability() {
        let msgs = [ChatMessage::user("hi")];
        let params = DecodeParams::sampled(1.0, 16, 7).with_alternatives(5);
        let body = build_chat_request("m", &ProviderCapabilities::TOP_TOKENS, &msgs, &params);
        assert_eq!(body["logprobs"], json!(true));
        assert_eq!(body["top_logprobs"], json!(5));
        assert_eq!(body["seed"], json!(7));
        assert_eq!(body["messages"][0]["role"], json!("user"));
        let bb = build_chat_request(
            "m",
            &ProviderCapabilities::BLACK_BOX,
            &msgs,
            &DecodeParams::greedy(4),
        );
        assert!(bb.get("logprobs").is_none());
        assert!(bb.get("seed").is_none());
    }

    #[test]
    fn parses_logprobs_and_alternatives() {
        let body = r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"Yes"},
            "logprobs":{"content":[{"token":"Yes","logprob":-0.2,"bytes":[89],
            "top_logprobs":[{"token":"Yes","logprob":-0.2},{"token":"No","logprob":-1.8}]}]}}]}"#;
        let c = parse_chat_response(body).unwrap();
        assert_eq!(c.text, "Yes");
        assert_eq!(c.tokens.len(), 1);
        assert_eq!(c.alternatives[0][1].token, "No");
    }

    #[test]
    fn null_content_is_empty_text() {
        let body =
            r#"{"choices":[{"message":{"role":"assistant","content":null,"refusal":"I can't"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap().text, "");
        assert!(matches!(
            parse_chat_response(r#"{"choices":[]}"#),
            Err(GatewayError::InvalidResponse(_))
        ));
    }
}
