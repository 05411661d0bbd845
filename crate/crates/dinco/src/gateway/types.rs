use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Tolerance on the three NLI probabilities summing to one.
pub const NLI_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Top-token logprobs requested per generated position.
    #[serde(default)]
    pub num_top_alternatives: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<u32>,
    /// Sampling seed. Distinguishes repeated temperature-1 draws in the cache
    /// key and makes mock sampling reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodeParams {
    pub fn greedy(max_tokens: u32) -> Self {
        DecodeParams {
            temperature: 0.0,
            max_tokens,
            num_top_alternatives: 0,
            beam_width: None,
            seed: None,
        }
    }

    pub fn sampled(temperature: f64, max_tokens: u32, seed: u64) -> Self {
        DecodeParams {
            temperature,
            max_tokens,
            num_top_alternatives: 0,
            beam_width: None,
            seed: Some(seed),
        }
    }

    pub fn with_alternatives(mut self, n: u32) -> Self {
        self.num_top_alternatives = n;
        self
    }

    pub(crate) fn validate(&self, caps: &ProviderCapabilities) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a nonnegative real, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams(
                "max_tokens must be positive".into(),
            ));
        }
        if self.num_top_alternatives > 0 && !caps.has_top_alternatives {
            return Err(GatewayError::Capability(
                "top-token alternatives requested from a provider without top-alternative access"
                    .into(),
            ));
        }
        match self.beam_width {
            Some(0) => Err(GatewayError::InvalidParams(
                "beam_width must be positive".into(),
            )),
            Some(_) if !caps.has_beam_search => Err(GatewayError::Capability(
                "beam_width requested from a provider without beam search".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        TokenLogprob {
            token: token.into(),
            logprob,
        }
    }

    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// Generated text with optional per-token logprobs and top alternatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default)]
    pub tokens: Vec<TokenLogprob>,
    /// One list per generated position, sorted by descending logprob.
    #[serde(default)]
    pub alternatives: Vec<Vec<TokenLogprob>>,
}

impl Completion {
    pub fn text_only(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            tokens: Vec::new(),
            alternatives: Vec::new(),
        }
    }

    /// Builds a completion whose text is the concatenation of `tokens`.
    pub fn from_tokens(tokens: Vec<TokenLogprob>, alternatives: Vec<Vec<TokenLogprob>>) -> Self {
        let text = tokens.iter().map(|t| t.token.as_str()).collect();
        Completion {
            text,
            tokens,
            alternatives,
        }
    }

    pub fn has_logprobs(&self) -> bool {
        !self.tokens.is_empty()
    }

    pub fn sequence_logprob(&self) -> f64 {
        self.tokens.iter().map(|t| t.logprob).sum()
    }

    /// Enforces the ordering and membership rules on logprob data, dropping
    /// whatever the provider's capabilities do not cover.
    pub(crate) fn normalize(
        mut self,
        caps: &ProviderCapabilities,
        params: &DecodeParams,
    ) -> Result<Self, GatewayError> {
        if !caps.has_logprobs {
            self.tokens.clear();
        }
        if !caps.has_top_alternatives || params.num_top_alternatives == 0 {
            self.alternatives.clear();
        }
        for t in &self.tokens {
            if t.logprob.is_nan() || t.logprob > 0.0 {
                return Err(GatewayError::InvalidResponse(format!(
                    "token {:?} has logprob {} > 0",
                    t.token, t.logprob
                )));
            }
        }
        if self.alternatives.is_empty() {
            return Ok(self);
        }
        if self.alternatives.len() != self.tokens.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "{} alternative lists for {} tokens",
                self.alternatives.len(),
                self.tokens.len()
            )));
        }
        let n = params.num_top_alternatives as usize;
        for (realized, alts) in self.tokens.iter().zip(self.alternatives.iter_mut()) {
            if !alts.iter().any(|a| a.token == realized.token) {
                alts.push(realized.clone());
            }
            alts.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
            if alts.len() > n {
                // keep the realized token even when it ranks below the cut
                let keep_realized = alts.iter().position(|a| a.token == realized.token).unwrap();
                if keep_realized >= n && n > 0 {
                    let r = alts.remove(keep_realized);
                    alts.truncate(n - 1);
                    alts.push(r);
                } else {
                    alts.truncate(n.max(1));
                }
            }
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    pub text: String,
    pub sequence_logprob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Three-way NLI distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub entail: f64,
    pub contradict: f64,
    pub neutral: f64,
}

impl NliProbs {
    pub fn new(entail: f64, contradict: f64, neutral: f64) -> Result<Self, GatewayError> {
        let p = NliProbs {
            entail,
            contradict,
            neutral,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn entailment() -> Self {
        NliProbs {
            entail: 1.0,
            contradict: 0.0,
            neutral: 0.0,
        }
    }

    pub fn contradiction() -> Self {
        NliProbs {
            entail: 0.0,
            contradict: 1.0,
            neutral: 0.0,
        }
    }

    pub fn neutral() -> Self {
        NliProbs {
            entail: 0.0,
            contradict: 0.0,
            neutral: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let parts = [self.entail, self.contradict, self.neutral];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GatewayError::InvalidResponse(format!(
                "NLI probabilities out of [0,1]: {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > NLI_SUM_TOLERANCE {
            return Err(GatewayError::NliNormalization { sum });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCapabilities {
    #[serde(default)]
    pub has_logprobs: bool,
    #[serde(default)]
    pub has_top_alternatives: bool,
    #[serde(default)]
    pub has_beam_search: bool,
}

impl ProviderCapabilities {
    pub const BLACK_BOX: ProviderCapabilities = ProviderCapabilities {
        has_logprobs: false,
        has_top_alternatives: false,
        has_beam_search: false,
    };

    pub const TOP_TOKENS: ProviderCapabilities = ProviderCapabilities {
        has_logprobs: true,
        has_top_alternatives: true,
        has_beam_search: false,
    };

    pub const FULL: ProviderCapabilities = ProviderCapabilities {
        has_logprobs: true,
        has_top_alternatives: true,
        has_beam_search: true,
    };

    pub fn is_black_box(&self) -> bool {
        !self.has_logprobs && !self.has_top_alternatives && !self.has_beam_search
    }
}

/// One NLI query. `context` conditions both texts (e.g. on the question).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliRequest {
    pub premise: String,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl NliRequest {
    /// Premise and hypothesis as sent to a text-pair scorer, with the
    /// context prepended to both as `Q: {context} A: {text}`.
    pub fn conditioned_texts(&self) -> (String, String) {
        match &self.context {
            Some(q) => (
                format!("Q: {q} A: {}", self.premise),
                format!("Q: {q} A: {}", self.hypothesis),
            ),
            None => (self.premise.clone(), self.hypothesis.clone()),
        }
    }
}
