//! Deterministic in-process backends for tests and offline runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{
    BeamHypothesis, ChatMessage, Completion, DecodeParams, GatewayError, NliBackend, NliProbs,
    NliRequest, Provider, ProviderCapabilities,
};
use crate::text::normalize;

type CompleteFn =
    dyn Fn(&[ChatMessage], &DecodeParams) -> Result<Completion, GatewayError> + Send + Sync;
type BeamFn =
    dyn Fn(&[ChatMessage], usize, u32) -> Result<Vec<BeamHypothesis>, GatewayError> + Send + Sync;

/// Provider backed by closures. Counts every backend invocation.
pub struct MockProvider {
    id: String,
    caps: ProviderCapabilities,
    complete: Box<CompleteFn>,
    beam: Option<Box<BeamFn>>,
    calls: AtomicU64,
}

impl MockProvider {
    pub fn from_fn<F>(id: impl Into<String>, caps: ProviderCapabilities, f: F) -> Self
    where
        F: Fn(&[ChatMessage], &DecodeParams) -> Result<Completion, GatewayError>
            + Send
            + Sync
            + 'static,
    {
        MockProvider {
            id: id.into(),
            caps,
            complete: Box::new(f),
            beam: None,
            calls: AtomicU64::new(0),
        }
    }

    /// Answers each prompt (last user message) from a fixed table; unknown
    /// prompts are refused.
    pub fn scripted(
        id: impl Into<String>,
        caps: ProviderCapabilities,
        table: HashMap<String, Completion>,
    ) -> Self {
        Self::from_fn(id, caps, move |messages, _| {
            let prompt = last_user(messages);
            Ok(table
                .get(prompt)
                .cloned()
                .unwrap_or_else(|| Completion::text_only("")))
        })
    }

    pub fn with_beam<F>(mut self, f: F) -> Self
    where
        F: Fn(&[ChatMessage], usize, u32) -> Result<Vec<BeamHypothesis>, GatewayError>
            + Send
            + Sync
            + 'static,
    {
        self.beam = Some(Box::new(f));
        self
    }

    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

pub fn last_user(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == super::Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> ProviderCapabilities {
        self.caps
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.complete)(messages, params)
    }

    fn beam_search(
        &self,
        messages: &[ChatMessage],
        beam_width: usize,
        max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.beam {
            Some(f) => f(messages, beam_width, max_tokens),
            None => Err(GatewayError::Capability(format!(
                "mock {} has no beam search",
                self.id
            ))),
        }
    }
}

type NliFn = dyn Fn(&NliRequest) -> Option<NliProbs> + Send + Sync;

/// Scripted NLI. Lookup order: custom rule, pair table, reflexive rule,
/// default. Texts are compared after normalization; context is ignored.
pub struct MockNli {
    id: String,
    pairs: HashMap<(String, String), NliProbs>,
    reflexive: bool,
    default: NliProbs,
    rule: Option<Box<NliFn>>,
}

impl MockNli {
    /// Identical texts entail each other; everything else is neutral.
    pub fn reflexive() -> Self {
        MockNli {
            id: "mock-nli".into(),
            pairs: HashMap::new(),
            reflexive: true,
            default: NliProbs::neutral(),
            rule: None,
        }
    }

    /// Identical texts entail, distinct texts fully contradict. Exact for
    /// mutually exclusive short answers.
    pub fn exact_match() -> Self {
        MockNli {
            id: "exact-match-nli".into(),
            default: NliProbs::contradiction(),
            ..Self::reflexive()
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_default(mut self, p: NliProbs) -> Self {
        self.default = p;
        self
    }

    pub fn with_pair(mut self, premise: &str, hypothesis: &str, p: NliProbs) -> Self {
        self.pairs
            .insert((normalize(premise), normalize(hypothesis)), p);
        self
    }

    /// Scripts both directions with the same distribution.
    pub fn with_symmetric(self, a: &str, b: &str, p: NliProbs) -> Self {
        self.with_pair(a, b, p).with_pair(b, a, p)
    }

    pub fn with_rule<F>(mut self, f: F) -> Self
    where
        F: Fn(&NliRequest) -> Option<NliProbs> + Send + Sync + 'static,
    {
        self.rule = Some(Box::new(f));
        self
    }
}

impl NliBackend for MockNli {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, request: &NliRequest) -> Result<NliProbs, GatewayError> {
        if let Some(p) = self.rule.as_ref().and_then(|f| f(request)) {
            return Ok(p);
        }
        let key = (normalize(&request.premise), normalize(&request.hypothesis));
        if let Some(p) = self.pairs.get(&key) {
            return Ok(*p);
        }
        if self.reflexive && key.0 == key.1 {
            return Ok(NliProbs::entailment());
        }
        Ok(self.default)
    }
}
