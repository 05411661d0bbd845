//! A synthetic short-answer model with a known latent confidence.
//!
//! Each question carries a latent distribution over a finite answer set and
//! a bias factor `β ≥ 1`. Verbalized confidence on any candidate is
//! `min(1, β · latent)`, so the bias is multiplicative and shared across all
//! answers to the same question. The provider answers every built-in prompt
//! (answer, P(True), numerical, K-VC, prefix completion, SC-VC follow-up)
//! and supports beam search over the answer set.

use std::collections::HashMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::last_user;
use super::{
    BeamHypothesis, ChatMessage, Completion, DecodeParams, GatewayError, Provider,
    ProviderCapabilities, Role, TokenLogprob,
};
use crate::elicitation::templates::{TemplateId, TemplateSet};
use crate::seed::{mix, stream_rng};
use crate::text::normalize;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("question {index}: {message}")]
    Invalid { index: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub question: String,
    pub answers: Vec<String>,
    /// Latent confidence per answer; sums to one.
    pub latent: Vec<f64>,
    /// Multiplicative verbalization bias, at least one.
    pub bias: f64,
    /// Index of the true answer, when the question is labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<usize>,
    /// Refuse every prompt about this question.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refuse: bool,
}

impl SyntheticQuestion {
    pub fn answer_index(&self, text: &str) -> Option<usize> {
        let n = normalize(text);
        self.answers.iter().position(|a| normalize(a) == n)
    }

    pub fn latent_of(&self, text: &str) -> f64 {
        self.answer_index(text).map_or(0.0, |i| self.latent[i])
    }

    /// `min(1, β · latent)`; zero off the answer set.
    pub fn verbalized(&self, text: &str) -> f64 {
        (self.bias * self.latent_of(text)).min(1.0)
    }

    /// Most likely answer (lowest index on ties).
    pub fn mode(&self) -> usize {
        (0..self.latent.len())
            .max_by(|&a, &b| self.latent[a].total_cmp(&self.latent[b]).then(b.cmp(&a)))
            .unwrap()
    }

    /// True when no answer's verbalized confidence hits the cap.
    pub fn cap_inactive(&self) -> bool {
        self.latent.iter().all(|&p| self.bias * p <= 1.0)
    }

    /// Answer indices by descending latent confidence.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.answers.len()).collect();
        idx.sort_by(|&a, &b| self.latent[b].total_cmp(&self.latent[a]).then(a.cmp(&b)));
        idx
    }
}

/// How per-question bias factors are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasRule {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Separate ranges depending on whether the mode answer is the truth.
    ByCorrectness {
        correct: (f64, f64),
        incorrect: (f64, f64),
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub questions: Vec<SyntheticQuestion>,
}

impl SyntheticModelSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        for (index, q) in self.questions.iter().enumerate() {
            let bad = |message: String| Err(SyntheticError::Invalid { index, message });
            if q.answers.is_empty() || q.answers.len() != q.latent.len() {
                return bad(format!(
                    "{} answers, {} latent values",
                    q.answers.len(),
                    q.latent.len()
                ));
            }
            if q.latent.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("latent values outside [0,1]".into());
            }
            let sum: f64 = q.latent.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("latent sums to {sum}"));
            }
            if q.bias.is_nan() || q.bias < 1.0 {
                return bad(format!("bias {} < 1", q.bias));
            }
            let mut seen = std::collections::HashSet::new();
            if !q
                .answers
                .iter()
                .all(|a| !normalize(a).is_empty() && seen.insert(normalize(a)))
            {
                return bad("answers must be nonempty and distinct after normalization".into());
            }
            if matches!(q.truth, Some(t) if t >= q.answers.len()) {
                return bad("truth index out of range".into());
            }
        }
        Ok(())
    }

    /// Random questions with `n_answers` answers each. Latent distributions
    /// vary from flat to peaked; the true answer is drawn from the latent
    /// distribution, so latent confidence is calibrated by construction.
    pub fn generate(n_questions: usize, n_answers: usize, bias: BiasRule, seed: u64) -> Self {
        let questions = (0..n_questions)
            .map(|i| {
                let mut rng = stream_rng(mix(seed, i as u64), 0);
                let peak: f64 = rng.random_range(0.5..6.0);
                let weights: Vec<f64> = (0..n_answers)
                    .map(|_| rng.random::<f64>().powf(peak) + 1e-3)
                    .collect();
                let z: f64 = weights.iter().sum();
                let mut latent: Vec<f64> = weights.iter().map(|w| w / z).collect();
                // absorb rounding so the sum is one to the last bit we can get
                let rest: f64 = latent[1..].iter().sum();
                latent[0] = 1.0 - rest;
                let truth = WeightedIndex::new(&latent).unwrap().sample(&mut rng);
                let mut q = SyntheticQuestion {
                    question: format!("Synthetic question {i}: which option is right?"),
                    answers: (0..n_answers)
                        .map(|a| format!("Option {i}-{}", letter(a)))
                        .collect(),
                    latent,
                    bias: 1.0,
                    truth: Some(truth),
                    refuse: false,
                };
                let (lo, hi) = match bias {
                    BiasRule::Uniform { lo, hi } => (lo, hi),
                    BiasRule::ByCorrectness { correct, incorrect } => {
                        if q.mode() == truth {
                            correct
                        } else {
                            incorrect
                        }
                    }
                };
                q.bias = if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                };
                q
            })
            .collect();
        SyntheticModelSpec { questions }
    }
}

fn letter(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    loop {
        s.insert(0, (b'a' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s
}

pub struct SyntheticProvider {
    id: String,
    spec: SyntheticModelSpec,
    by_question: HashMap<String, usize>,
    caps: ProviderCapabilities,
    templates: TemplateSet,
    seed: u64,
}

impl SyntheticProvider {
    pub fn new(spec: SyntheticModelSpec, seed: u64) -> Result<Self, SyntheticError> {
        spec.validate()?;
        let by_question = spec
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.question.trim().to_string(), i))
            .collect();
        Ok(SyntheticProvider {
            id: format!("synthetic:{seed}"),
            spec,
            by_question,
            caps: ProviderCapabilities::FULL,
            templates: TemplateSet::default(),
            seed,
        })
    }

    pub fn with_capabilities(mut self, caps: ProviderCapabilities) -> Self {
        self.caps = caps;
        self.id = format!(
            "synthetic:{}:{}{}{}",
            self.seed,
            caps.has_logprobs as u8,
            caps.has_top_alternatives as u8,
            caps.has_beam_search as u8
        );
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    fn question(&self, text: &str) -> Option<&SyntheticQuestion> {
        self.by_question
            .get(text.trim())
            .map(|&i| &self.spec.questions[i])
    }

    fn field(&self, id: TemplateId, prompt: &str, name: &str) -> Option<String> {
        self.templates
            .get(id)
            .extract(prompt)
            .and_then(|mut f| f.remove(name))
    }

    fn answer(&self, q: &SyntheticQuestion, params: &DecodeParams) -> Completion {
        let chosen = match params.seed.filter(|_| params.temperature > 0.0) {
            Some(s) => {
                let w: Vec<f64> = q
                    .latent
                    .iter()
                    .map(|p| p.powf(1.0 / params.temperature))
                    .collect();
                let mut rng = stream_rng(mix(self.seed, s), 2);
                WeightedIndex::new(&w).unwrap().sample(&mut rng)
            }
            None => q.mode(),
        };
        let alternatives = vec![q
            .ranked()
            .into_iter()
            .take(params.num_top_alternatives as usize)
            .map(|i| TokenLogprob::new(q.answers[i].clone(), q.latent[i].ln()))
            .collect()];
        Completion {
            text: q.answers[chosen].clone(),
            tokens: vec![TokenLogprob::new(
                q.answers[chosen].clone(),
                q.latent[chosen].ln(),
            )],
            alternatives,
        }
    }

    fn yes_no(&self, v: f64) -> Completion {
        let text = if v >= 0.5 { "Yes" } else { "No" };
        let mut alts = Vec::new();
        if v > 0.0 {
            alts.push(TokenLogprob::new("Yes", v.ln()));
        }
        if v < 1.0 {
            alts.push(TokenLogprob::new("No", (1.0 - v).ln()));
        }
        let realized = alts.iter().find(|a| a.token == text).cloned().unwrap();
        Completion {
            text: text.to_string(),
            tokens: vec![realized],
            alternatives: vec![alts],
        }
    }

    fn respond(&self, messages: &[ChatMessage], params: &DecodeParams) -> Option<Completion> {
        let prompt = last_user(messages);
        let t = &self.templates;

        if prompt == t.get(TemplateId::ScVcFollowup).body() {
            let first = messages.iter().find(|m| m.role == Role::User)?;
            let answer = messages.iter().rev().find(|m| m.role == Role::Assistant)?;
            let q =
                self.question(&self.field(TemplateId::Answer, &first.content, "question")?)?;
            return (!q.refuse).then(|| self.yes_no(q.verbalized(&answer.content)));
        }
        if let Some(f) = t.get(TemplateId::PrefixCompletion).extract(prompt) {
            let q = self.question(&f["question"])?;
            let prefix = normalize(&f["prefix"]);
            let hit = q
                .ranked()
                .into_iter()
                .find(|&i| normalize(&q.answers[i]).starts_with(&prefix));
            let text = hit.map_or_else(|| f["prefix"].clone(), |i| q.answers[i].clone());
            return (!q.refuse).then(|| Completion::text_only(text));
        }
        if let Some(f) = t.get(TemplateId::KVc).extract(prompt) {
            let q = self.question(&f["question"])?;
            let k: usize = f["K"].trim().parse().ok()?;
            let body = q
                .ranked()
                .into_iter()
                .take(k)
                .enumerate()
                .map(|(j, i)| {
                    format!(
                        "G{}: {}\nP{}: {:.2}",
                        j + 1,
                        q.answers[i],
                        j + 1,
                        q.verbalized(&q.answers[i])
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            return (!q.refuse).then(|| Completion::text_only(body));
        }
        if let Some(f) = t.get(TemplateId::PTrue).extract(prompt) {
            let q = self.question(&f["question"])?;
            return (!q.refuse).then(|| self.yes_no(q.verbalized(&f["candidate_answer"])));
        }
        if let Some(f) = t.get(TemplateId::Numerical).extract(prompt) {
            let q = self.question(&f["question"])?;
            let pct = (q.verbalized(&f["candidate_answer"]) * 100.0).round() as i64;
            return (!q.refuse).then(|| Completion::text_only(format!("{pct}%")));
        }
        if let Some(f) = t.get(TemplateId::Answer).extract(prompt) {
            let q = self.question(&f["question"])?;
            return (!q.refuse).then(|| self.answer(q, params));
        }
        None
    }
}

impl Provider for SyntheticProvider {
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
        Ok(self
            .respond(messages, params)
            .unwrap_or_else(|| Completion::text_only("")))
    }

    fn beam_search(
        &self,
        messages: &[ChatMessage],
        beam_width: usize,
        _max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        let prompt = last_user(messages);
        let q = self
            .field(TemplateId::Answer, prompt, "question")
            .and_then(|text| self.question(&text))
            .filter(|q| !q.refuse)
            .ok_or(GatewayError::Refusal)?;
        Ok(q.ranked()
            .into_iter()
            .take(beam_width)
            .map(|i| BeamHypothesis {
                text: q.answers[i].clone(),
                sequence_logprob: q.latent[i].ln(),
            })
            .collect())
    }
}
