//! Answer generation and confidence elicitation.
//!
//! [`Elicitor`] renders the prompt templates and issues calls through a
//! counting [`Session`]. The parsers that turn raw model output into
//! probabilities are free functions so they can be tested on their own.

mod parse;
pub mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallPurpose, ChatMessage, Completion, DecodeParams, GatewayError, Session};
pub use parse::{
    msp, p_true_from_completion, parse_kvc, parse_numerical, support_score_from_completion,
    KvcOutput, KvcPair, SupportLabel,
};
use templates::{TemplateError, TemplateId, TemplateSet};

#[derive(Debug, Error)]
pub enum ElicitationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("model produced an empty answer")]
    EmptyAnswer,
    #[error("completion carries no token logprobs")]
    MissingLogprobs,
    #[error("neither Yes nor No among the first-position alternatives")]
    NoYesNo,
    #[error("Yes and No have zero total probability")]
    ZeroYesNoMass,
    #[error("no parseable {what} in output {output:?}")]
    Unparseable { what: &'static str, output: String },
    #[error("K must be at least 1")]
    InvalidK,
}

impl ElicitationError {
    pub fn is_refusal(&self) -> bool {
        matches!(self, ElicitationError::Gateway(GatewayError::Refusal))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    PTrue,
    Numerical,
    KVc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbalizedConfidence {
    pub value: f64,
    pub source: ConfidenceSource,
}

impl VerbalizedConfidence {
    pub fn new(value: f64, source: ConfidenceSource) -> Self {
        VerbalizedConfidence {
            value: value.clamp(0.0, 1.0),
            source,
        }
    }
}

/// Decoding settings for every call the elicitor makes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    /// Main-answer temperature; greedy by default.
    pub answer_temperature: f64,
    pub answer_max_tokens: u32,
    /// Top alternatives requested with the main answer when the provider
    /// exposes them; feeds pseudo-beam search.
    pub answer_top_alternatives: u32,
    pub sample_temperature: f64,
    pub validation_max_tokens: u32,
    pub p_true_top_alternatives: u32,
    pub kvc_max_tokens: u32,
    pub biography_max_tokens: u32,
    pub distractor_max_tokens: u32,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            answer_temperature: 0.0,
            answer_max_tokens: 32,
            answer_top_alternatives: 5,
            sample_temperature: 1.0,
            validation_max_tokens: 8,
            p_true_top_alternatives: 20,
            kvc_max_tokens: 512,
            biography_max_tokens: 512,
            distractor_max_tokens: 64,
        }
    }
}

pub struct Elicitor<'a, 'g> {
    session: &'a Session<'g>,
    templates: &'a TemplateSet,
    decoding: &'a DecodingConfig,
}

impl<'a, 'g> Elicitor<'a, 'g> {
    pub fn new(
        session: &'a Session<'g>,
        templates: &'a TemplateSet,
        decoding: &'a DecodingConfig,
    ) -> Self {
        Elicitor {
            session,
            templates,
            decoding,
        }
    }

    pub fn session(&self) -> &'a Session<'g> {
        self.session
    }

    pub fn templates(&self) -> &'a TemplateSet {
        self.templates
    }

    pub fn decoding(&self) -> &'a DecodingConfig {
        self.decoding
    }

    fn answer_params(&self) -> DecodeParams {
        let caps = self.session.capabilities();
        let mut p = DecodeParams::greedy(self.decoding.answer_max_tokens);
        p.temperature = self.decoding.answer_temperature;
        if caps.has_top_alternatives {
            p.num_top_alternatives = self.decoding.answer_top_alternatives;
        }
        p
    }

    fn validation_params(&self, with_alternatives: bool) -> DecodeParams {
        let mut p = DecodeParams::greedy(self.decoding.validation_max_tokens);
        if with_alternatives && self.session.capabilities().has_top_alternatives {
            p.num_top_alternatives = self.decoding.p_true_top_alternatives;
        }
        p
    }

    pub fn answer_prompt(&self, question: &str) -> Result<String, ElicitationError> {
        Ok(self
            .templates
            .render(TemplateId::Answer, &[("question", question)])?)
    }

    /// Main answer plus the completion it came from (kept for MSP and
    /// pseudo-beam search).
    pub fn generate_answer(
        &self,
        question: &str,
    ) -> Result<(String, Completion), ElicitationError> {
        let prompt = self.answer_prompt(question)?;
        let completion =
            self.session
                .complete(CallPurpose::Generation, &prompt, &self.answer_params())?;
        let answer = completion.text.trim().to_string();
        if answer.is_empty() {
            return Err(ElicitationError::EmptyAnswer);
        }
        Ok((answer, completion))
    }

    /// One temperature-sampled answer; `seed` distinguishes repeated draws.
    pub fn sample_answer(&self, question: &str, seed: u64) -> Result<String, ElicitationError> {
        let prompt = self.answer_prompt(question)?;
        let params = DecodeParams::sampled(
            self.decoding.sample_temperature,
            self.decoding.answer_max_tokens,
            seed,
        );
        let c = self
            .session
            .complete(CallPurpose::Generation, &prompt, &params)?;
        Ok(c.text.trim().to_string())
    }

    fn yes_no(&self, messages: &[ChatMessage]) -> Result<VerbalizedConfidence, ElicitationError> {
        if !self.session.capabilities().has_logprobs {
            return Err(ElicitationError::MissingLogprobs);
        }
        let c = self.session.chat(
            CallPurpose::Validation,
            messages,
            &self.validation_params(true),
        )?;
        Ok(VerbalizedConfidence::new(
            p_true_from_completion(&c)?,
            ConfidenceSource::PTrue,
        ))
    }

    /// `P(Yes) / (P(Yes) + P(No))` for "is this answer correct?".
    pub fn p_true(
        &self,
        question: &str,
        candidate: &str,
    ) -> Result<VerbalizedConfidence, ElicitationError> {
        let prompt = self.templates.render(
            TemplateId::PTrue,
            &[("question", question), ("candidate_answer", candidate)],
        )?;
        self.yes_no(&[ChatMessage::user(prompt)])
    }

    /// P(True) on a long-form claim about `entity`.
    pub fn p_true_claim(
        &self,
        entity: &str,
        claim: &str,
    ) -> Result<VerbalizedConfidence, ElicitationError> {
        let prompt = self.templates.render(
            TemplateId::BiographyPTrue,
            &[("entity", entity), ("claim", claim)],
        )?;
        self.yes_no(&[ChatMessage::user(prompt)])
    }

    /// P(True) from the follow-up turn after the model gave `answer`.
    pub fn p_true_followup(
        &self,
        question: &str,
        answer: &str,
    ) -> Result<VerbalizedConfidence, ElicitationError> {
        let messages = [
            ChatMessage::user(self.answer_prompt(question)?),
            ChatMessage::assistant(answer),
            ChatMessage::user(self.templates.get(TemplateId::ScVcFollowup).render(&[])?),
        ];
        self.yes_no(&messages)
    }

    /// Stated percentage. With `topic` set, `question_or_claim` is a
    /// long-form claim about the topic; otherwise it is a question and
    /// `candidate` the answer under judgment.
    pub fn numerical_confidence(
        &self,
        question_or_claim: &str,
        candidate: Option<&str>,
        topic: Option<&str>,
    ) -> Result<VerbalizedConfidence, ElicitationError> {
        let prompt = match topic {
            Some(entity) => self.templates.render(
                TemplateId::BiographyNumerical,
                &[("entity", entity), ("claim", question_or_claim)],
            )?,
            None => self.templates.render(
                TemplateId::Numerical,
                &[
                    ("question", question_or_claim),
                    ("candidate_answer", candidate.unwrap_or_default()),
                ],
            )?,
        };
        let c = self.session.complete(
            CallPurpose::Validation,
            &prompt,
            &self.validation_params(false),
        )?;
        Ok(VerbalizedConfidence::new(
            parse_numerical(&c.text)?,
            ConfidenceSource::Numerical,
        ))
    }

    /// Top-K guesses with verbalized probabilities, from one generation.
    pub fn k_vc(&self, question: &str, k: usize) -> Result<KvcOutput, ElicitationError> {
        if k == 0 {
            return Err(ElicitationError::InvalidK);
        }
        let k_text = k.to_string();
        let prompt = self
            .templates
            .render(TemplateId::KVc, &[("K", &k_text), ("question", question)])?;
        let c = self.session.complete(
            CallPurpose::Generation,
            &prompt,
            &DecodeParams::greedy(self.decoding.kvc_max_tokens),
        )?;
        parse_kvc(&c.text, k)
    }

    pub fn biography_prompt(&self, entity: &str) -> Result<String, ElicitationError> {
        Ok(self
            .templates
            .render(TemplateId::Biography, &[("entity", entity)])?)
    }

    /// Main biography (greedy) or a sampled one when `seed` is given.
    pub fn generate_biography(
        &self,
        entity: &str,
        seed: Option<u64>,
    ) -> Result<String, ElicitationError> {
        let prompt = self.biography_prompt(entity)?;
        let params = match seed {
            Some(s) => DecodeParams::sampled(
                self.decoding.sample_temperature,
                self.decoding.biography_max_tokens,
                s,
            ),
            None => {
                let mut p = DecodeParams::greedy(self.decoding.biography_max_tokens);
                p.temperature = self.decoding.answer_temperature;
                p
            }
        };
        let c = self
            .session
            .complete(CallPurpose::Generation, &prompt, &params)?;
        let text = c.text.trim().to_string();
        if text.is_empty() {
            return Err(ElicitationError::EmptyAnswer);
        }
        Ok(text)
    }

    /// Degree to which `passage` supports `claim`, judged by the model.
    pub fn support_score(&self, passage: &str, claim: &str) -> Result<f64, ElicitationError> {
        let prompt = self.templates.render(
            TemplateId::BiographyEntailment,
            &[("sampled_biography", passage), ("claim", claim)],
        )?;
        let c = self.session.complete(
            CallPurpose::Validation,
            &prompt,
            &self.validation_params(true),
        )?;
        support_score_from_completion(&c)
    }
}
