//! Distractor sets: alternative claims the model might also endorse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::templates::TemplateId;
use crate::elicitation::{ElicitationError, Elicitor};
use crate::gateway::{CallPurpose, Completion, DecodeParams, GatewayError};
use crate::text::normalize;

#[derive(Debug, Error)]
pub enum DistractorError {
    #[error(transparent)]
    Elicitation(#[from] ElicitationError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("main completion has no alternative tokens to branch on")]
    NoAlternatives,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorSource {
    Beam,
    PseudoBeam,
    BlackBoxList,
    LongformMinimalPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub text: String,
    pub generation_logprob: Option<f64>,
    pub source: DistractorSource,
}

/// A main claim and at most `capacity` distinct alternatives to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub main: String,
    pub distractors: Vec<Distractor>,
    pub capacity: usize,
    /// Dropped candidates and failed completions, for the run record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl DistractorSet {
    pub fn new(main: impl Into<String>, capacity: usize) -> Self {
        DistractorSet {
            main: main.into(),
            distractors: Vec::new(),
            capacity,
            notes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.distractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distractors.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.distractors.len() >= self.capacity
    }

    pub fn texts(&self) -> Vec<&str> {
        self.distractors.iter().map(|d| d.text.as_str()).collect()
    }

    /// Adds `d` unless it is blank, restates the main claim, duplicates an
    /// existing member or the set is full. Returns whether it was added.
    pub fn try_push(&mut self, d: Distractor) -> bool {
        let key = normalize(&d.text);
        if key.is_empty() || self.is_full() || key == normalize(&self.main) {
            return false;
        }
        if self.distractors.iter().any(|x| normalize(&x.text) == key) {
            return false;
        }
        self.distractors.push(d);
        true
    }
}

/// Beam search of width K+1 on the answer prompt; the main answer is
/// removed and the best K others kept.
pub fn beam_distractors(
    elicitor: &Elicitor,
    question: &str,
    main: &str,
    k: usize,
) -> Result<DistractorSet, DistractorError> {
    let prompt = elicitor.answer_prompt(question)?;
    let beams =
        elicitor
            .session()
            .beam_search(&prompt, k + 1, elicitor.decoding().answer_max_tokens)?;
    let mut set = DistractorSet::new(main, k);
    for b in beams {
        set.try_push(Distractor {
            text: b.text.trim().to_string(),
            generation_logprob: Some(b.sequence_logprob),
            source: DistractorSource::Beam,
        });
    }
    Ok(set)
}

/// A branch off the main answer: its tokens up to some position followed by
/// a different top token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixCandidate {
    pub prefix: String,
    pub logprob: f64,
    pub position: usize,
}

/// All branch prefixes ranked by chain-rule probability. The prefix text is
/// the raw concatenation of tokens, so "Par" + "ma" gives "Parma".
pub fn pseudo_beam_candidates(main: &Completion) -> Result<Vec<PrefixCandidate>, DistractorError> {
    let mut out = Vec::new();
    let mut head = String::new();
    let mut head_lp = 0.0;
    for (i, realized) in main.tokens.iter().enumerate() {
        for alt in main
            .alternatives
            .get(i)
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            if alt.token != realized.token {
                out.push(PrefixCandidate {
                    prefix: format!("{head}{}", alt.token),
                    logprob: head_lp + alt.logprob,
                    position: i,
                });
            }
        }
        head.push_str(&realized.token);
        head_lp += realized.logprob;
    }
    if out.is_empty() {
        return Err(DistractorError::NoAlternatives);
    }
    // stable: equal probabilities keep position and alternative order
    out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    Ok(out)
}

/// Approximate beam search from the main answer's top alternatives: the K
/// most probable branch prefixes are each completed into an answer by the
/// model.
pub fn pseudo_beam_distractors(
    elicitor: &Elicitor,
    question: &str,
    main: &str,
    main_completion: &Completion,
    k: usize,
) -> Result<DistractorSet, DistractorError> {
    let candidates = pseudo_beam_candidates(main_completion)?;
    let params = DecodeParams::greedy(elicitor.decoding().distractor_max_tokens);
    let mut set = DistractorSet::new(main, k);
    for cand in candidates.into_iter().take(k) {
        let prefix = cand.prefix.trim();
        let prompt = elicitor
            .templates()
            .render(
                TemplateId::PrefixCompletion,
                &[("question", question), ("prefix", prefix)],
            )
            .map_err(ElicitationError::from)?;
        match elicitor
            .session()
            .complete(CallPurpose::Generation, &prompt, &params)
        {
            Ok(c) => {
                let text = c.text.trim().to_string();
                if !set.try_push(Distractor {
                    text: text.clone(),
                    generation_logprob: Some(cand.logprob),
                    source: DistractorSource::PseudoBeam,
                }) {
                    set.notes
                        .push(format!("prefix {prefix:?} completed to duplicate {text:?}"));
                }
            }
            Err(e) => set.notes.push(format!("prefix {prefix:?} failed: {e}")),
        }
    }
    Ok(set)
}

/// Guesses from one K-VC generation asking for K+1 answers, minus the main
/// answer. The stated confidences are discarded.
pub fn black_box_distractors(
    elicitor: &Elicitor,
    question: &str,
    main: &str,
    k: usize,
) -> Result<DistractorSet, DistractorError> {
    let out = elicitor.k_vc(question, k + 1)?;
    let mut set = DistractorSet::new(main, k);
    set.notes.extend(out.warnings);
    for pair in out.pairs {
        set.try_push(Distractor {
            text: pair.guess.trim().to_string(),
            generation_logprob: None,
            source: DistractorSource::BlackBoxList,
        });
    }
    Ok(set)
}

/// Minimal-pair alternatives to a long-form claim: beam search of width K
/// over the distractor prompt, or K seeded samples when the provider has no
/// beam search.
pub fn longform_distractors(
    elicitor: &Elicitor,
    entity: &str,
    claim: &str,
    k: usize,
    seed: u64,
) -> Result<DistractorSet, DistractorError> {
    let prompt = elicitor
        .templates()
        .render(
            TemplateId::BiographyDistractor,
            &[("entity", entity), ("claim", claim)],
        )
        .map_err(ElicitationError::from)?;
    let max_tokens = elicitor.decoding().distractor_max_tokens;
    let session = elicitor.session();
    let mut set = DistractorSet::new(claim, k);
    if k == 0 {
        return Ok(set);
    }
    if session.capabilities().has_beam_search {
        for b in session.beam_search(&prompt, k, max_tokens)? {
            set.try_push(Distractor {
                text: first_line(&b.text),
                generation_logprob: Some(b.sequence_logprob),
                source: DistractorSource::LongformMinimalPair,
            });
        }
    } else {
        for i in 0..k {
            let params = DecodeParams::sampled(1.0, max_tokens, crate::seed::mix(seed, i as u64));
            match session.complete(CallPurpose::Generation, &prompt, &params) {
                Ok(c) => {
                    let text = first_line(&c.text);
                    let logprob = c.has_logprobs().then(|| c.sequence_logprob());
                    set.try_push(Distractor {
                        text,
                        generation_logprob: logprob,
                        source: DistractorSource::LongformMinimalPair,
                    });
                }
                Err(e) => set.notes.push(format!("sample {i} failed: {e}")),
            }
        }
    }
    if set.is_empty() {
        set.notes.push("every generation restated the claim".into());
    }
    Ok(set)
}

fn first_line(text: &str) -> String {
    text.trim()
        .lines()
        .next()
        .unwrap_or_default()
        .trim()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::templates::TemplateSet;
    use crate::elicitation::DecodingConfig;
    use crate::gateway::mock::{last_user, MockProvider};
    use crate::gateway::{BeamHypothesis, Gateway, ProviderCapabilities, Session, TokenLogprob};
    use std::sync::Arc;

    fn tok(t: &str, p: f64) -> TokenLogprob {
        TokenLogprob::new(t, p.ln())
    }

    fn paris() -> Completion {
        Completion::from_tokens(
            vec![tok("Par", 0.7), tok("is", 0.5)],
            vec![
                vec![tok("Par", 0.7), tok("Lon", 0.2)],
                vec![tok("is", 0.5), tok("ma", 0.1)],
            ],
        )
    }

    #[test]
    fn pseudo_beam_ranks_by_chain_rule() {
        let c = pseudo_beam_candidates(&paris()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].prefix, "Lon");
        assert!((c[0].logprob.exp() - 0.2).abs() < 1e-12);
        assert_eq!(c[1].prefix, "Parma");
        assert!((c[1].logprob.exp() - 0.07).abs() < 1e-12);
    }

    #[test]
    fn pseudo_beam_needs_alternatives() {
        let only_realized =
            Completion::from_tokens(vec![tok("Par", 0.7)], vec![vec![tok("Par", 0.7)]]);
        assert!(matches!(
            pseudo_beam_candidates(&only_realized),
            Err(DistractorError::NoAlternatives)
        ));
    }

    #[test]
    fn set_rejects_main_duplicates_and_overflow() {
        let d = |t: &str| Distractor {
            text: t.into(),
            generation_logprob: None,
            source: DistractorSource::Beam,
        };
        let mut s = DistractorSet::new("Paris", 2);
        assert!(!s.try_push(d(" paris.")));
        assert!(s.try_push(d("Lyon")));
        assert!(!s.try_push(d("LYON")));
        assert!(!s.try_push(d("")));
        assert!(s.try_push(d("Nice")));
        assert!(!s.try_push(d("Metz")));
        assert_eq!(s.texts(), ["Lyon", "Nice"]);
    }

    fn run<F>(caps: ProviderCapabilities, respond: F, f: impl FnOnce(&Elicitor, &Session))
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        let provider = MockProvider::from_fn("mock", caps, move |m, _| {
            Ok(Completion::text_only(respond(last_user(m))))
        })
        .with_beam(|_, width, _| {
            let all = [
                ("Paris", -0.1),
                ("Lyon", -1.0),
                ("paris", -1.5),
                ("Nice", -2.0),
            ];
            Ok(all
                .iter()
                .take(width)
                .map(|(t, lp)| BeamHypothesis {
                    text: t.to_string(),
                    sequence_logprob: *lp,
                })
                .collect())
        });
        let gateway = Gateway::new(Arc::new(provider));
        let session = Session::new(&gateway);
        let templates = TemplateSet::default();
        let decoding = DecodingConfig::default();
        let e = Elicitor::new(&session, &templates, &decoding);
        f(&e, &session);
    }

    #[test]
    fn beam_removes_main() {
        run(
            ProviderCapabilities::FULL,
            |_| "x".into(),
            |e, s| {
                let set = beam_distractors(e, "q", "Paris", 2).unwrap();
                assert_eq!(set.texts(), ["Lyon"]);
                assert_eq!(s.tally().generation, 1);
            },
        );
    }

    #[test]
    fn pseudo_beam_dedups_completions() {
        run(
            ProviderCapabilities::TOP_TOKENS,
            |_| "London".into(),
            |e, s| {
                let set = pseudo_beam_distractors(e, "q", "Paris", &paris(), 5).unwrap();
                assert_eq!(set.texts(), ["London"]);
                assert_eq!(set.notes.len(), 1);
                assert_eq!(s.tally().generation, 2);
            },
        );
    }

    #[test]
    fn black_box_drops_main_and_duplicates_without_padding() {
        run(
            ProviderCapabilities::BLACK_BOX,
            |_| {
                "G1: Paris\nP1: 0.5\nG2: Lyon\nP2: 0.2\nG3: lyon\nP3: 0.1\nG4: Nice\nP4: 0.1".into()
            },
            |e, _| {
                let set = black_box_distractors(e, "q", "Paris", 3).unwrap();
                assert_eq!(set.texts(), ["Lyon", "Nice"]);
                assert!(set
                    .distractors
                    .iter()
                    .all(|d| d.generation_logprob.is_none()));
            },
        );
    }

    #[test]
    fn longform_sampling_fallback() {
        run(
            ProviderCapabilities::BLACK_BOX,
            |_| "Obama was born in Kenya.\nextra".into(),
            |e, s| {
                let set =
                    longform_distractors(e, "Obama", "Obama was born in Hawaii.", 3, 7).unwrap();
                assert_eq!(set.texts(), ["Obama was born in Kenya."]);
                assert_eq!(s.tally().generation, 3);
            },
        );
    }
}
