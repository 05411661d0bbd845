//! NLI weighting, distractor normalization and self-consistency.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::{ElicitationError, Elicitor};
use crate::gateway::{GatewayError, Session};

/// Bidirectional mean entailment above which two answers count as equal.
pub const SEMANTIC_EQUAL_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum CoherenceError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Elicitation(#[from] ElicitationError),
    #[error("entailment mass toward {0:?} is zero")]
    ZeroUniquenessMass(String),
    #[error("every verbalized confidence is zero")]
    ZeroConfidenceMass,
    #[error("{what}: expected {expected} values, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedDistractor {
    pub text: String,
    pub f_vc: f64,
    pub w_unique: f64,
    pub w_contra: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvcResult {
    pub f_vc_main: f64,
    /// Total weighted confidence before flooring at 1.
    pub total: f64,
    pub beta: f64,
    pub f_nvc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub match_count: usize,
    pub sample_count: usize,
}

impl ConsistencyResult {
    pub fn f_sc(&self) -> f64 {
        (1 + self.match_count) as f64 / (1 + self.sample_count) as f64
    }
}

/// `1 / Σ_{c'∈C} P(entail | c', c)` for every member `c` of `claims`, self
/// included. Scores all |C|² ordered pairs.
pub fn uniqueness_weights(
    session: &Session,
    claims: &[String],
    context: Option<&str>,
) -> Result<Vec<f64>, CoherenceError> {
    (0..claims.len())
        .map(|i| w_unique(session, i, claims, context))
        .collect()
}

/// Uniqueness weight of `claims[index]` within `claims`.
pub fn w_unique(
    session: &Session,
    index: usize,
    claims: &[String],
    context: Option<&str>,
) -> Result<f64, CoherenceError> {
    let c = &claims[index];
    let mut mass = 0.0;
    for other in claims {
        mass += session.nli(other, c, context)?.entail;
    }
    if mass <= 0.0 {
        return Err(CoherenceError::ZeroUniquenessMass(c.clone()));
    }
    Ok(1.0 / mass)
}

/// Mean of the two directed contradiction probabilities between the main
/// claim and `c`.
pub fn w_contra(
    session: &Session,
    main: &str,
    c: &str,
    context: Option<&str>,
) -> Result<f64, CoherenceError> {
    let forward = session.nli(main, c, context)?.contradict;
    let backward = session.nli(c, main, context)?.contradict;
    Ok((forward + backward) / 2.0)
}

/// Attaches NLI weights to distractors with known confidences. With
/// `ablate_nli` both weights are 1 and no NLI calls are made.
pub fn weigh_distractors(
    session: &Session,
    main: &str,
    distractors: &[String],
    f_vcs: &[f64],
    context: Option<&str>,
    ablate_nli: bool,
) -> Result<Vec<WeightedDistractor>, CoherenceError> {
    if f_vcs.len() != distractors.len() {
        return Err(CoherenceError::LengthMismatch {
            what: "distractor confidences",
            expected: distractors.len(),
            got: f_vcs.len(),
        });
    }
    let (uniq, contra) = if ablate_nli {
        (vec![1.0; distractors.len()], vec![1.0; distractors.len()])
    } else {
        let uniq = uniqueness_weights(session, distractors, context)?;
        let contra = distractors
            .iter()
            .map(|c| w_contra(session, main, c, context))
            .collect::<Result<Vec<_>, _>>()?;
        (uniq, contra)
    };
    Ok(distractors
        .iter()
        .zip(f_vcs)
        .zip(uniq.into_iter().zip(contra))
        .map(|((text, &f_vc), (w_unique, w_contra))| WeightedDistractor {
            text: text.clone(),
            f_vc,
            w_unique,
            w_contra,
        })
        .collect())
}

/// `β = max(1, f(c0) + Σ f(c)·w_unique(c)·w_contra(c))`, `f_nvc = f(c0)/β`.
pub fn nvc(f_vc_main: f64, weighted: &[WeightedDistractor]) -> NvcResult {
    let total = f_vc_main
        + weighted
            .iter()
            .map(|d| d.f_vc * d.w_unique * d.w_contra)
            .sum::<f64>();
    let beta = total.max(1.0);
    NvcResult {
        f_vc_main,
        total,
        beta,
        f_nvc: f_vc_main / beta,
    }
}

/// `½ P(entail | a, b) + ½ P(entail | b, a)` with the question as context.
pub fn mutual_entailment(
    session: &Session,
    a: &str,
    b: &str,
    question: &str,
) -> Result<f64, CoherenceError> {
    let ab = session.nli(a, b, Some(question))?.entail;
    let ba = session.nli(b, a, Some(question))?.entail;
    Ok(0.5 * ab + 0.5 * ba)
}

pub fn semantic_equal(
    session: &Session,
    a: &str,
    b: &str,
    question: &str,
) -> Result<bool, CoherenceError> {
    Ok(mutual_entailment(session, a, b, question)? > SEMANTIC_EQUAL_THRESHOLD)
}

/// Which of `samples` are semantically equal to `main`. Repeated sample
/// strings are scored once.
pub fn match_samples(
    session: &Session,
    main: &str,
    samples: &[String],
    question: &str,
) -> Result<Vec<bool>, CoherenceError> {
    let mut memo: HashMap<&str, bool> = HashMap::new();
    samples
        .iter()
        .map(|s| {
            if let Some(&m) = memo.get(s.as_str()) {
                return Ok(m);
            }
            let m = semantic_equal(session, main, s, question)?;
            memo.insert(s, m);
            Ok(m)
        })
        .collect()
}

/// `(1 + #matches) / (K + 1)`: the main answer always matches itself.
pub fn self_consistency_short(
    session: &Session,
    main: &str,
    samples: &[String],
    question: &str,
) -> Result<ConsistencyResult, CoherenceError> {
    let matches = match_samples(session, main, samples, question)?;
    Ok(ConsistencyResult {
        match_count: matches.iter().filter(|&&m| m).count(),
        sample_count: samples.len(),
    })
}

/// Mean support of `claim` over `responses` (the main response first, then
/// the samples).
pub fn self_consistency_long(
    elicitor: &Elicitor,
    claim: &str,
    responses: &[String],
) -> Result<f64, CoherenceError> {
    let scores = responses
        .iter()
        .map(|r| elicitor.support_score(r, claim))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_support(&scores))
}

pub fn mean_support(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Equal-weight combination of self-consistency and normalized confidence.
pub fn dinco(f_sc: f64, f_nvc: f64) -> f64 {
    0.5 * f_sc + 0.5 * f_nvc
}

/// Confidence mass on answers matching the main answer over the mass on all
/// answers, the main answer counted in both.
pub fn sc_vc_from_matches(
    main_vc: f64,
    sample_vcs: &[f64],
    matches: &[bool],
) -> Result<f64, CoherenceError> {
    if sample_vcs.len() != matches.len() {
        return Err(CoherenceError::LengthMismatch {
            what: "sample confidences",
            expected: matches.len(),
            got: sample_vcs.len(),
        });
    }
    let total = main_vc + sample_vcs.iter().sum::<f64>();
    if total <= 0.0 {
        return Err(CoherenceError::ZeroConfidenceMass);
    }
    let matched = main_vc
        + sample_vcs
            .iter()
            .zip(matches)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum::<f64>();
    Ok(matched / total)
}

pub fn sc_vc(
    session: &Session,
    main: &str,
    main_vc: f64,
    samples: &[String],
    sample_vcs: &[f64],
    question: &str,
) -> Result<f64, CoherenceError> {
    let matches = match_samples(session, main, samples, question)?;
    sc_vc_from_matches(main_vc, sample_vcs, &matches)
}
