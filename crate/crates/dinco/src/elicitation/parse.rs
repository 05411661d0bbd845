//! Parsers from raw completions to probabilities.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ElicitationError;
use crate::gateway::{Completion, TokenLogprob};

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\d+(?:\.\d*)?|\.\d+)\s*(%)?").unwrap());
static GUESS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*G(\d+)\s*[:.]\s*(.*?)\s*$").unwrap());
static PROB: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*P(\d+)\s*[:.]\s*(.*?)\s*$").unwrap());

fn word(token: &str) -> String {
    token
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Index of the first generated position whose token is not pure
/// whitespace or punctuation.
fn decision_position(c: &Completion) -> Option<usize> {
    c.tokens.iter().position(|t| !word(&t.token).is_empty())
}

/// Candidate tokens at the decision position: the alternatives when
/// present, else the realized token alone.
fn decision_candidates(c: &Completion) -> Result<&[TokenLogprob], ElicitationError> {
    if !c.has_logprobs() {
        return Err(ElicitationError::MissingLogprobs);
    }
    let pos = decision_position(c).unwrap_or(0);
    Ok(match c.alternatives.get(pos) {
        Some(alts) if !alts.is_empty() => alts,
        _ => std::slice::from_ref(&c.tokens[pos]),
    })
}

/// `P(Yes) / (P(Yes) + P(No))` from the first decision position. Case and
/// surrounding whitespace are ignored and matching variants are summed.
pub fn p_true_from_completion(c: &Completion) -> Result<f64, ElicitationError> {
    let candidates = decision_candidates(c)?;
    let (mut yes, mut no, mut seen) = (0.0, 0.0, false);
    for t in candidates {
        match word(&t.token).as_str() {
            "yes" => {
                yes += t.prob();
                seen = true;
            }
            "no" => {
                no += t.prob();
                seen = true;
            }
            _ => {}
        }
    }
    if !seen {
        return Err(ElicitationError::NoYesNo);
    }
    if yes + no <= 0.0 {
        return Err(ElicitationError::ZeroYesNoMass);
    }
    Ok(yes / (yes + no))
}

/// First number in `text`. `N%` is a percentage; a bare number is a
/// probability when at most 1 and a percentage otherwise. Clamped to [0,1].
pub fn parse_numerical(text: &str) -> Result<f64, ElicitationError> {
    let caps = NUMBER
        .captures(text)
        .ok_or_else(|| ElicitationError::Unparseable {
            what: "percentage",
            output: text.to_string(),
        })?;
    let n: f64 = caps[1].parse().map_err(|_| ElicitationError::Unparseable {
        what: "percentage",
        output: text.to_string(),
    })?;
    let v = if caps.get(2).is_some() || n > 1.0 {
        n / 100.0
    } else {
        n
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Probability on a `P<i>:` line: percentages divide by 100, anything else
/// is taken as stated and clamped.
fn parse_kvc_prob(s: &str) -> Option<f64> {
    let caps = NUMBER.captures(s)?;
    let n: f64 = caps[1].parse().ok()?;
    let v = if caps.get(2).is_some() { n / 100.0 } else { n };
    Some(v.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KvcPair {
    pub guess: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KvcOutput {
    pub pairs: Vec<KvcPair>,
    pub warnings: Vec<String>,
}

/// Lenient `G<i>: ... / P<i>: ...` parser. Pairs come back in index order;
/// an index with a missing or unparseable half is skipped with a warning.
pub fn parse_kvc(text: &str, k: usize) -> Result<KvcOutput, ElicitationError> {
    let mut guesses: BTreeMap<usize, String> = BTreeMap::new();
    let mut probs: BTreeMap<usize, String> = BTreeMap::new();
    for line in text.lines() {
        if let Some(c) = GUESS.captures(line) {
            if let Ok(i) = c[1].parse() {
                guesses.entry(i).or_insert_with(|| c[2].to_string());
            }
        } else if let Some(c) = PROB.captures(line) {
            if let Ok(i) = c[1].parse() {
                probs.entry(i).or_insert_with(|| c[2].to_string());
            }
        }
    }
    let mut out = KvcOutput::default();
    let indices: std::collections::BTreeSet<usize> =
        guesses.keys().chain(probs.keys()).copied().collect();
    for i in indices {
        if i == 0 || i > k {
            out.warnings
                .push(format!("ignored index {i} outside 1..={k}"));
            continue;
        }
        match (guesses.get(&i), probs.get(&i)) {
            (Some(g), Some(p)) if !g.is_empty() => match parse_kvc_prob(p) {
                Some(confidence) => out.pairs.push(KvcPair {
                    guess: g.clone(),
                    confidence,
                }),
                None => out.warnings.push(format!("unparseable P{i}: {p:?}")),
            },
            (Some(g), Some(_)) if g.is_empty() => out.warnings.push(format!("empty G{i}")),
            (Some(_), _) => out.warnings.push(format!("missing P{i}")),
            (None, _) => out.warnings.push(format!("missing G{i}")),
        }
    }
    if out.pairs.is_empty() {
        return Err(ElicitationError::Unparseable {
            what: "guess/probability pair",
            output: text.to_string(),
        });
    }
    Ok(out)
}

/// Probability of generating the answer: exp of the summed token logprobs.
pub fn msp(c: &Completion) -> Result<f64, ElicitationError> {
    if !c.has_logprobs() {
        return Err(ElicitationError::MissingLogprobs);
    }
    Ok(c.sequence_logprob().exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportLabel {
    Support,
    Refute,
    NoMention,
}

impl SupportLabel {
    /// Label whose name begins with `token` (at least two letters), or whose
    /// name `token` begins with.
    fn from_token(token: &str) -> Option<Self> {
        let w = word(token);
        if w.len() < 2 {
            return None;
        }
        let matches = |name: &str| name.starts_with(&w) || w.starts_with(name);
        if matches("support") {
            Some(SupportLabel::Support)
        } else if matches("refute") {
            Some(SupportLabel::Refute)
        } else if matches("no") || w.starts_with("no mention") {
            Some(SupportLabel::NoMention)
        } else {
            None
        }
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let t = text.trim().to_lowercase();
        if t.starts_with("support") {
            Some(SupportLabel::Support)
        } else if t.starts_with("refute") {
            Some(SupportLabel::Refute)
        } else if t.starts_with("no mention") || t.starts_with("no") {
            Some(SupportLabel::NoMention)
        } else {
            None
        }
    }
}

/// `P(Support) / (P(Support) + P(Refute) + P(No Mention))` from label-token
/// probabilities when available; otherwise 1 for a decoded Support label
/// and 0 for Refute or No Mention.
pub fn support_score_from_completion(c: &Completion) -> Result<f64, ElicitationError> {
    if c.has_logprobs() {
        let candidates = decision_candidates(c)?;
        let mut mass = [0.0f64; 3];
        for t in candidates {
            match SupportLabel::from_token(&t.token) {
                Some(SupportLabel::Support) => mass[0] += t.prob(),
                Some(SupportLabel::Refute) => mass[1] += t.prob(),
                Some(SupportLabel::NoMention) => mass[2] += t.prob(),
                None => {}
            }
        }
        let total: f64 = mass.iter().sum();
        if total > 0.0 {
            return Ok(mass[0] / total);
        }
    }
    match SupportLabel::from_text(&c.text) {
        Some(SupportLabel::Support) => Ok(1.0),
        Some(_) => Ok(0.0),
        None => Err(ElicitationError::Unparseable {
            what: "Support/Refute/No Mention label",
            output: c.text.clone(),
        }),
    }
}
