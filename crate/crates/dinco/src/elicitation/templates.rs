//! Prompt templates with `{placeholder}` fields.
//!
//! The built-in bodies are the default prompts for every elicitation and
//! generation step. A directory of `<name>.txt` files can override any of
//! them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template}: placeholder {{{placeholder}}} left unfilled")]
    Unfilled {
        template: String,
        placeholder: String,
    },
    #[error("no built-in template named {0:?}")]
    UnknownTemplate(String),
    #[error("template {template}: {message}")]
    Malformed { template: String, message: String },
    #[error("reading template overrides: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Few-shot short answer; also drives beam search and SC sampling.
    Answer,
    PTrue,
    Numerical,
    KVc,
    /// Second user turn after the main answer, for SC-VC.
    ScVcFollowup,
    Biography,
    BiographyDistractor,
    BiographyPTrue,
    BiographyNumerical,
    BiographyEntailment,
    PrefixCompletion,
}

impl TemplateId {
    pub const ALL: [TemplateId; 11] = [
        TemplateId::Answer,
        TemplateId::PTrue,
        TemplateId::Numerical,
        TemplateId::KVc,
        TemplateId::ScVcFollowup,
        TemplateId::Biography,
        TemplateId::BiographyDistractor,
        TemplateId::BiographyPTrue,
        TemplateId::BiographyNumerical,
        TemplateId::BiographyEntailment,
        TemplateId::PrefixCompletion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Answer => "answer",
            TemplateId::PTrue => "p_true",
            TemplateId::Numerical => "numerical",
            TemplateId::KVc => "k_vc",
            TemplateId::ScVcFollowup => "sc_vc_followup",
            TemplateId::Biography => "biography",
            TemplateId::BiographyDistractor => "biography_distractor",
            TemplateId::BiographyPTrue => "biography_p_true",
            TemplateId::BiographyNumerical => "biography_numerical",
            TemplateId::BiographyEntailment => "biography_entailment",
            TemplateId::PrefixCompletion => "prefix_completion",
        }
    }

    pub fn parse(name: &str) -> Option<TemplateId> {
        Self::ALL.into_iter().find(|t| t.as_str() == name)
    }

    pub fn default_body(self) -> &'static str {
        match self {
            TemplateId::Answer => ANSWER,
            TemplateId::PTrue => P_TRUE,
            TemplateId::Numerical => NUMERICAL,
            TemplateId::KVc => K_VC,
            TemplateId::ScVcFollowup => SC_VC_FOLLOWUP,
            TemplateId::Biography => BIOGRAPHY,
            TemplateId::BiographyDistractor => BIOGRAPHY_DISTRACTOR,
            TemplateId::BiographyPTrue => BIOGRAPHY_P_TRUE,
            TemplateId::BiographyNumerical => BIOGRAPHY_NUMERICAL,
            TemplateId::BiographyEntailment => BIOGRAPHY_ENTAILMENT,
            TemplateId::PrefixCompletion => PREFIX_COMPLETION,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Field(String),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_segments(body: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                lit.push_str(&rest[..open]);
                if !lit.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut lit)));
                }
                out.push(Segment::Field(after[..close].to_string()));
                rest = &after[close + 1..];
            }
            _ => {
                lit.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        out.push(Segment::Literal(lit));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        PromptTemplate {
            name: name.into(),
            segments: parse_segments(&body),
            body,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Distinct placeholder names, in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for s in &self.segments {
            if let Segment::Field(f) = s {
                if !seen.contains(&f.as_str()) {
                    seen.push(f.as_str());
                }
            }
        }
        seen
    }

    /// Fills every placeholder. Extra variables are ignored; a missing one
    /// is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(l),
                Segment::Field(f) => {
                    let v = vars.iter().find(|(k, _)| k == f).ok_or_else(|| {
                        TemplateError::Unfilled {
                            template: self.name.clone(),
                            placeholder: f.clone(),
                        }
                    })?;
                    out.push_str(v.1);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`render`](Self::render): recovers field values from a
    /// rendered prompt, or `None` if `text` does not fit the template. Each
    /// field extends to the first occurrence of the following literal.
    pub fn extract(&self, text: &str) -> Option<BTreeMap<String, String>> {
        let mut fields = BTreeMap::new();
        let mut rest = text;
        let mut i = 0;
        while i < self.segments.len() {
            match &self.segments[i] {
                Segment::Literal(l) => {
                    rest = rest.strip_prefix(l.as_str())?;
                    i += 1;
                }
                Segment::Field(f) => {
                    let value = match self.segments.get(i + 1) {
                        Some(Segment::Literal(l)) => {
                            let end = rest.find(l.as_str())?;
                            let v = &rest[..end];
                            rest = &rest[end..];
                            v
                        }
                        Some(Segment::Field(_)) => return None,
                        None => std::mem::take(&mut rest),
                    };
                    if let Some(prev) = fields.get(f) {
                        if prev != value {
                            return None;
                        }
                    }
                    fields.insert(f.clone(), value.to_string());
                    i += 1;
                }
            }
        }
        rest.is_empty().then_some(fields)
    }
}

/// The active template for every [`TemplateId`].
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: HashMap<TemplateId, PromptTemplate>,
    overridden: Vec<TemplateId>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::new(id.as_str(), id.default_body())))
            .collect();
        TemplateSet {
            templates,
            overridden: Vec::new(),
        }
    }
}

impl TemplateSet {
    /// Built-in defaults overridden by `<name>.txt` files in `dir`. A single
    /// trailing newline in a file is not part of the body.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let id = TemplateId::parse(stem)
                .ok_or_else(|| TemplateError::UnknownTemplate(stem.to_string()))?;
            let text = std::fs::read_to_string(&path)?;
            let body = text.strip_suffix('\n').unwrap_or(&text);
            set.set(id, body)?;
        }
        Ok(set)
    }

    /// Replaces a body. The replacement must use exactly the placeholders of
    /// the built-in template, so callers can always fill it.
    pub fn set(&mut self, id: TemplateId, body: &str) -> Result<(), TemplateError> {
        let candidate = PromptTemplate::new(id.as_str(), body);
        let builtin = PromptTemplate::new(id.as_str(), id.default_body());
        let mut want = builtin.placeholders();
        let mut got = candidate.placeholders();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(TemplateError::Malformed {
                template: id.to_string(),
                message: format!("placeholders {got:?} differ from {want:?}"),
            });
        }
        self.templates.insert(id, candidate);
        if !self.overridden.contains(&id) {
            self.overridden.push(id);
        }
        Ok(())
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(id).render(vars)
    }

    pub fn overridden(&self) -> &[TemplateId] {
        &self.overridden
    }
}

const ANSWER: &str = "Here are 2 sets of example prompt and answer.

Example Prompt: Which American-born Sinclair won the Nobel Prize for Literature in 1930?
Example Answer: Sinclair Lewis

Example Prompt: Where in England was Dame Judi Dench born?
Example Answer: York

---

Now, here is a new prompt to answer. Answer with a concise phrase, as in the examples.

Prompt: {question}
Answer:";

const P_TRUE: &str = "Below is a question and a candidate answer. Your task is to determine whether the answer is correct or not. Only output \"Yes\" (correct) or \"No\" (incorrect).

Question: {question}
Candidate answer: {candidate_answer}";

const NUMERICAL: &str = "Below is a question and a candidate answer. State your confidence that the candidate answer is correct. Only output an integer followed by \"%\".

Question: {question}
Candidate answer: {candidate_answer}";

const K_VC: &str = "Provide your {K} best guesses and the probability that each is correct (0.0 to 1.0) for the following question. Give ONLY the guesses and probabilities, no other words or explanation. For example:

G1: <first most likely guess, as short as possible; not a complete sentence, just the guess!>
P1: <the probability between 0.0 and 1.0 that G1 is correct, without any extra commentary whatsoever; just the probability!>
...
G{K}: <{K}th most likely guess, as short as possible; not a complete sentence, just the guess!>
P{K}: <the probability between 0.0 and 1.0 that G{K} is correct, without any extra commentary whatsoever; just the probability!>

The question is: {question}";

const SC_VC_FOLLOWUP: &str = "Is your answer correct? Only output \"Yes\" or \"No\".";

const BIOGRAPHY: &str = "Write me a paragraph biography on {entity}.";

const BIOGRAPHY_DISTRACTOR: &str = "You will be given a fact about a person. Assuming the fact is accurate, your task is to generate a plausible but inaccurate statement of a similar nature. The distractor statement should form a minimal pair with the original statement, i.e. the distractor should be as similar to the original as possible while ensuring that the distractor is not factual. The distractor should be crafted so that someone with only superficial knowledge about the topic is likely to be fooled.

Let's see some examples before the real task.

Topic: Barack Obama
Fact: Barack Obama was born in Hawaii.
Distractor: Barack Obama was born in Kenya.

Topic: Wright brothers
Fact: Wright airplanes were involved in fatal crashes.
Distractor: Wright airplanes were praised for their safety.

Topic: John Clempert
Fact: John Clempert was inspired by Houdini when developing acts.
Distractor: John Clempert was inspired by Penn and Teller when developing acts.

Now for the real task. Only output a distractor as in the examples.

Topic: {entity}
Fact: {claim}
Distractor:";

const BIOGRAPHY_P_TRUE: &str = "Your task is to determine whether the following claim related to {entity} is correct. Only output \"Yes\" (correct) or \"No\" (incorrect).

Claim: {claim}

Yes or No:";

const BIOGRAPHY_NUMERICAL: &str = "The claim below was found in a passage about {entity}. State your confidence that the claim is correct. Only output an integer followed by \"%\".

Claim: {claim}";

const BIOGRAPHY_ENTAILMENT: &str = "You will be given a passage and a claim. Your task is to determine whether the passage supports, refutes, or does not mention the claim. Output only \"Support\", \"Refute\", or \"No Mention\".

Let's see some examples before the real task.

Passage: Barack Obama was the 44th President of the United States, serving from 2009 to 2017. Born on August 4, 1961, in Honolulu, Hawaii, he was the first African American to hold the office. Before his presidency, Obama served as a state senator in Illinois and later as the 47th Governor of Illinois. A former constitutional law professor, he was known for his eloquence, bipartisan approach, and focus on issues such as healthcare reform, climate change, and foreign policy. His presidency was marked by significant legislative achievements, including the Affordable Care Act, and a commitment to diplomacy and international cooperation. After leaving office, he authored memoirs and remained active in public life, advocating for social justice and community engagement.
Claim: Barack Obama was born in Hawaii.
Relationship: Support

Passage: Tiger Woods is one of the most iconic and accomplished golfers in history, known for his extraordinary talent, dominance on the course, and global influence on the sport. Born on December 30, 1975, in Cypress, Florida, Woods rose to fame in the mid-1990s and quickly became a household name, winning his first major championship at the 1997 Masters at just 21 years old. Over his career, he has claimed 15 major titles, the most in PGA Tour history, and has consistently ranked among the world's top golfers for over two decades. His aggressive playing style, precision, and mental toughness set him apart, making him a symbol of excellence in golf. Despite personal challenges and setbacks, Woods has remained a dominant force in the sport, inspiring millions of fans around the world.
Claim: Tiger Woods won a major championship at 19 years old.
Relationship: Refute

Passage: Albert Einstein was a theoretical physicist renowned for developing the theory of relativity, which revolutionized the understanding of space, time, and gravity. Born in 1879 in Ulm, Germany, he later moved to Switzerland and eventually to the United States. Einstein's work, including the famous equation E=mc², laid the foundation for modern physics and contributed to the development of nuclear energy. Despite his scientific achievements, he was also a passionate advocate for peace, civil rights, and education. His legacy endures as one of the most influential scientists in history.
Claim: Albert Einstein became a US citizen.
Relationship: No Mention

Now for the real task.

Passage: {sampled_biography}
Claim: {claim}
Relationship:";

const PREFIX_COMPLETION: &str = "You will be given a prompt along with a prefix to begin your answer with. Your answer should start with the given prefix. If the prefix itself is your final answer, you can simply output just the prefix.

Let's look at 2 examples before the real task.

Example Prompt: Which American-born Sinclair won the Nobel Prize for Literature in 1930?
Example Answer Prefix: Sin
Example Answer: Sinclair Lewis

Example Prompt: Where in England was Dame Judi Dench born?
Example Answer Prefix: York
Example Answer: York

---

Now, here is a new prompt to answer. Answer with a concise phrase starting with the given prefix, as in the examples.

Prompt: {question}
Prefix: {prefix}
Answer:";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfilled_placeholder_is_an_error() {
        let set = TemplateSet::default();
        let err = set
            .render(TemplateId::PTrue, &[("question", "q")])
            .unwrap_err();
        assert!(
            matches!(err, TemplateError::Unfilled { ref placeholder, .. } if placeholder == "candidate_answer")
        );
    }

    #[test]
    fn placeholders_of_builtins() {
        let set = TemplateSet::default();
        assert_eq!(set.get(TemplateId::KVc).placeholders(), ["K", "question"]);
        assert_eq!(
            set.get(TemplateId::ScVcFollowup).placeholders(),
            Vec::<&str>::new()
        );
        assert_eq!(
            set.get(TemplateId::BiographyEntailment).placeholders(),
            ["sampled_biography", "claim"]
        );
    }

    #[test]
    fn extract_inverts_render() {
        let set = TemplateSet::default();
        for (id, vars) in [
            (TemplateId::Answer, vec![("question", "Who wrote Hamlet?")]),
            (
                TemplateId::KVc,
                vec![("K", "6"), ("question", "Capital of Peru?")],
            ),
            (
                TemplateId::PrefixCompletion,
                vec![("question", "Where?"), ("prefix", "Lon")],
            ),
        ] {
            let text = set.render(id, &vars).unwrap();
            let got = set.get(id).extract(&text).unwrap();
            for (k, v) in vars {
                assert_eq!(got[k], v);
            }
        }
        assert!(set.get(TemplateId::Answer).extract("Prompt: x").is_none());
        let kvc = set.get(TemplateId::KVc);
        let bad = kvc
            .render(&[("K", "3"), ("question", "q")])
            .unwrap()
            .replacen("G3", "G4", 1);
        assert!(kvc.extract(&bad).is_none());
    }

    #[test]
    fn literal_braces_are_not_fields() {
        let t = PromptTemplate::new("t", "a {not a field} {x} {}");
        assert_eq!(t.placeholders(), ["x"]);
        assert_eq!(t.render(&[("x", "1")]).unwrap(), "a {not a field} 1 {}");
    }

    #[test]
    fn overrides_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("p_true.txt"),
            "Q={question} A={candidate_answer}?\n",
        )
        .unwrap();
        let set = TemplateSet::with_overrides(dir.path()).unwrap();
        assert_eq!(
            set.render(
                TemplateId::PTrue,
                &[("question", "q"), ("candidate_answer", "a")]
            )
            .unwrap(),
            "Q=q A=a?"
        );
        assert_eq!(set.overridden(), [TemplateId::PTrue]);

        std::fs::write(
            dir.path().join("p_true.txt"),
            "missing the answer {question}",
        )
        .unwrap();
        assert!(matches!(
            TemplateSet::with_overrides(dir.path()),
            Err(TemplateError::Malformed { .. })
        ));
        std::fs::remove_file(dir.path().join("p_true.txt")).unwrap();
        std::fs::write(dir.path().join("nonsense.txt"), "x").unwrap();
        assert!(matches!(
            TemplateSet::with_overrides(dir.path()),
            Err(TemplateError::UnknownTemplate(_))
        ));
    }
}
