//! Newline-delimited JSON datasets of labeled questions and passages.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::gateway::synthetic::SyntheticModelSpec;
use crate::text::normalize;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Acceptable answers to a short-form question: one string or a list of
/// aliases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    One(String),
    Aliases(Vec<String>),
}

impl Gold {
    pub fn aliases(&self) -> Vec<&str> {
        match self {
            Gold::One(s) => vec![s.as_str()],
            Gold::Aliases(v) => v.iter().map(String::as_str).collect(),
        }
    }

    /// Normalized exact match against any alias.
    pub fn matches(&self, answer: &str) -> bool {
        let a = normalize(answer);
        !a.is_empty() && self.aliases().iter().any(|g| normalize(g) == a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledClaim {
    pub text: String,
    #[serde(deserialize_with = "label")]
    pub correct: bool,
}

fn label<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum L {
        B(bool),
        N(u8),
    }
    match L::deserialize(d)? {
        L::B(b) => Ok(b),
        L::N(0) => Ok(false),
        L::N(1) => Ok(true),
        L::N(n) => Err(serde::de::Error::custom(format!(
            "label must be 0 or 1, got {n}"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceBody {
    ShortForm {
        question: String,
        gold: Gold,
    },
    /// A passage about `entity` already decomposed into labeled claims.
    /// `response` is the passage the claims came from; when absent the model
    /// writes one at run time.
    LongForm {
        entity: String,
        claims: Vec<LabeledClaim>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub id: String,
    #[serde(flatten)]
    pub body: InstanceBody,
}

impl DatasetInstance {
    pub fn short_form(
        id: impl Into<String>,
        question: impl Into<String>,
        gold: impl Into<String>,
    ) -> Self {
        DatasetInstance {
            id: id.into(),
            body: InstanceBody::ShortForm {
                question: question.into(),
                gold: Gold::One(gold.into()),
            },
        }
    }

    pub fn is_long_form(&self) -> bool {
        matches!(self.body, InstanceBody::LongForm { .. })
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.id.contains('#') {
            return Err(format!(
                "id {:?} contains '#', which is reserved for claim ids",
                self.id
            ));
        }
        match &self.body {
            InstanceBody::ShortForm { question, gold } => {
                if question.trim().is_empty() {
                    return Err("empty question".into());
                }
                if gold.aliases().iter().all(|g| normalize(g).is_empty()) {
                    return Err("gold has no non-empty alias".into());
                }
            }
            InstanceBody::LongForm { entity, claims, .. } => {
                if entity.trim().is_empty() {
                    return Err("empty entity".into());
                }
                if claims.is_empty() {
                    return Err("long-form instance has no labeled claims".into());
                }
                if let Some(i) = claims.iter().position(|c| c.text.trim().is_empty()) {
                    return Err(format!("claim {i} has empty text"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a dataset from any reader.
pub fn parse(reader: impl BufRead) -> Result<Vec<DatasetInstance>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Invalid {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: DatasetInstance =
            serde_json::from_str(&line).map_err(|e| DatasetError::Invalid {
                line: line_no,
                message: e.to_string(),
            })?;
        inst.validate().map_err(|message| DatasetError::Invalid {
            line: line_no,
            message,
        })?;
        if !seen.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: inst.id,
            });
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Vec<DatasetInstance>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(BufReader::new(file))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// One short-form instance per synthetic question with a designated true
/// answer; ids are `q<index>`.
pub fn synthetic_instances(spec: &SyntheticModelSpec) -> Vec<DatasetInstance> {
    spec.questions
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let truth = q.truth?;
            Some(DatasetInstance::short_form(
                format!("q{i}"),
                q.question.clone(),
                q.answers[truth].clone(),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_kinds() {
        let text = r#"{"id":"a","kind":"short_form","question":"Capital of France?","gold":"Paris"}
{"id":"b","kind":"short_form","question":"Largest planet?","gold":["Jupiter","planet Jupiter"]}

{"id":"c","kind":"long_form","entity":"Ada Lovelace","claims":[{"text":"She was a mathematician.","correct":1},{"text":"She was born in Paris.","correct":false}]}
"#;
        let v = parse(text.as_bytes()).unwrap();
        assert_eq!(v.len(), 3);
        match &v[1].body {
            InstanceBody::ShortForm { gold, .. } => assert!(gold.matches("jupiter.")),
            _ => panic!(),
        }
        match &v[2].body {
            InstanceBody::LongForm {
                claims, response, ..
            } => {
                assert_eq!(claims.len(), 2);
                assert!(claims[0].correct && !claims[1].correct);
                assert!(response.is_none());
            }
            _ => panic!(),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected_by_name() {
        let text =
            "{\"id\":\"a\",\"kind\":\"short_form\",\"question\":\"q\",\"gold\":\"x\"}\n".repeat(2);
        let e = parse(text.as_bytes()).unwrap_err();
        assert!(matches!(&e, DatasetError::DuplicateId { line: 2, id } if id == "a"));
        assert!(e.to_string().contains("\"a\""));
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let missing_labels = r#"{"id":"a","kind":"short_form","question":"q","gold":"x"}
{"id":"b","kind":"long_form","entity":"E","claims":[{"text":"E is tall."}]}"#;
        let e = parse(missing_labels.as_bytes()).unwrap_err();
        assert!(matches!(e, DatasetError::Invalid { line: 2, .. }), "{e}");
        let no_claims = r#"{"id":"b","kind":"long_form","entity":"E","claims":[]}"#;
        assert!(matches!(
            parse(no_claims.as_bytes()),
            Err(DatasetError::Invalid { line: 1, .. })
        ));
        let bad_kind = r#"{"id":"b","kind":"essay","question":"q"}"#;
        assert!(parse(bad_kind.as_bytes()).is_err());
        let hash_id = r#"{"id":"a#1","kind":"short_form","question":"q","gold":"x"}"#;
        assert!(parse(hash_id.as_bytes()).is_err());
    }

    #[test]
    fn gold_matching_normalizes() {
        let g = Gold::Aliases(vec!["New York City".into(), "NYC".into()]);
        assert!(g.matches("new york city!"));
        assert!(g.matches("nyc"));
        assert!(!g.matches("York"));
        assert!(!g.matches(""));
    }
}
