#![allow(dead_code)]

use std::sync::Arc;

use dinco::elicitation::templates::{TemplateId, TemplateSet};
use dinco::gateway::mock::{last_user, MockNli, MockProvider};
use dinco::gateway::synthetic::BiasRule;
use dinco::gateway::{Completion, Gateway, ProviderCapabilities, TokenLogprob};
use dinco::harness::{
    synthetic_instances, DatasetInstance, MethodId, NliSettings, ProviderSettings, RunConfig,
    SyntheticGenerate,
};

pub fn synthetic_config(
    n: usize,
    answers: usize,
    bias: BiasRule,
    caps: ProviderCapabilities,
) -> RunConfig {
    RunConfig {
        seed: 11,
        provider: Some(ProviderSettings::Synthetic {
            spec: None,
            generate: Some(SyntheticGenerate {
                n_questions: n,
                n_answers: answers,
                bias,
                seed: 5,
            }),
            seed: 3,
            capabilities: Some(caps),
        }),
        nli: NliSettings::ExactMatch,
        ..RunConfig::default()
    }
}

pub fn with_methods(mut cfg: RunConfig, methods: &[MethodId]) -> RunConfig {
    cfg.methods = methods.to_vec();
    cfg
}

pub fn build(cfg: &RunConfig) -> (Gateway, TemplateSet, Vec<DatasetInstance>) {
    let templates = cfg.templates().unwrap();
    let gateway = cfg.build_gateway(&templates).unwrap();
    let instances = synthetic_instances(&cfg.synthetic_spec().unwrap().unwrap());
    (gateway, templates, instances)
}

fn yes_no(p_yes: f64) -> Completion {
    let alts = vec![
        TokenLogprob::new("Yes", p_yes.ln()),
        TokenLogprob::new("No", (1.0 - p_yes).ln()),
    ];
    let text = if p_yes >= 0.5 { "Yes" } else { "No" };
    let realized = alts.iter().find(|a| a.token == text).cloned().unwrap();
    Completion {
        text: text.into(),
        tokens: vec![realized],
        alternatives: vec![alts],
    }
}

/// Biography model for one fictional person: claims mentioning "Lyon" are
/// true, "Paris" false; distractors swap the city.
pub fn biography_gateway() -> Gateway {
    let t = TemplateSet::default();
    let p = MockProvider::from_fn(
        "bio-mock",
        ProviderCapabilities::TOP_TOKENS,
        move |messages, params| {
            let prompt = last_user(messages);
            let text = if t.get(TemplateId::Biography).extract(prompt).is_some() {
                let sample = params.seed.map_or(0, |s| s % 3);
                match sample {
                    0 => "Ada Roux was a chemist. She was born in Lyon.".to_string(),
                    1 => "Ada Roux was a chemist born in Lyon.".to_string(),
                    _ => "Ada Roux was a painter from Paris.".to_string(),
                }
            } else if let Some(f) = t.get(TemplateId::BiographyDistractor).extract(prompt) {
                let claim = &f["claim"];
                let alt = ["Nice", "Lille", "Metz"][params.seed.map_or(0, |s| (s % 3) as usize)];
                claim.replace("Lyon", alt).replace("Paris", alt)
            } else if let Some(f) = t.get(TemplateId::BiographyPTrue).extract(prompt) {
                return Ok(yes_no(if f["claim"].contains("Lyon") {
                    0.8
                } else {
                    0.4
                }));
            } else if let Some(f) = t.get(TemplateId::BiographyNumerical).extract(prompt) {
                if f["claim"].contains("Lyon") {
                    "80%"
                } else {
                    "40%"
                }
                .to_string()
            } else if let Some(f) = t.get(TemplateId::BiographyEntailment).extract(prompt) {
                let passage = &f["sampled_biography"];
                let claim = &f["claim"];
                let city = ["Lyon", "Paris", "Nice", "Lille", "Metz"]
                    .into_iter()
                    .find(|c| claim.contains(c));
                match city {
                    Some(c) if passage.contains(c) => "Support",
                    Some(_) => "Refute",
                    None => "No Mention",
                }
                .to_string()
            } else {
                String::new()
            };
            Ok(Completion::text_only(text))
        },
    );
    Gateway::new(Arc::new(p))
        .with_nli(Arc::new(MockNli::exact_match()))
        .with_memo()
}

pub fn biography_instances() -> Vec<DatasetInstance> {
    let text = r#"{"id":"ada","kind":"long_form","entity":"Ada Roux","claims":[{"text":"Ada Roux was born in Lyon.","correct":1},{"text":"Ada Roux lived in Paris.","correct":0}]}
{"id":"ada2","kind":"long_form","entity":"Ada Roux","response":"Ada Roux was born in Lyon.","claims":[{"text":"Ada Roux was born in Lyon.","correct":true}]}"#;
    dinco::harness::dataset::parse(text.as_bytes()).unwrap()
}
