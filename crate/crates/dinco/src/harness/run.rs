//! The evaluation run: one main answer per instance, every configured method
//! on top of it, records and an auditable manifest out.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{DistractorStrategy, MethodId, RunConfig, VcKind};
use super::dataset::{write_jsonl, DatasetInstance, Gold, InstanceBody};
use super::{io_err, CorrectnessRule, HarnessError};
use crate::coherence::{self, CoherenceError, ConsistencyResult, NvcResult, WeightedDistractor};
use crate::distractors::{self, DistractorError, DistractorSet};
use crate::elicitation::templates::TemplateSet;
use crate::elicitation::{msp, ElicitationError, Elicitor, KvcOutput};
use crate::exec::{map_slice, with_workers};
use crate::gateway::{
    CallTally, Completion, Gateway, GatewayError, GatewayStats, ProviderCapabilities, Session,
};
use crate::metrics::CalibrationRecord;
use crate::seed::derive_seed;

/// Everything one method computed for one claim.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodTrace {
    pub confidence: f64,
    /// Logical calls this method made for the whole instance, excluding the
    /// shared main answer. Repeated on every unit of a long-form instance.
    pub calls: CallTally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sc: Option<ConsistencyResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nvc: Option<NvcResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractors: Option<DistractorSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted: Option<Vec<WeightedDistractor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_vcs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kvc: Option<KvcOutput>,
    /// False when no K-VC guess matched the main answer and P1 was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kvc_matched: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitTrace {
    pub record_id: String,
    pub claim: String,
    pub correct: bool,
    pub methods: BTreeMap<MethodId, MethodTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub id: String,
    /// Main answer, or the main passage for long-form instances.
    pub answer: String,
    pub shared_calls: CallTally,
    pub units: Vec<UnitTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub id: String,
    pub refusal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodId>,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCalls {
    #[serde(flatten)]
    pub total: CallTally,
    /// Largest per-instance generation count.
    pub max_generation_per_instance: u64,
    /// Generation calls per instance the budget allows.
    pub generation_limit: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub provider_id: String,
    pub capabilities: ProviderCapabilities,
    pub distractor_strategy: DistractorStrategy,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub instances: usize,
    pub records: usize,
    pub methods: BTreeMap<MethodId, MethodCalls>,
    /// Main-answer generation and correctness judging.
    pub shared: CallTally,
    /// Gateway counters accumulated during this run.
    pub gateway: GatewayStats,
    pub cache_hit_rate: Option<f64>,
    /// Logical calls summed over methods and shared work equal the
    /// gateway's request counters.
    pub reconciled: bool,
    pub budget_violations: Vec<String>,
    pub dropped: Vec<DroppedInstance>,
    pub sc_vc_rule: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<CalibrationRecord>,
    pub traces: Vec<InstanceTrace>,
    pub manifest: RunManifest,
}

#[derive(Debug)]
struct Failure {
    refusal: bool,
    method: Option<MethodId>,
    message: String,
}

impl Failure {
    fn at(mut self, m: MethodId) -> Self {
        self.method.get_or_insert(m);
        self
    }
}

fn gateway_refusal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Refusal)
}

fn elicitation_refusal(e: &ElicitationError) -> bool {
    e.is_refusal() || matches!(e, ElicitationError::EmptyAnswer)
}

impl From<ElicitationError> for Failure {
    fn from(e: ElicitationError) -> Self {
        Failure {
            refusal: elicitation_refusal(&e),
            method: None,
            message: e.to_string(),
        }
    }
}

impl From<DistractorError> for Failure {
    fn from(e: DistractorError) -> Self {
        let refusal = match &e {
            DistractorError::Elicitation(x) => elicitation_refusal(x),
            DistractorError::Gateway(x) => gateway_refusal(x),
            DistractorError::NoAlternatives => false,
        };
        Failure {
            refusal,
            method: None,
            message: e.to_string(),
        }
    }
}

impl From<CoherenceError> for Failure {
    fn from(e: CoherenceError) -> Self {
        let refusal = match &e {
            CoherenceError::Elicitation(x) => elicitation_refusal(x),
            CoherenceError::Gateway(x) => gateway_refusal(x),
            _ => false,
        };
        Failure {
            refusal,
            method: None,
            message: e.to_string(),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure {
            refusal: gateway_refusal(&e),
            method: None,
            message: e.to_string(),
        }
    }
}

struct Outcome {
    id: String,
    shared: CallTally,
    tallies: Vec<(MethodId, CallTally)>,
    result: Result<InstanceTrace, Failure>,
}

struct Engine<'c> {
    cfg: &'c RunConfig,
    gateway: &'c Gateway,
    templates: &'c TemplateSet,
    strategy: DistractorStrategy,
}

/// Inputs that several methods build on.
struct Main<'a> {
    id: &'a str,
    question: &'a str,
    answer: &'a str,
    completion: &'a Completion,
}

impl<'c> Engine<'c> {
    fn elicitor<'a>(&'a self, s: &'a Session<'c>) -> Elicitor<'a, 'c> {
        Elicitor::new(s, self.templates, &self.cfg.decoding)
    }

    fn vc(
        &self,
        el: &Elicitor,
        kind: VcKind,
        question: &str,
        candidate: &str,
    ) -> Result<f64, Failure> {
        Ok(match kind {
            VcKind::PTrue => el.p_true(question, candidate)?.value,
            VcKind::Numerical => {
                el.numerical_confidence(question, Some(candidate), None)?
                    .value
            }
        })
    }

    fn vc_claim(
        &self,
        el: &Elicitor,
        kind: VcKind,
        entity: &str,
        claim: &str,
    ) -> Result<f64, Failure> {
        Ok(match kind {
            VcKind::PTrue => el.p_true_claim(entity, claim)?.value,
            VcKind::Numerical => el.numerical_confidence(claim, None, Some(entity))?.value,
        })
    }

    fn samples(&self, el: &Elicitor, main: &Main, n: usize) -> Result<Vec<String>, Failure> {
        (0..n)
            .map(|k| {
                let seed = derive_seed(self.cfg.seed, &[main.id, "sample", &k.to_string()]);
                Ok(el.sample_answer(main.question, seed)?)
            })
            .collect()
    }

    fn biographies(
        &self,
        el: &Elicitor,
        id: &str,
        entity: &str,
        n: usize,
    ) -> Result<Vec<String>, Failure> {
        (0..n)
            .map(|k| {
                let seed = derive_seed(self.cfg.seed, &[id, "biography", &k.to_string()]);
                Ok(el.generate_biography(entity, Some(seed))?)
            })
            .collect()
    }

    fn distractor_set(
        &self,
        el: &Elicitor,
        m: MethodId,
        main: &Main,
        n: usize,
    ) -> Result<DistractorSet, Failure> {
        if n == 0 {
            return Ok(DistractorSet::new(main.answer, 0));
        }
        let strategy = if m.is_black_box_variant() {
            DistractorStrategy::BlackBox
        } else {
            self.strategy
        };
        Ok(match strategy {
            DistractorStrategy::Beam => {
                distractors::beam_distractors(el, main.question, main.answer, n)?
            }
            DistractorStrategy::PseudoBeam => distractors::pseudo_beam_distractors(
                el,
                main.question,
                main.answer,
                main.completion,
                n,
            )?,
            DistractorStrategy::BlackBox | DistractorStrategy::Auto => {
                distractors::black_box_distractors(el, main.question, main.answer, n)?
            }
        })
    }

    fn nvc_short(
        &self,
        el: &Elicitor,
        m: MethodId,
        main: &Main,
        n: usize,
        trace: &mut MethodTrace,
    ) -> Result<f64, Failure> {
        let kind = m.vc_kind().expect("normalized methods elicit VC");
        let set = self.distractor_set(el, m, main, n)?;
        let f_main = self.vc(el, kind, main.question, main.answer)?;
        let texts: Vec<String> = set.texts().into_iter().map(str::to_string).collect();
        let f_vcs = texts
            .iter()
            .map(|d| self.vc(el, kind, main.question, d))
            .collect::<Result<Vec<_>, _>>()?;
        let weighted = coherence::weigh_distractors(
            el.session(),
            main.answer,
            &texts,
            &f_vcs,
            Some(main.question),
            self.cfg.ablate_nli,
        )?;
        let r = coherence::nvc(f_main, &weighted);
        trace.vc = Some(f_main);
        trace.nvc = Some(r);
        trace.distractors = Some(set);
        trace.weighted = Some(weighted);
        Ok(r.f_nvc)
    }

    fn short_method(
        &self,
        m: MethodId,
        s: &Session<'c>,
        main: &Main,
    ) -> Result<MethodTrace, Failure> {
        let el = self.elicitor(s);
        let cfg = self.cfg;
        let mut t = MethodTrace::default();
        t.confidence = match m {
            MethodId::VcPtrue | MethodId::VcNum => {
                let v = self.vc(&el, m.vc_kind().unwrap(), main.question, main.answer)?;
                t.vc = Some(v);
                v
            }
            MethodId::Msp => msp(main.completion)?,
            MethodId::Kvc => {
                let out = el.k_vc(main.question, cfg.budget)?;
                let mut pick = None;
                for p in &out.pairs {
                    if coherence::semantic_equal(s, main.answer, &p.guess, main.question)? {
                        pick = Some(p.confidence);
                        break;
                    }
                }
                t.kvc_matched = Some(pick.is_some());
                let v = pick.unwrap_or(out.pairs[0].confidence);
                t.kvc = Some(out);
                v
            }
            MethodId::Sc => {
                let samples = self.samples(&el, main, cfg.budget)?;
                let sc =
                    coherence::self_consistency_short(s, main.answer, &samples, main.question)?;
                t.sc = Some(sc);
                t.samples = Some(samples);
                sc.f_sc()
            }
            MethodId::ScVc => {
                let samples = self.samples(&el, main, cfg.budget)?;
                let main_vc = el.p_true_followup(main.question, main.answer)?.value;
                let vcs = samples
                    .iter()
                    .map(|x| Ok(el.p_true_followup(main.question, x)?.value))
                    .collect::<Result<Vec<_>, Failure>>()?;
                let matches = coherence::match_samples(s, main.answer, &samples, main.question)?;
                let v = coherence::sc_vc_from_matches(main_vc, &vcs, &matches)?;
                t.vc = Some(main_vc);
                t.sc = Some(ConsistencyResult {
                    match_count: matches.iter().filter(|&&b| b).count(),
                    sample_count: samples.len(),
                });
                t.samples = Some(samples);
                t.sample_vcs = Some(vcs);
                v
            }
            MethodId::Nvc | MethodId::NvcNum | MethodId::NvcBlackbox => {
                self.nvc_short(&el, m, main, cfg.nvc_distractors, &mut t)?
            }
            MethodId::Dinco | MethodId::DincoNum | MethodId::DincoBlackbox => {
                let f_nvc = self.nvc_short(&el, m, main, cfg.dinco.n_distractors, &mut t)?;
                let samples = self.samples(&el, main, cfg.dinco.sc_samples)?;
                let sc =
                    coherence::self_consistency_short(s, main.answer, &samples, main.question)?;
                t.sc = Some(sc);
                t.samples = Some(samples);
                coherence::dinco(sc.f_sc(), f_nvc)
            }
        };
        Ok(t)
    }

    fn judge(
        &self,
        s: &Session,
        question: &str,
        gold: &Gold,
        answer: &str,
    ) -> Result<bool, Failure> {
        if gold.matches(answer) {
            return Ok(true);
        }
        if self.cfg.correctness == CorrectnessRule::Nli {
            for alias in gold.aliases() {
                if coherence::semantic_equal(s, answer, alias, question)? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    fn short_form(&self, id: &str, question: &str, gold: &Gold) -> Outcome {
        let shared = Session::new(self.gateway);
        let mut tallies = Vec::new();
        let result = (|| {
            let el = self.elicitor(&shared);
            let (answer, completion) = el.generate_answer(question)?;
            let correct = self.judge(&shared, question, gold, &answer)?;
            let main = Main {
                id,
                question,
                answer: &answer,
                completion: &completion,
            };
            let mut methods = BTreeMap::new();
            for &m in &self.cfg.methods {
                let s = Session::new(self.gateway);
                let r = self.short_method(m, &s, &main);
                tallies.push((m, s.tally()));
                let mut t = r.map_err(|f| f.at(m))?;
                t.calls = s.tally();
                methods.insert(m, t);
            }
            Ok(InstanceTrace {
                id: id.to_string(),
                answer: answer.clone(),
                shared_calls: CallTally::default(),
                units: vec![UnitTrace {
                    record_id: id.to_string(),
                    claim: answer,
                    correct,
                    methods,
                }],
            })
        })();
        finish(id, shared.tally(), tallies, result)
    }

    fn long_method(
        &self,
        m: MethodId,
        s: &Session<'c>,
        id: &str,
        entity: &str,
        main_passage: &str,
        claims: &[&str],
    ) -> Result<Vec<MethodTrace>, Failure> {
        let el = self.elicitor(s);
        let cfg = self.cfg;
        let n_samples = match m {
            MethodId::Sc => cfg.budget,
            _ if m.is_dinco() => cfg.dinco.sc_samples,
            _ => 0,
        };
        let mut responses = vec![main_passage.to_string()];
        responses.extend(self.biographies(&el, id, entity, n_samples)?);
        let n_distractors = if m.is_dinco() {
            cfg.dinco.n_distractors
        } else {
            cfg.nvc_distractors
        };
        let mut out = Vec::with_capacity(claims.len());
        for (k, &claim) in claims.iter().enumerate() {
            let mut t = MethodTrace::default();
            let nvc = |t: &mut MethodTrace| -> Result<f64, Failure> {
                let kind = m.vc_kind().unwrap();
                let seed = derive_seed(cfg.seed, &[id, "distractor", &k.to_string()]);
                let set =
                    distractors::longform_distractors(&el, entity, claim, n_distractors, seed)?;
                let f_main = self.vc_claim(&el, kind, entity, claim)?;
                let texts: Vec<String> = set.texts().into_iter().map(str::to_string).collect();
                let f_vcs = texts
                    .iter()
                    .map(|d| self.vc_claim(&el, kind, entity, d))
                    .collect::<Result<Vec<_>, _>>()?;
                let weighted =
                    coherence::weigh_distractors(s, claim, &texts, &f_vcs, None, cfg.ablate_nli)?;
                let r = coherence::nvc(f_main, &weighted);
                t.vc = Some(f_main);
                t.nvc = Some(r);
                t.distractors = Some(set);
                t.weighted = Some(weighted);
                Ok(r.f_nvc)
            };
            let support = |t: &mut MethodTrace| -> Result<f64, Failure> {
                let scores = responses
                    .iter()
                    .map(|r| el.support_score(r, claim))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = coherence::mean_support(&scores);
                t.support = Some(scores);
                Ok(v)
            };
            t.confidence = match m {
                MethodId::VcPtrue | MethodId::VcNum => {
                    let v = self.vc_claim(&el, m.vc_kind().unwrap(), entity, claim)?;
                    t.vc = Some(v);
                    v
                }
                MethodId::Sc => support(&mut t)?,
                MethodId::Nvc | MethodId::NvcNum => nvc(&mut t)?,
                MethodId::Dinco | MethodId::DincoNum => {
                    let f_nvc = nvc(&mut t)?;
                    let f_sc = support(&mut t)?;
                    coherence::dinco(f_sc, f_nvc)
                }
                other => {
                    return Err(Failure {
                        refusal: false,
                        method: Some(other),
                        message: format!("{other} does not apply to long-form instances"),
                    })
                }
            };
            out.push(t);
        }
        if n_samples > 0 {
            for t in &mut out {
                t.samples = Some(responses[1..].to_vec());
            }
        }
        Ok(out)
    }

    fn long_form(
        &self,
        id: &str,
        entity: &str,
        claims: &[super::dataset::LabeledClaim],
        response: Option<&str>,
    ) -> Outcome {
        let shared = Session::new(self.gateway);
        let mut tallies = Vec::new();
        let result = (|| {
            let el = self.elicitor(&shared);
            let passage = match response {
                Some(r) => r.to_string(),
                None => el.generate_biography(entity, None)?,
            };
            let texts: Vec<&str> = claims.iter().map(|c| c.text.as_str()).collect();
            let mut units: Vec<UnitTrace> = claims
                .iter()
                .enumerate()
                .map(|(k, c)| UnitTrace {
                    record_id: format!("{id}#{k}"),
                    claim: c.text.clone(),
                    correct: c.correct,
                    methods: BTreeMap::new(),
                })
                .collect();
            for &m in &self.cfg.methods {
                let s = Session::new(self.gateway);
                let r = self.long_method(m, &s, id, entity, &passage, &texts);
                tallies.push((m, s.tally()));
                let traces = r.map_err(|f| f.at(m))?;
                for (u, mut t) in units.iter_mut().zip(traces) {
                    t.calls = s.tally();
                    u.methods.insert(m, t);
                }
            }
            Ok(InstanceTrace {
                id: id.to_string(),
                answer: passage,
                shared_calls: CallTally::default(),
                units,
            })
        })();
        finish(id, shared.tally(), tallies, result)
    }

    fn instance(&self, inst: &DatasetInstance) -> Outcome {
        match &inst.body {
            InstanceBody::ShortForm { question, gold } => self.short_form(&inst.id, question, gold),
            InstanceBody::LongForm {
                entity,
                claims,
                response,
            } => self.long_form(&inst.id, entity, claims, response.as_deref()),
        }
    }

    /// Generation calls per instance the budget allows a method, excluding
    /// the shared main answer.
    fn generation_limit(&self, m: MethodId, units: usize, long_form: bool) -> u64 {
        let cfg = self.cfg;
        let per_set = |n: usize, strategy: DistractorStrategy| -> u64 {
            match (n, long_form, strategy) {
                (0, ..) => 0,
                (_, true, _) if self.gateway.capabilities().has_beam_search => units as u64,
                (n, true, _) => (n * units) as u64,
                (_, false, DistractorStrategy::PseudoBeam) => n as u64,
                _ => 1,
            }
        };
        let strategy = if m.is_black_box_variant() {
            DistractorStrategy::BlackBox
        } else {
            self.strategy
        };
        match m {
            MethodId::VcPtrue | MethodId::VcNum | MethodId::Msp => 0,
            MethodId::Kvc => 1,
            MethodId::Sc | MethodId::ScVc => cfg.budget as u64,
            MethodId::Nvc | MethodId::NvcNum | MethodId::NvcBlackbox => {
                per_set(cfg.nvc_distractors, strategy)
            }
            MethodId::Dinco | MethodId::DincoNum | MethodId::DincoBlackbox => {
                cfg.dinco.sc_samples as u64 + per_set(cfg.dinco.n_distractors, strategy)
            }
        }
    }
}

fn finish(
    id: &str,
    shared: CallTally,
    tallies: Vec<(MethodId, CallTally)>,
    result: Result<InstanceTrace, Failure>,
) -> Outcome {
    Outcome {
        id: id.to_string(),
        shared,
        tallies,
        result: result.map(|mut t| {
            t.shared_calls = shared;
            t
        }),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs every configured method over `instances`. Instances that fail are
/// dropped from all methods; refusals are always tolerated, other failures
/// up to `max_error_fraction` of the instances.
pub fn run(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    instances: &[DatasetInstance],
) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let long_form = instances.iter().any(DatasetInstance::is_long_form);
    cfg.validate_against(gateway, long_form)?;
    let engine = Engine {
        cfg,
        gateway,
        templates,
        strategy: cfg.distractor_strategy.resolve(gateway.capabilities()),
    };
    let started_unix = unix_now();
    let before = gateway.stats();
    let outcomes: Vec<Outcome> = with_workers(cfg.workers, || {
        map_slice(cfg.execution, instances, |_, inst| engine.instance(inst))
    });
    let after = gateway.stats();

    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut dropped = Vec::new();
    let mut shared = CallTally::default();
    let mut methods: BTreeMap<MethodId, MethodCalls> = cfg
        .methods
        .iter()
        .map(|&m| (m, MethodCalls::default()))
        .collect();
    let mut budget_violations = Vec::new();
    for (o, inst) in outcomes.into_iter().zip(instances) {
        shared += o.shared;
        let units = match &inst.body {
            InstanceBody::ShortForm { .. } => 1,
            InstanceBody::LongForm { claims, .. } => claims.len(),
        };
        for (m, tally) in &o.tallies {
            let entry = methods.get_mut(m).expect("configured method");
            entry.total += *tally;
            entry.max_generation_per_instance =
                entry.max_generation_per_instance.max(tally.generation);
            let limit = engine.generation_limit(*m, units, inst.is_long_form());
            if tally.generation > limit {
                budget_violations.push(format!(
                    "{} {m}: {} generation calls, limit {limit}",
                    o.id, tally.generation
                ));
            }
        }
        match o.result {
            Ok(trace) => {
                for u in &trace.units {
                    for &m in &cfg.methods {
                        records.push(CalibrationRecord::new(
                            &u.record_id,
                            m.as_str(),
                            u.methods[&m].confidence,
                            u.correct,
                        ));
                    }
                }
                traces.push(trace);
            }
            Err(f) => dropped.push(DroppedInstance {
                id: o.id,
                refusal: f.refusal,
                method: f.method,
                reason: f.message,
            }),
        }
    }
    let single = instances.first().map(|i| !i.is_long_form());
    for (m, calls) in &mut methods {
        calls.generation_limit = engine.generation_limit(*m, 1, single == Some(false));
    }

    let errors: Vec<&DroppedInstance> = dropped.iter().filter(|d| !d.refusal).collect();
    if !instances.is_empty()
        && errors.len() as f64 / instances.len() as f64 > cfg.max_error_fraction
    {
        return Err(HarnessError::TooManyErrors {
            failed: errors.len(),
            total: instances.len(),
            limit: cfg.max_error_fraction,
            first: format!("{}: {}", errors[0].id, errors[0].reason),
        });
    }

    let logical = methods.values().fold(shared, |acc, c| acc + c.total);
    let gateway_delta = GatewayStats {
        generation_requests: after.generation_requests - before.generation_requests,
        backend_generation_calls: after.backend_generation_calls - before.backend_generation_calls,
        nli_requests: after.nli_requests - before.nli_requests,
        backend_nli_calls: after.backend_nli_calls - before.backend_nli_calls,
        cache: crate::gateway::CacheStats {
            hits: after.cache.hits - before.cache.hits,
            misses: after.cache.misses - before.cache.misses,
        },
        memo_hits: after.memo_hits - before.memo_hits,
    };
    let reconciled = logical.generation + logical.validation == gateway_delta.generation_requests
        && logical.nli == gateway_delta.nli_requests;
    let total_requests = gateway_delta.generation_requests + gateway_delta.nli_requests;
    let cache_hit_rate = (total_requests > 0).then(|| {
        (gateway_delta.cache.hits + gateway_delta.memo_hits) as f64 / total_requests as f64
    });

    let manifest = RunManifest {
        config: cfg.clone(),
        provider_id: gateway.provider_id().to_string(),
        capabilities: gateway.capabilities(),
        distractor_strategy: engine.strategy,
        started_unix,
        finished_unix: unix_now(),
        instances: instances.len(),
        records: records.len(),
        methods,
        shared,
        gateway: gateway_delta,
        cache_hit_rate,
        reconciled,
        budget_violations,
        dropped,
        sc_vc_rule:
            "VC mass on answers matching the main answer over total VC mass, main answer in both"
                .into(),
    };
    Ok(RunOutput {
        records,
        traces,
        manifest,
    })
}

/// Writes `records.jsonl`, `traces.jsonl` and `manifest.json` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("records.jsonl");
    write_jsonl(&p, &out.records).map_err(io_err(&p))?;
    let p = dir.join("traces.jsonl");
    write_jsonl(&p, &out.traces).map_err(io_err(&p))?;
    let p = dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&out.manifest)? + "\n").map_err(io_err(&p))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub question: String,
    pub answer: String,
    pub method: MethodId,
    pub trace: MethodTrace,
}

/// One ad-hoc question through one method, without a correctness label.
pub fn score_question(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    question: &str,
    method: MethodId,
) -> Result<Scored, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.methods = vec![method];
    cfg.validate()?;
    cfg.validate_against(gateway, false)?;
    let engine = Engine {
        cfg: &cfg,
        gateway,
        templates,
        strategy: cfg.distractor_strategy.resolve(gateway.capabilities()),
    };
    let shared = Session::new(gateway);
    let el = engine.elicitor(&shared);
    let fail = |f: Failure| HarnessError::Method(f.message);
    let (answer, completion) = el.generate_answer(question).map_err(|e| fail(e.into()))?;
    let main = Main {
        id: "adhoc",
        question,
        answer: &answer,
        completion: &completion,
    };
    let s = Session::new(gateway);
    let mut trace = engine.short_method(method, &s, &main).map_err(fail)?;
    trace.calls = s.tally();
    Ok(Scored {
        question: question.to_string(),
        answer,
        method,
        trace,
    })
}
