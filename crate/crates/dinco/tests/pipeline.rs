mod common;

use common::*;
use std::collections::HashSet;
use std::sync::Arc;

use dinco::gateway::mock::MockNli;
use dinco::gateway::synthetic::{BiasRule, SyntheticProvider};
use dinco::gateway::{Gateway, NliProbs, ProviderCapabilities, RetryPolicy};
use dinco::harness::{self, report, run, DatasetInstance, MethodId, ReportOptions, RunConfig};
use dinco::metrics::ResampleOptions;
use dinco::Execution;

const BIAS: BiasRule = BiasRule::Uniform { lo: 1.0, hi: 3.0 };

fn records_jsonl(out: &harness::RunOutput) -> String {
    out.records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

#[test]
fn four_methods_on_ten_questions_give_forty_records() {
    use MethodId::*;
    let cfg = with_methods(
        synthetic_config(10, 6, BIAS, ProviderCapabilities::TOP_TOKENS),
        &[VcPtrue, Sc, Nvc, Dinco],
    );
    let (g, t, inst) = build(&cfg);
    let out = run(&cfg, &g, &t, &inst).unwrap();
    assert_eq!(out.records.len(), 40);
    assert!(out.manifest.dropped.is_empty());
    assert!(out.manifest.reconciled, "{:?}", out.manifest);
    assert!(
        out.manifest.budget_violations.is_empty(),
        "{:?}",
        out.manifest.budget_violations
    );
    for r in &out.records {
        assert!((0.0..=1.0).contains(&r.confidence), "{r:?}");
    }
    let per_method: HashSet<_> = out
        .records
        .iter()
        .map(|r| (r.id.clone(), r.method.clone()))
        .collect();
    assert_eq!(per_method.len(), 40);
}

#[test]
fn dinco_stays_within_budget_and_sc_uses_exactly_k_samples() {
    use MethodId::*;
    let mut cfg = with_methods(
        synthetic_config(8, 8, BIAS, ProviderCapabilities::TOP_TOKENS),
        &[Dinco, Sc],
    );
    // room for five pseudo-beam branches on single-token answers
    cfg.decoding.answer_top_alternatives = 6;
    let (g, t, inst) = build(&cfg);
    let out = run(&cfg, &g, &t, &inst).unwrap();
    for trace in &out.traces {
        assert_eq!(trace.shared_calls.generation, 1);
        let unit = &trace.units[0];
        let dinco = &unit.methods[&Dinco];
        assert_eq!(dinco.calls.generation, 10, "{}", trace.id);
        assert!(dinco.calls.generation + trace.shared_calls.generation <= 11);
        assert_eq!(dinco.distractors.as_ref().unwrap().len(), 5);
        assert_eq!(unit.methods[&Sc].calls.generation, 10);
        assert_eq!(unit.methods[&Sc].samples.as_ref().unwrap().len(), 10);
    }
    assert!(out.manifest.reconciled);
    // the samples DiNCo draws are the first five SC draws, so the memo
    // answers them
    assert!(out.manifest.gateway.memo_hits >= 5 * inst.len() as u64);
}

#[test]
fn gateway_counter_matches_budget_for_a_single_instance() {
    let mut cfg = with_methods(
        synthetic_config(3, 8, BIAS, ProviderCapabilities::TOP_TOKENS),
        &[MethodId::Dinco],
    );
    cfg.decoding.answer_top_alternatives = 6;
    let (g, t, inst) = build(&cfg);
    let before = g.stats().generation_requests;
    run(&cfg, &g, &t, &inst[..1]).unwrap();
    let gen_requests = g.stats().generation_requests - before;
    // VC requests go through the same endpoint: main + 5 distractors
    let validation = 1 + 5;
    assert_eq!(gen_requests, 11 + validation);
}

#[test]
fn refusals_are_dropped_from_every_method() {
    use MethodId::*;
    let cfg = with_methods(
        synthetic_config(6, 5, BIAS, ProviderCapabilities::FULL),
        &[VcPtrue, Msp, Nvc, Dinco],
    );
    let mut spec = cfg.synthetic_spec().unwrap().unwrap();
    spec.questions[2].refuse = true;
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let mut cfg = cfg;
    if let Some(harness::ProviderSettings::Synthetic { spec, generate, .. }) = &mut cfg.provider {
        *spec = Some(spec_path);
        *generate = None;
    }
    let (g, t, inst) = build(&cfg);
    let out = run(&cfg, &g, &t, &inst).unwrap();
    assert_eq!(out.manifest.dropped.len(), 1);
    let d = &out.manifest.dropped[0];
    assert_eq!(d.id, "q2");
    assert!(d.refusal);
    assert!(out.records.iter().all(|r| r.id != "q2"));
    assert_eq!(out.records.len(), 4 * 5);
}

#[test]
fn unknown_questions_count_as_refusals() {
    let cfg = with_methods(
        synthetic_config(4, 5, BIAS, ProviderCapabilities::FULL),
        &[MethodId::VcPtrue],
    );
    let (g, t, mut inst) = build(&cfg);
    // the synthetic model answers questions outside its spec with nothing
    inst.push(DatasetInstance::short_form("unknown", "Who?", "nobody"));
    let out = run(&cfg, &g, &t, &inst).unwrap();
    assert_eq!(out.manifest.dropped.len(), 1);
    assert!(out.manifest.dropped[0].refusal);
    assert_eq!(out.records.len(), 4);
}

#[test]
fn other_errors_fail_the_run_past_the_threshold() {
    let mut cfg = with_methods(
        synthetic_config(4, 5, BIAS, ProviderCapabilities::FULL),
        &[MethodId::Sc],
    );
    let spec = cfg.synthetic_spec().unwrap().unwrap();
    let broken = spec.questions[0].question.clone();
    let gateway = || {
        let nli = MockNli::exact_match().with_rule({
            let broken = broken.clone();
            move |r| {
                (r.context.as_deref() == Some(broken.as_str())).then_some(NliProbs {
                    entail: 0.5,
                    contradict: 0.4,
                    neutral: 0.2,
                })
            }
        });
        let p = SyntheticProvider::new(spec.clone(), 3).unwrap();
        Gateway::new(Arc::new(p))
            .with_nli(Arc::new(nli))
            .with_retry(RetryPolicy::immediate(1))
    };
    let t = cfg.templates().unwrap();
    let inst = harness::synthetic_instances(&spec);
    let e = run(&cfg, &gateway(), &t, &inst).unwrap_err();
    assert!(
        matches!(
            e,
            harness::HarnessError::TooManyErrors {
                failed: 1,
                total: 4,
                ..
            }
        ),
        "{e}"
    );

    cfg.max_error_fraction = 0.25;
    let out = run(&cfg, &gateway(), &t, &inst).unwrap();
    let d = &out.manifest.dropped[0];
    assert_eq!(
        (d.id.as_str(), d.refusal, d.method),
        ("q0", false, Some(MethodId::Sc))
    );
    assert_eq!(out.records.len(), 3);
}

#[test]
fn capability_checks_happen_before_any_call() {
    let cfg = with_methods(
        synthetic_config(2, 4, BIAS, ProviderCapabilities::BLACK_BOX),
        &[MethodId::Msp],
    );
    let (g, t, inst) = build(&cfg);
    let e = run(&cfg, &g, &t, &inst).unwrap_err();
    assert!(e.to_string().contains("logprobs"), "{e}");
    assert_eq!(g.stats().generation_requests, 0);
}

#[test]
fn black_box_methods_run_without_logprobs() {
    use MethodId::*;
    let cfg = with_methods(
        synthetic_config(12, 6, BIAS, ProviderCapabilities::BLACK_BOX),
        &[VcNum, Kvc, Sc, NvcBlackbox, DincoBlackbox],
    );
    let (g, t, inst) = build(&cfg);
    let out = run(&cfg, &g, &t, &inst).unwrap();
    assert_eq!(out.records.len(), 5 * 12);
    assert!(out.manifest.budget_violations.is_empty());
    for trace in &out.traces {
        let u = &trace.units[0];
        assert_eq!(u.methods[&Kvc].kvc_matched, Some(true));
        let bb = &u.methods[&NvcBlackbox];
        assert_eq!(bb.calls.generation, 1);
        assert!(bb.distractors.as_ref().unwrap().len() <= 5);
    }
}

#[test]
fn runs_are_byte_identical_across_repeats_and_execution_modes() {
    use MethodId::*;
    let base = with_methods(
        synthetic_config(30, 6, BIAS, ProviderCapabilities::FULL),
        &[VcPtrue, VcNum, Kvc, Msp, Sc, ScVc, Nvc, Dinco],
    );
    let opts = ReportOptions {
        resample: ResampleOptions {
            n_iter: 300,
            ..ResampleOptions::default()
        },
        ..ReportOptions::default()
    };
    let go = |exec: Execution| {
        let cfg = RunConfig {
            execution: exec,
            ..base.clone()
        };
        let (g, t, inst) = build(&cfg);
        let out = run(&cfg, &g, &t, &inst).unwrap();
        let rep = report(&out.records, &opts).unwrap();
        (records_jsonl(&out), serde_json::to_string(&rep).unwrap())
    };
    let a = go(Execution::Parallel);
    let b = go(Execution::Parallel);
    let c = go(Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn long_form_records_are_per_claim() {
    use MethodId::*;
    let cfg = RunConfig {
        methods: vec![VcPtrue, VcNum, Sc, Nvc, Dinco],
        budget: 4,
        nvc_distractors: 2,
        dinco: harness::DincoSplit {
            sc_samples: 2,
            n_distractors: 2,
        },
        ..RunConfig::default()
    };
    let g = biography_gateway();
    let t = cfg.templates().unwrap();
    let out = run(&cfg, &g, &t, &biography_instances()).unwrap();
    assert_eq!(out.records.len(), 5 * 3);
    let ids: HashSet<_> = out.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, HashSet::from(["ada#0", "ada#1", "ada2#0"]));
    let ada = &out.traces[0];
    assert_eq!(ada.answer, "Ada Roux was a chemist. She was born in Lyon.");
    assert_eq!(out.traces[1].shared_calls.generation, 0);
    let lyon = &ada.units[0].methods;
    assert!((lyon[&VcPtrue].confidence - 0.8).abs() < 1e-12);
    assert!((lyon[&VcNum].confidence - 0.8).abs() < 1e-12);
    let sc = &lyon[&Sc];
    assert_eq!(sc.support.as_ref().unwrap().len(), 5);
    let paris = &ada.units[1].methods;
    assert!(paris[&Sc].confidence < sc.confidence);
    let nvc = lyon[&Nvc].nvc.unwrap();
    assert!(nvc.beta >= 1.0 && nvc.f_nvc <= nvc.f_vc_main);
    assert!(out.manifest.reconciled);
    assert!(
        out.manifest.budget_violations.is_empty(),
        "{:?}",
        out.manifest.budget_violations
    );
}

#[test]
fn long_form_rejects_short_form_only_methods() {
    let cfg = RunConfig {
        methods: vec![MethodId::Kvc],
        ..RunConfig::default()
    };
    let g = biography_gateway();
    let t = cfg.templates().unwrap();
    assert!(run(&cfg, &g, &t, &biography_instances()).is_err());
}

#[test]
fn outputs_are_written() {
    let cfg = with_methods(
        synthetic_config(5, 4, BIAS, ProviderCapabilities::FULL),
        &[MethodId::VcPtrue, MethodId::Nvc],
    );
    let (g, t, inst) = build(&cfg);
    let out = run(&cfg, &g, &t, &inst).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::write_run(dir.path(), &out).unwrap();
    let rep = report(&out.records, &ReportOptions::default()).unwrap();
    harness::write_report(dir.path(), &rep).unwrap();
    for f in [
        "records.jsonl",
        "traces.jsonl",
        "manifest.json",
        "report.json",
        "report.csv",
        "reliability_nvc.svg",
        "roc_vc_ptrue.svg",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys.len(), 4);
    assert!(first["correct"].is_u64());
}

#[test]
fn score_runs_one_method_on_one_question() {
    let cfg = synthetic_config(3, 4, BIAS, ProviderCapabilities::FULL);
    let (g, t, inst) = build(&cfg);
    let q = match &inst[0].body {
        harness::InstanceBody::ShortForm { question, .. } => question.clone(),
        _ => unreachable!(),
    };
    let s = harness::score_question(&cfg, &g, &t, &q, MethodId::Dinco).unwrap();
    assert!((0.0..=1.0).contains(&s.trace.confidence));
    assert!(s.trace.nvc.is_some() && s.trace.sc.is_some());
}
