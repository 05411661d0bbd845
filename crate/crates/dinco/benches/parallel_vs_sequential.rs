use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dinco::gateway::synthetic::BiasRule;
use dinco::gateway::ProviderCapabilities;
use dinco::harness::{
    run, synthetic_instances, MethodId, NliSettings, ProviderSettings, RunConfig, SyntheticGenerate,
};
use dinco::metrics::{sig_brier, sig_ece, CalibrationRecord, ResampleOptions};
use dinco::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn records(seed: u64, n: usize) -> Vec<CalibrationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c: f64 = rng.random();
            CalibrationRecord::new(format!("{i}"), "m", c, rng.random_bool(c))
        })
        .collect()
}

fn significance(c: &mut Criterion) {
    let a = records(1, 1000);
    let b = records(2, 1000);
    let mut g = c.benchmark_group("significance_1000x1000");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = ResampleOptions {
            n_iter: 1000,
            execution,
            ..ResampleOptions::default()
        };
        g.bench_function(BenchmarkId::new("sig_ece", name), |bch| {
            bch.iter(|| sig_ece(&a, &b, &opts).unwrap())
        });
        g.bench_function(BenchmarkId::new("sig_brier", name), |bch| {
            bch.iter(|| sig_brier(&a, &b, &opts).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut cfg = RunConfig {
        methods: vec![
            MethodId::VcPtrue,
            MethodId::Sc,
            MethodId::Nvc,
            MethodId::Dinco,
        ],
        provider: Some(ProviderSettings::Synthetic {
            spec: None,
            generate: Some(SyntheticGenerate {
                n_questions: 200,
                n_answers: 6,
                bias: BiasRule::Uniform { lo: 1.0, hi: 3.0 },
                seed: 0,
            }),
            seed: 0,
            capabilities: Some(ProviderCapabilities::FULL),
        }),
        nli: NliSettings::ExactMatch,
        ..RunConfig::default()
    };
    let templates = cfg.templates().unwrap();
    let instances = synthetic_instances(&cfg.synthetic_spec().unwrap().unwrap());
    let mut g = c.benchmark_group("run_200_questions");
    g.sample_size(10);
    for (name, execution) in MODES {
        cfg.execution = execution;
        g.bench_function(name, |bch| {
            // fresh gateway each time so the memo does not absorb the work
            bch.iter(|| {
                run(
                    &cfg,
                    &cfg.build_gateway(&templates).unwrap(),
                    &templates,
                    &instances,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, significance, pipeline);
criterion_main!(benches);
