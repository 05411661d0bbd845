use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dinco::gateway::synthetic::{BiasRule, SyntheticModelSpec};
use dinco::harness::{self, MethodId, ReportOptions, RunConfig};
use dinco::metrics::CalibrationRecord;
use dinco::Execution;

#[derive(Parser)]
#[command(
    name = "dinco",
    version,
    about = "Confidence estimation for LLM answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods over a dataset and write records, traces
    /// and a metric report.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Overrides the config's dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Only the first N instances.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        no_report: bool,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Recompute metrics and significance tests from a records file.
    Report {
        records: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Compare normalization totals on correct and incorrect answers.
    AnalyzeBeta {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value = "nvc")]
        method: MethodId,
        /// Writes the per-question points as JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score one question and print the trace.
    Score {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        question: String,
        #[arg(short, long, default_value = "dinco")]
        method: MethodId,
    },
    /// Write a synthetic model spec and its matching dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        questions: usize,
        #[arg(long, default_value_t = 6)]
        answers: usize,
        /// `uniform:LO,HI` or `by-correctness:CLO,CHI,ILO,IHI`.
        #[arg(long, default_value = "uniform:1,3", value_parser = parse_bias)]
        bias: BiasRule,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Resampling iterations for the ECE and Brier tests.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    report_seed: u64,
}

impl ReportArgs {
    fn options(&self, execution: Execution) -> ReportOptions {
        let mut o = ReportOptions {
            n_bins: self.bins,
            ..ReportOptions::default()
        };
        o.resample.n_iter = self.iters;
        o.resample.alpha = self.alpha;
        o.resample.seed = self.report_seed;
        o.resample.n_bins = self.bins;
        o.resample.execution = execution;
        o
    }
}

fn parse_bias(s: &str) -> Result<BiasRule, String> {
    let (kind, nums) = s.split_once(':').ok_or("expected KIND:NUMBERS")?;
    let v: Vec<f64> = nums
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match (kind, v.as_slice()) {
        ("uniform", &[lo, hi]) => Ok(BiasRule::Uniform { lo, hi }),
        ("by-correctness", &[a, b, c, d]) => Ok(BiasRule::ByCorrectness {
            correct: (a, b),
            incorrect: (c, d),
        }),
        _ => Err(format!("cannot read bias rule {s:?}")),
    }
}

fn read_records(path: &Path) -> Result<Vec<CalibrationRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn print_report(report: &harness::MetricReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<12} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "method", "n", "acc", "ece", "brier", "auc", "delta0"
    );
    for m in &report.methods {
        println!(
            "{:<12} {:>6} {:>8.4} {:>8} {:>8} {:>8} {:>8}",
            m.method,
            m.n,
            m.accuracy,
            fmt(m.ece.get()),
            fmt(m.brier.get()),
            fmt(m.auc.get()),
            fmt(m.delta.first().and_then(|d| d.value.get()))
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            dataset,
            out,
            limit,
            sequential,
            workers,
            no_report,
            report,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if sequential {
                cfg.execution = Execution::Sequential;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            let templates = cfg.templates()?;
            let gateway = cfg.build_gateway(&templates)?;
            let mut instances = cfg.instances()?;
            if let Some(n) = limit {
                instances.truncate(n);
            }
            eprintln!(
                "running {} methods on {} instances",
                cfg.methods.len(),
                instances.len()
            );
            let output = harness::run(&cfg, &gateway, &templates, &instances)?;
            harness::write_run(&cfg.output_dir, &output)?;
            let m = &output.manifest;
            eprintln!(
                "{} records, {} dropped, {} generation requests, ledger {}",
                output.records.len(),
                m.dropped.len(),
                m.gateway.generation_requests,
                if m.reconciled {
                    "reconciled"
                } else {
                    "NOT reconciled"
                }
            );
            if !no_report && !output.records.is_empty() {
                let r = harness::report(&output.records, &report.options(cfg.execution))?;
                harness::write_report(&cfg.output_dir, &r)?;
                print_report(&r);
            }
            eprintln!("wrote {}", cfg.output_dir.display());
        }
        Command::Report {
            records,
            out,
            report,
        } => {
            let rs = read_records(&records)?;
            if rs.is_empty() {
                bail!("{} has no records", records.display());
            }
            let r = harness::report(&rs, &report.options(Execution::default()))?;
            harness::write_report(&out, &r)?;
            print_report(&r);
        }
        Command::AnalyzeBeta {
            config,
            method,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let templates = cfg.templates()?;
            let gateway = cfg.build_gateway(&templates)?;
            let instances = cfg.instances()?;
            let a =
                harness::total_confidence_analysis(&cfg, &gateway, &templates, &instances, method)?;
            for (name, g) in [("correct", &a.correct), ("incorrect", &a.incorrect)] {
                let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{name:<10} n={:<5} mean={} median={}",
                    g.n,
                    show(g.mean),
                    show(g.median)
                );
            }
            if !a.dropped.is_empty() {
                eprintln!("{} instances dropped", a.dropped.len());
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&a)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Score {
            config,
            question,
            method,
        } => {
            let cfg = RunConfig::load(&config)?;
            let templates = cfg.templates()?;
            let gateway = cfg.build_gateway(&templates)?;
            let scored = harness::score_question(&cfg, &gateway, &templates, &question, method)?;
            println!("{}", serde_json::to_string_pretty(&scored)?);
        }
        Command::Synth {
            questions,
            answers,
            bias,
            seed,
            out,
        } => {
            let spec = SyntheticModelSpec::generate(questions, answers, bias, seed);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
            harness::write_jsonl(
                &out.join("dataset.jsonl"),
                &harness::synthetic_instances(&spec),
            )?;
            eprintln!("wrote {questions} questions to {}", out.display());
        }
    }
    Ok(())
}
