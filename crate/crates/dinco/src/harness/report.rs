//! Metrics per method, significance against the best method per metric,
//! and the files that carry them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, svg, HarnessError};
use crate::metrics::{
    self, by_method, CalibrationRecord, CurveData, MetricError, ResampleOptions,
    SignificanceResult, DEFAULT_BINS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub n_bins: usize,
    pub epsilons: Vec<f64>,
    pub resample: ResampleOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            n_bins: DEFAULT_BINS,
            epsilons: vec![0.0, 0.001],
            resample: ResampleOptions::default(),
        }
    }
}

/// A metric value, or why it could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Ok(f64),
    NotAvailable { na: String },
}

impl Value {
    fn of(r: Result<f64, MetricError>) -> Self {
        match r {
            Ok(v) => Value::Ok(v),
            Err(e) => Value::NotAvailable { na: e.to_string() },
        }
    }

    pub fn get(&self) -> Option<f64> {
        match self {
            Value::Ok(v) => Some(*v),
            Value::NotAvailable { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaValue {
    pub epsilon: f64,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub passages: usize,
    pub pearson: Value,
    pub spearman: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub n: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub ece: Value,
    pub brier: Value,
    pub auc: Value,
    pub delta: Vec<DeltaValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<Correlations>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurveData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub method: String,
    pub best: String,
    pub result: Result<SignificanceResult, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub options: ReportOptions,
    pub methods: Vec<MethodMetrics>,
    /// Best method per metric: lowest ECE and Brier, highest AUC.
    pub best: BTreeMap<String, String>,
    pub significance: Vec<Comparison>,
}

impl MetricReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Claim ids of the form `passage#k` grouped by passage: per-passage mean
/// confidence against the fraction of correct claims.
fn passage_correlations(records: &[CalibrationRecord]) -> Option<Correlations> {
    let mut groups: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let (passage, _) = r.id.rsplit_once('#')?;
        let g = groups.entry(passage).or_default();
        g.0 += r.confidence;
        g.1 += f64::from(u8::from(r.correct));
        g.2 += 1;
    }
    let conf: Vec<f64> = groups.values().map(|g| g.0 / g.2 as f64).collect();
    let fact: Vec<f64> = groups.values().map(|g| g.1 / g.2 as f64).collect();
    let (p, s) = match metrics::passage_correlations(&conf, &fact) {
        Ok((p, s)) => (Value::Ok(p), Value::Ok(s)),
        Err(e) => {
            let na = Value::NotAvailable { na: e.to_string() };
            (na.clone(), na)
        }
    };
    Some(Correlations {
        passages: groups.len(),
        pearson: p,
        spearman: s,
    })
}

fn method_metrics(method: &str, rs: &[CalibrationRecord], opts: &ReportOptions) -> MethodMetrics {
    let n = rs.len();
    let conf: Vec<f64> = rs.iter().map(|r| r.confidence).collect();
    MethodMetrics {
        method: method.to_string(),
        n,
        accuracy: rs.iter().filter(|r| r.correct).count() as f64 / n as f64,
        mean_confidence: conf.iter().sum::<f64>() / n as f64,
        ece: Value::of(metrics::ece(rs, opts.n_bins)),
        brier: Value::of(metrics::brier(rs)),
        auc: Value::of(metrics::auc(rs)),
        delta: opts
            .epsilons
            .iter()
            .map(|&epsilon| DeltaValue {
                epsilon,
                value: Value::of(metrics::delta_saturation(&conf, epsilon)),
            })
            .collect(),
        passage: passage_correlations(rs),
        curves: metrics::curve_data(rs, opts.n_bins).ok(),
    }
}

/// `b` reordered to follow the ids of `a`.
fn align(
    a: &[CalibrationRecord],
    b: &[CalibrationRecord],
) -> Result<Vec<CalibrationRecord>, String> {
    if a.len() != b.len() {
        return Err(format!("{} records vs {}", a.len(), b.len()));
    }
    let index: HashMap<&str, &CalibrationRecord> = b.iter().map(|r| (r.id.as_str(), r)).collect();
    a.iter()
        .map(|r| {
            index
                .get(r.id.as_str())
                .map(|x| (*x).clone())
                .ok_or_else(|| format!("id {:?} missing from the best method", r.id))
        })
        .collect()
}

fn pick_best(
    methods: &[MethodMetrics],
    value: impl Fn(&MethodMetrics) -> Option<f64>,
    lower: bool,
) -> Option<String> {
    let mut best: Option<(&str, f64)> = None;
    for m in methods {
        if let Some(v) = value(m) {
            let better = match best {
                None => true,
                Some((_, b)) if lower => v < b,
                Some((_, b)) => v > b,
            };
            if better {
                best = Some((&m.method, v));
            }
        }
    }
    best.map(|(m, _)| m.to_string())
}

/// Metrics per method plus a significance table testing whether each method
/// is worse than the best on ECE, Brier and AUC. Degenerate inputs produce
/// N/A entries rather than errors.
pub fn report(
    records: &[CalibrationRecord],
    opts: &ReportOptions,
) -> Result<MetricReport, HarnessError> {
    if records.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let groups = by_method(records);
    let methods: Vec<MethodMetrics> = groups
        .iter()
        .map(|(m, rs)| method_metrics(m, rs, opts))
        .collect();
    let mut best = BTreeMap::new();
    let picks = [
        ("ece", pick_best(&methods, |m| m.ece.get(), true)),
        ("brier", pick_best(&methods, |m| m.brier.get(), true)),
        ("auc", pick_best(&methods, |m| m.auc.get(), false)),
    ];
    let mut significance = Vec::new();
    for (metric, winner) in picks {
        let Some(winner) = winner else { continue };
        for (name, rs) in &groups {
            if *name == winner {
                continue;
            }
            let result = align(rs, &groups[&winner]).and_then(|b| {
                let r = match metric {
                    "ece" => metrics::sig_ece(rs, &b, &opts.resample),
                    "brier" => metrics::sig_brier(rs, &b, &opts.resample),
                    _ => metrics::sig_auc(rs, &b, opts.resample.alpha),
                };
                r.map_err(|e| e.to_string())
            });
            significance.push(Comparison {
                metric: metric.to_string(),
                method: name.clone(),
                best: winner.clone(),
                result,
            });
        }
        best.insert(metric.to_string(), winner);
    }
    Ok(MetricReport {
        options: opts.clone(),
        methods,
        best,
        significance,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn to_csv(report: &MetricReport) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Method(format!("csv: {e}"));
    let mut header = vec![
        "method".to_string(),
        "n".into(),
        "accuracy".into(),
        "ece".into(),
        "brier".into(),
        "auc".into(),
    ];
    header.extend(report.options.epsilons.iter().map(|e| format!("delta_{e}")));
    header.extend(["pearson".to_string(), "spearman".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for m in &report.methods {
        let mut row = vec![
            m.method.clone(),
            m.n.to_string(),
            m.accuracy.to_string(),
            cell(m.ece.get()),
            cell(m.brier.get()),
            cell(m.auc.get()),
        ];
        row.extend(m.delta.iter().map(|d| cell(d.value.get())));
        let corr = m.passage.as_ref();
        row.push(cell(corr.and_then(|c| c.pearson.get())));
        row.push(cell(corr.and_then(|c| c.spearman.get())));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Method(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Writes `report.json`, `report.csv` and per-method reliability and ROC
/// SVGs into `dir`.
pub fn write_report(dir: &Path, report: &MetricReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(report)? + "\n").map_err(io_err(&p))?;
    let p = dir.join("report.csv");
    std::fs::write(&p, to_csv(report)?).map_err(io_err(&p))?;
    for m in &report.methods {
        if let Some(c) = &m.curves {
            let p = dir.join(format!("reliability_{}.svg", m.method));
            std::fs::write(&p, svg::reliability(&m.method, &c.bins)).map_err(io_err(&p))?;
            let p = dir.join(format!("roc_{}.svg", m.method));
            std::fs::write(&p, svg::roc(&m.method, &c.roc, m.auc.get())).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Verdict;

    fn recs(method: &str, conf: &[f64], correct: &[bool]) -> Vec<CalibrationRecord> {
        conf.iter()
            .zip(correct)
            .enumerate()
            .map(|(i, (&c, &y))| CalibrationRecord::new(format!("q{i}"), method, c, y))
            .collect()
    }

    fn quick() -> ReportOptions {
        ReportOptions {
            resample: ResampleOptions {
                n_iter: 200,
                ..ResampleOptions::default()
            },
            ..ReportOptions::default()
        }
    }

    #[test]
    fn single_method_has_no_comparisons() {
        let r = report(
            &recs("vc_ptrue", &[0.9, 0.2, 0.6], &[true, false, true]),
            &quick(),
        )
        .unwrap();
        assert!(r.significance.is_empty());
        assert_eq!(r.best["ece"], "vc_ptrue");
    }

    #[test]
    fn identical_methods_are_not_significant() {
        let conf = [0.9, 0.2, 0.6, 0.4, 0.8, 0.3];
        let y = [true, false, true, false, true, true];
        let mut all = recs("a", &conf, &y);
        all.extend(recs("b", &conf, &y));
        let r = report(&all, &quick()).unwrap();
        assert_eq!(r.significance.len(), 3);
        for c in &r.significance {
            assert_eq!(
                c.result.as_ref().unwrap().verdict,
                Verdict::NotSignificant,
                "{c:?}"
            );
        }
    }

    #[test]
    fn degenerate_inputs_become_na() {
        let r = report(&recs("x", &[0.5], &[true]), &quick()).unwrap();
        let m = r.method("x").unwrap();
        assert!(m.auc.get().is_none());
        assert!(m.delta[0].value.get().is_none());
        assert!(m.ece.get().is_some());
        let csv = to_csv(&r).unwrap();
        assert!(csv.lines().nth(1).unwrap().contains("NA"));
    }

    #[test]
    fn unordered_pairs_are_aligned_by_id() {
        let a = recs("a", &[0.9, 0.1, 0.8, 0.3], &[true, false, true, false]);
        let mut b = recs("b", &[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]);
        b.reverse();
        let mut all = a;
        all.extend(b);
        let r = report(&all, &quick()).unwrap();
        assert_eq!(r.best["auc"], "a");
        assert!(r.significance.iter().all(|c| c.result.is_ok()));
    }

    #[test]
    fn passage_correlations_use_claim_ids() {
        let mut rs = Vec::new();
        for (p, (conf, frac)) in [(0.9, 3), (0.5, 2), (0.2, 0)].into_iter().enumerate() {
            for k in 0..3 {
                rs.push(CalibrationRecord::new(
                    format!("p{p}#{k}"),
                    "dinco",
                    conf,
                    k < frac,
                ));
            }
        }
        let r = report(&rs, &quick()).unwrap();
        let c = r.method("dinco").unwrap().passage.as_ref().unwrap();
        assert_eq!(c.passages, 3);
        assert!((c.spearman.get().unwrap() - 1.0).abs() < 1e-12);
    }
}
