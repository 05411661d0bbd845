//! Calibration and discrimination metrics over confidence records.

mod significance;

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use significance::{
    sig_auc, sig_brier, sig_ece, CiMethod, ResampleOptions, SignificanceResult, Verdict,
};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no records")]
    Empty,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("labels are all {0}; need both classes")]
    SingleClass(&'static str),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("records are not paired: position {index} has ids {a:?} and {b:?}")]
    Unpaired { index: usize, a: String, b: String },
    #[error("confidence {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0}")]
    InvalidOption(String),
}

/// One claim's confidence under one method and whether the claim is true.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: String,
    pub method: String,
    pub confidence: f64,
    #[serde(serialize_with = "bit_out", deserialize_with = "bit_in")]
    pub correct: bool,
}

impl CalibrationRecord {
    pub fn new(
        id: impl Into<String>,
        method: impl Into<String>,
        confidence: f64,
        correct: bool,
    ) -> Self {
        CalibrationRecord {
            id: id.into(),
            method: method.into(),
            confidence,
            correct,
        }
    }
}

fn bit_out<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn bit_in<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Bit {
        B(bool),
        N(u8),
    }
    match Bit::deserialize(d)? {
        Bit::B(b) => Ok(b),
        Bit::N(0) => Ok(false),
        Bit::N(1) => Ok(true),
        Bit::N(n) => Err(serde::de::Error::custom(format!(
            "correct must be 0 or 1, got {n}"
        ))),
    }
}

/// Records grouped by method, each group in input order.
pub fn by_method(records: &[CalibrationRecord]) -> BTreeMap<String, Vec<CalibrationRecord>> {
    let mut out: BTreeMap<String, Vec<CalibrationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.method.clone()).or_default().push(r.clone());
    }
    out
}

fn check(records: &[CalibrationRecord]) -> Result<(), MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    match records
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.confidence))
    {
        Some(r) => Err(MetricError::OutOfRange(r.confidence)),
        None => Ok(()),
    }
}

/// Bin of `f` among `n` equal-width bins `((k-1)/n, k/n]`, 0-based, with 0
/// in the first bin. Edges are compared exactly so 0.3 lands in (0.2, 0.3].
pub fn bin_index(f: f64, n: usize) -> usize {
    let nf = n as f64;
    let mut k = ((f * nf).ceil() as usize).clamp(1, n);
    while k > 1 && f <= (k - 1) as f64 / nf {
        k -= 1;
    }
    while k < n && f > k as f64 / nf {
        k += 1;
    }
    k - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// None for an empty bin.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn bin_stats(
    records: &[CalibrationRecord],
    n_bins: usize,
) -> Result<Vec<BinStat>, MetricError> {
    check(records)?;
    if n_bins == 0 {
        return Err(MetricError::InvalidOption("n_bins must be positive".into()));
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for r in records {
        let s = &mut sums[bin_index(r.confidence, n_bins)];
        s.0 += 1;
        s.1 += r.confidence;
        s.2 += usize::from(r.correct);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(k, (count, conf, hits))| BinStat {
            index: k,
            lo: k as f64 / n_bins as f64,
            hi: (k + 1) as f64 / n_bins as f64,
            count,
            mean_confidence: (count > 0).then(|| conf / count as f64),
            accuracy: (count > 0).then(|| hits as f64 / count as f64),
        })
        .collect())
}

/// Bin-size-weighted mean gap between accuracy and confidence.
pub fn ece(records: &[CalibrationRecord], n_bins: usize) -> Result<f64, MetricError> {
    let bins = bin_stats(records, n_bins)?;
    let n = records.len() as f64;
    Ok(bins
        .iter()
        .filter_map(|b| Some(b.count as f64 / n * (b.accuracy? - b.mean_confidence?).abs()))
        .sum())
}

pub fn brier(records: &[CalibrationRecord]) -> Result<f64, MetricError> {
    check(records)?;
    Ok(records
        .iter()
        .map(|r| (f64::from(u8::from(r.correct)) - r.confidence).powi(2))
        .sum::<f64>()
        / records.len() as f64)
}

/// Integer pairwise counts behind the AUC: `2·wins + ties` over all
/// positive-negative pairs, and the number of such pairs.
pub(crate) fn auc_counts(conf: &[f64], correct: &[bool]) -> (u128, u128, u128) {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]));
    let (mut numer, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && conf[order[j]] == conf[order[i]] {
            if correct[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        numer += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    let p = correct.iter().filter(|&&c| c).count() as u128;
    let n = correct.len() as u128 - p;
    (numer, p, n)
}

fn split(records: &[CalibrationRecord]) -> (Vec<f64>, Vec<bool>) {
    records.iter().map(|r| (r.confidence, r.correct)).unzip()
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auc(records: &[CalibrationRecord]) -> Result<f64, MetricError> {
    check(records)?;
    let (conf, correct) = split(records);
    let (numer, p, n) = auc_counts(&conf, &correct);
    if p == 0 {
        return Err(MetricError::SingleClass("incorrect"));
    }
    if n == 0 {
        return Err(MetricError::SingleClass("correct"));
    }
    Ok(numer as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold (predict positive when confidence ≥ threshold); None
    /// for the (0, 0) origin.
    pub threshold: Option<f64>,
}

/// ROC curve through every distinct confidence threshold, from (0,0) to (1,1).
pub fn roc_points(records: &[CalibrationRecord]) -> Result<Vec<RocPoint>, MetricError> {
    auc(records)?;
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.confidence, r.correct)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let p = sorted.iter().filter(|x| x.1).count() as f64;
    let n = sorted.len() as f64 - p;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: Some(t),
        });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub bins: Vec<BinStat>,
    pub roc: Vec<RocPoint>,
}

pub fn curve_data(records: &[CalibrationRecord], n_bins: usize) -> Result<CurveData, MetricError> {
    Ok(CurveData {
        bins: bin_stats(records, n_bins)?,
        roc: roc_points(records)?,
    })
}

/// Fraction of unordered pairs whose confidences differ by more than `epsilon`.
pub fn delta_saturation(confidences: &[f64], epsilon: f64) -> Result<f64, MetricError> {
    let n = confidences.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    // for each i, partners j > i with sorted[j] - sorted[i] > epsilon form a
    // suffix, and its start only moves right as i grows
    let mut far = 0u64;
    let mut j = 0;
    for i in 0..n {
        j = j.max(i + 1);
        while j < n && sorted[j] - sorted[i] <= epsilon {
            j += 1;
        }
        far += (n - j) as u64;
    }
    Ok(far as f64 / (n as u64 * (n as u64 - 1) / 2) as f64)
}

fn paired_check(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricError::TooFew {
            needed: 3,
            got: x.len(),
        });
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    paired_check(x, y)?;
    pearson_unchecked(x, y)
}

/// 1-based ranks with tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    paired_check(x, y)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

/// Pearson and Spearman correlation between per-passage mean confidence and
/// per-passage factual precision.
pub fn passage_correlations(
    mean_confidence: &[f64],
    factscore: &[f64],
) -> Result<(f64, f64), MetricError> {
    Ok((
        pearson(mean_confidence, factscore)?,
        spearman(mean_confidence, factscore)?,
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn recs(conf: &[f64], correct: &[u8]) -> Vec<CalibrationRecord> {
        conf.iter()
            .zip(correct)
            .enumerate()
            .map(|(i, (&f, &v))| CalibrationRecord::new(format!("r{i}"), "m", f, v == 1))
            .collect()
    }

    fn brute_auc(r: &[CalibrationRecord]) -> f64 {
        let (mut num, mut pairs) = (0u128, 0u128);
        for p in r.iter().filter(|x| x.correct) {
            for n in r.iter().filter(|x| !x.correct) {
                num += u128::from(p.confidence >= n.confidence)
                    + u128::from(p.confidence > n.confidence);
                pairs += 2;
            }
        }
        num as f64 / pairs as f64
    }

    #[test]
    fn bin_edges_are_exact() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000000000000004, 10), 3);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(1.0, 10), 9);
        for k in 1..=10 {
            assert_eq!(bin_index(k as f64 / 10.0, 10), k - 1);
        }
    }

    #[test]
    fn ece_examples() {
        let v = ece(&recs(&[0.95, 0.95, 0.45], &[1, 0, 1]), 10).unwrap();
        let expected = (2.0 / 3.0) * (0.5f64 - 0.95).abs() + (1.0 / 3.0) * (1.0f64 - 0.45).abs();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.4833).abs() < 1e-4);
        assert_eq!(ece(&recs(&[1.0, 1.0], &[1, 1]), 10).unwrap(), 0.0);
        assert_eq!(ece(&recs(&[0.5; 4], &[1, 0, 1, 0]), 10).unwrap(), 0.0);
        assert_eq!(ece(&[], 10), Err(MetricError::Empty));
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&recs(&[1.0, 0.0], &[1, 1])).unwrap(), 0.5);
        assert_eq!(brier(&recs(&[1.0, 0.0], &[1, 0])).unwrap(), 0.0);
        assert!((brier(&recs(&[0.7], &[0])).unwrap() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&recs(&[0.9, 0.9], &[1, 0])).unwrap(), 0.5);
        assert_eq!(
            auc(&recs(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(),
            1.0
        );
        assert_eq!(auc(&recs(&[0.8, 0.4, 0.6], &[1, 1, 0])).unwrap(), 0.5);
        assert_eq!(
            auc(&recs(&[0.8, 0.4], &[1, 1])),
            Err(MetricError::SingleClass("correct"))
        );
    }

    #[test]
    fn delta_examples() {
        assert!((delta_saturation(&[0.5, 0.5, 0.7], 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(delta_saturation(&[0.4; 5], 0.0).unwrap(), 0.0);
        assert_eq!(delta_saturation(&[0.1, 0.5, 0.9], 0.2).unwrap(), 1.0);
        assert!(delta_saturation(&[0.1], 0.0).is_err());
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - 0.9934).abs() < 1e-4);
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &x[..3]),
            Err(MetricError::ZeroVariance("x"))
        );
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn roc_examples() {
        let perfect = roc_points(&recs(&[1.0, 0.0], &[1, 0])).unwrap();
        let xy: Vec<(f64, f64)> = perfect.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let tied = roc_points(&recs(&[0.4; 4], &[1, 0, 1, 0])).unwrap();
        let xy: Vec<(f64, f64)> = tied.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, [(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn records_serialize_correct_as_bit() {
        let r = CalibrationRecord::new("q1", "dinco", 0.25, true);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"id":"q1","method":"dinco","confidence":0.25,"correct":1}"#
        );
        let back: CalibrationRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let b: CalibrationRecord =
            serde_json::from_str(r#"{"id":"q","method":"m","confidence":0.5,"correct":false}"#)
                .unwrap();
        assert!(!b.correct);
    }

    fn record_strategy(max: usize) -> impl Strategy<Value = Vec<CalibrationRecord>> {
        proptest::collection::vec((0u8..=20, any::<bool>()), 2..max).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (q, c))| CalibrationRecord::new(format!("r{i}"), "m", q as f64 / 20.0, c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(r in record_strategy(500)) {
            let has_both = r.iter().any(|x| x.correct) && r.iter().any(|x| !x.correct);
            prop_assume!(has_both);
            prop_assert_eq!(auc(&r).unwrap(), brute_auc(&r));
            let area = trapezoid_area(&roc_points(&r).unwrap());
            prop_assert!((area - auc(&r).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ece_permutation_invariant(r in record_strategy(60), shift in 0usize..60) {
            let mut p = r.clone();
            p.rotate_left(shift % r.len());
            p.reverse();
            let (a, b) = (ece(&r, 10).unwrap(), ece(&p, 10).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn delta_matches_pairs_and_is_monotone(
            f in proptest::collection::vec(0.0f64..=1.0, 2..40),
            e1 in 0.0f64..0.5,
            e2 in 0.0f64..0.5,
        ) {
            let mut brute = 0u64;
            for i in 0..f.len() {
                for j in i + 1..f.len() {
                    brute += u64::from((f[i] - f[j]).abs() > e1);
                }
            }
            let pairs = (f.len() * (f.len() - 1) / 2) as f64;
            prop_assert_eq!(delta_saturation(&f, e1).unwrap(), brute as f64 / pairs);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(delta_saturation(&f, hi).unwrap() <= delta_saturation(&f, lo).unwrap());
        }
    }
}
