//! Paired significance tests: subsampled ECE, bootstrapped Brier score and
//! DeLong's test for correlated AUCs.
//!
//! Every test asks whether method A is significantly worse than method B.
//! Resampling iteration `i` draws from its own stream of the seed, so the
//! result does not depend on how iterations are spread over threads.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{auc_counts, bin_index, check, CalibrationRecord, MetricError, DEFAULT_BINS};
use crate::exec::{map_range, Execution};
use crate::seed::stream_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Empirical α-quantile of the resampled differences.
    #[default]
    Percentile,
    /// Mean minus z(1-α) standard deviations of the resampled differences.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleOptions {
    pub n_iter: usize,
    /// Subsample fraction for the ECE test.
    pub frac: f64,
    pub alpha: f64,
    pub seed: u64,
    pub n_bins: usize,
    pub ci: CiMethod,
    pub execution: Execution,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        ResampleOptions {
            n_iter: 10_000,
            frac: 0.9,
            alpha: 0.05,
            seed: 0,
            n_bins: DEFAULT_BINS,
            ci: CiMethod::Percentile,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SignificantlyWorse,
    NotSignificant,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub verdict: Verdict,
    /// Metric of A minus metric of B on the full data.
    pub difference: f64,
    /// Lower end of the one-sided interval on the difference (resampling
    /// tests only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    /// One-sided p-value (DeLong only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn paired(a: &[CalibrationRecord], b: &[CalibrationRecord]) -> Result<(), MetricError> {
    check(a)?;
    check(b)?;
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    match a.iter().zip(b).position(|(x, y)| x.id != y.id) {
        Some(index) => Err(MetricError::Unpaired {
            index,
            a: a[index].id.clone(),
            b: b[index].id.clone(),
        }),
        None => Ok(()),
    }
}

fn validate(opts: &ResampleOptions) -> Result<(), MetricError> {
    if opts.n_iter == 0 {
        return Err(MetricError::InvalidOption("n_iter must be positive".into()));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(MetricError::InvalidOption(format!(
            "alpha {} outside (0, 1)",
            opts.alpha
        )));
    }
    if !(opts.frac > 0.0 && opts.frac <= 1.0) {
        return Err(MetricError::InvalidOption(format!(
            "frac {} outside (0, 1]",
            opts.frac
        )));
    }
    if opts.n_bins == 0 {
        return Err(MetricError::InvalidOption("n_bins must be positive".into()));
    }
    Ok(())
}

/// ECE over the records at `idx` (repeats allowed).
fn ece_at(r: &[CalibrationRecord], idx: &[usize], n_bins: usize) -> f64 {
    let mut bins = vec![(0usize, 0.0f64, 0usize); n_bins];
    for &i in idx {
        let b = &mut bins[bin_index(r[i].confidence, n_bins)];
        b.0 += 1;
        b.1 += r[i].confidence;
        b.2 += usize::from(r[i].correct);
    }
    let n = idx.len() as f64;
    bins.iter()
        .filter(|b| b.0 > 0)
        .map(|&(_, conf, hits)| (hits as f64 - conf).abs() / n)
        .sum()
}

fn brier_at(r: &[CalibrationRecord], idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| (f64::from(u8::from(r[i].correct)) - r[i].confidence).powi(2))
        .sum::<f64>()
        / idx.len() as f64
}

fn lower_bound(mut diffs: Vec<f64>, opts: &ResampleOptions) -> f64 {
    match opts.ci {
        CiMethod::Percentile => {
            diffs.sort_by(f64::total_cmp);
            let rank = (opts.alpha * diffs.len() as f64).ceil() as usize;
            diffs[rank.clamp(1, diffs.len()) - 1]
        }
        CiMethod::Normal => {
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let sd = if diffs.len() > 1 {
                (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let z = Normal::standard().inverse_cdf(1.0 - opts.alpha);
            mean - z * sd
        }
    }
}

fn resampling_verdict(
    difference: f64,
    diffs: Vec<f64>,
    opts: &ResampleOptions,
) -> SignificanceResult {
    let lb = lower_bound(diffs, opts);
    SignificanceResult {
        verdict: if lb > 0.0 {
            Verdict::SignificantlyWorse
        } else {
            Verdict::NotSignificant
        },
        difference,
        lower_bound: Some(lb),
        p_value: None,
        seed: Some(opts.seed),
    }
}

/// Is ECE(A) significantly above ECE(B)? Differences are taken over
/// `n_iter` paired subsamples of size `frac·N` drawn without replacement.
pub fn sig_ece(
    a: &[CalibrationRecord],
    b: &[CalibrationRecord],
    opts: &ResampleOptions,
) -> Result<SignificanceResult, MetricError> {
    paired(a, b)?;
    validate(opts)?;
    let n = a.len();
    let m = ((opts.frac * n as f64).round() as usize).clamp(1, n);
    let diffs = map_range(opts.execution, opts.n_iter, |i| {
        let mut rng = stream_rng(opts.seed, i as u64);
        let idx = sample(&mut rng, n, m).into_vec();
        ece_at(a, &idx, opts.n_bins) - ece_at(b, &idx, opts.n_bins)
    });
    let all: Vec<usize> = (0..n).collect();
    let difference = ece_at(a, &all, opts.n_bins) - ece_at(b, &all, opts.n_bins);
    Ok(resampling_verdict(difference, diffs, opts))
}

/// Is the Brier score of A significantly above that of B? Differences are
/// taken over `n_iter` full-size paired bootstrap resamples.
pub fn sig_brier(
    a: &[CalibrationRecord],
    b: &[CalibrationRecord],
    opts: &ResampleOptions,
) -> Result<SignificanceResult, MetricError> {
    paired(a, b)?;
    validate(opts)?;
    let n = a.len();
    let diffs = map_range(opts.execution, opts.n_iter, |i| {
        let mut rng = stream_rng(opts.seed, i as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        brier_at(a, &idx) - brier_at(b, &idx)
    });
    let all: Vec<usize> = (0..n).collect();
    let difference = brier_at(a, &all) - brier_at(b, &all);
    Ok(resampling_verdict(difference, diffs, opts))
}

/// Structural components of one method's AUC: for each positive, the share
/// of negatives it beats (ties half), and for each negative, the share of
/// positives that beat it.
fn placements(conf: &[f64], correct: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&f, &c) in conf.iter().zip(correct) {
        if c {
            pos.push(f);
        } else {
            neg.push(f);
        }
    }
    let mut sorted_neg = neg.clone();
    sorted_neg.sort_by(f64::total_cmp);
    let mut sorted_pos = pos.clone();
    sorted_pos.sort_by(f64::total_cmp);
    let share = |sorted: &[f64], x: f64| {
        let below = sorted.partition_point(|&v| v < x);
        let upto = sorted.partition_point(|&v| v <= x);
        (below as f64 + 0.5 * (upto - below) as f64) / sorted.len() as f64
    };
    let v10 = pos.iter().map(|&x| share(&sorted_neg, x)).collect();
    // a negative y loses to positives above it and ties half with equals
    let v01 = neg.iter().map(|&y| 1.0 - share(&sorted_pos, y)).collect();
    (v10, v01)
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// One-sided DeLong test of AUC(A) < AUC(B) on paired records. The p-value is
/// Φ(z) for z = (AUC(A) − AUC(B)) / se.
pub fn sig_auc(
    a: &[CalibrationRecord],
    b: &[CalibrationRecord],
    alpha: f64,
) -> Result<SignificanceResult, MetricError> {
    paired(a, b)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricError::InvalidOption(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let correct: Vec<bool> = a.iter().map(|r| r.correct).collect();
    let conf_a: Vec<f64> = a.iter().map(|r| r.confidence).collect();
    let conf_b: Vec<f64> = b.iter().map(|r| r.confidence).collect();
    let (num_a, p, n) = auc_counts(&conf_a, &correct);
    let (num_b, _, _) = auc_counts(&conf_b, &correct);
    if p == 0 {
        return Err(MetricError::SingleClass("incorrect"));
    }
    if n == 0 {
        return Err(MetricError::SingleClass("correct"));
    }
    let denom = (2 * p * n) as f64;
    let difference = num_a as f64 / denom - num_b as f64 / denom;
    let result = |verdict, p_value| SignificanceResult {
        verdict,
        difference,
        lower_bound: None,
        p_value,
        seed: None,
    };
    if num_a == num_b {
        return Ok(result(Verdict::NotSignificant, Some(0.5)));
    }
    if p < 2 || n < 2 {
        return Ok(result(Verdict::Inconclusive, None));
    }
    let (v10a, v01a) = placements(&conf_a, &correct);
    let (v10b, v01b) = placements(&conf_b, &correct);
    let var = (covariance(&v10a, &v10a) + covariance(&v10b, &v10b)
        - 2.0 * covariance(&v10a, &v10b))
        / p as f64
        + (covariance(&v01a, &v01a) + covariance(&v01b, &v01b) - 2.0 * covariance(&v01a, &v01b))
            / n as f64;
    if var.is_nan() || var <= 1e-300 {
        return Ok(result(Verdict::Inconclusive, None));
    }
    let z = difference / var.sqrt();
    let p_value = Normal::standard().cdf(z);
    let verdict = if p_value < alpha {
        Verdict::SignificantlyWorse
    } else {
        Verdict::NotSignificant
    };
    Ok(result(verdict, Some(p_value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tests::recs;

    fn labels_6040(n: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i % 5 < 3)).collect()
    }

    fn opts(seed: u64) -> ResampleOptions {
        ResampleOptions {
            n_iter: 2000,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn identical_methods_are_never_significant() {
        let y = labels_6040(50);
        let conf: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
        let a = recs(&conf, &y);
        let e = sig_ece(&a, &a, &opts(1)).unwrap();
        assert_eq!(e.verdict, Verdict::NotSignificant);
        assert_eq!(e.lower_bound, Some(0.0));
        assert_eq!(
            sig_brier(&a, &a, &opts(1)).unwrap().verdict,
            Verdict::NotSignificant
        );
        let d = sig_auc(&a, &a, 0.05).unwrap();
        assert_eq!((d.verdict, d.p_value), (Verdict::NotSignificant, Some(0.5)));
    }

    #[test]
    fn oracle_confidence_beats_constant() {
        let y = labels_6040(100);
        let oracle: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let good = recs(&oracle, &y);
        let flat = recs(&[0.5; 100], &y);
        assert_eq!(
            sig_ece(&flat, &good, &opts(3)).unwrap().verdict,
            Verdict::SignificantlyWorse
        );
        assert_eq!(
            sig_ece(&good, &flat, &opts(3)).unwrap().verdict,
            Verdict::NotSignificant
        );
    }

    #[test]
    fn brier_verdict_is_stable_across_seeds() {
        let y = labels_6040(60);
        let truth: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let inverse: Vec<f64> = truth.iter().map(|v| 1.0 - v).collect();
        let good = recs(&truth, &y);
        let bad = recs(&inverse, &y);
        for seed in 0..5 {
            assert_eq!(
                sig_brier(&bad, &good, &opts(seed)).unwrap().verdict,
                Verdict::SignificantlyWorse
            );
            assert_eq!(
                sig_brier(&good, &bad, &opts(seed)).unwrap().verdict,
                Verdict::NotSignificant
            );
        }
    }

    #[test]
    fn preconditions() {
        let a = recs(&[0.2, 0.8], &[0, 1]);
        let mut o = opts(0);
        o.n_iter = 0;
        assert!(matches!(
            sig_ece(&a, &a, &o),
            Err(MetricError::InvalidOption(_))
        ));
        let mut b = a.clone();
        b[1].id = "other".into();
        assert!(matches!(
            sig_brier(&a, &b, &opts(0)),
            Err(MetricError::Unpaired { index: 1, .. })
        ));
        let single_pos = recs(&[0.9, 0.1, 0.3, 0.2], &[1, 0, 0, 0]);
        let other = recs(&[0.1, 0.9, 0.3, 0.2], &[1, 0, 0, 0]);
        assert_eq!(
            sig_auc(&other, &single_pos, 0.05).unwrap().verdict,
            Verdict::Inconclusive
        );
    }

    #[test]
    fn resampling_is_deterministic_and_thread_independent() {
        let y = labels_6040(80);
        let a = recs(
            &(0..80).map(|i| (i % 9) as f64 / 9.0).collect::<Vec<_>>(),
            &y,
        );
        let b = recs(
            &(0..80).map(|i| (i % 4) as f64 / 4.0).collect::<Vec<_>>(),
            &y,
        );
        let mut seq = opts(42);
        seq.execution = Execution::Sequential;
        let mut par = opts(42);
        par.execution = Execution::Parallel;
        assert_eq!(
            sig_ece(&a, &b, &seq).unwrap(),
            sig_ece(&a, &b, &par).unwrap()
        );
        assert_eq!(
            sig_brier(&a, &b, &seq).unwrap(),
            sig_brier(&a, &b, &par).unwrap()
        );
        assert_eq!(
            sig_ece(&a, &b, &seq).unwrap(),
            sig_ece(&a, &b, &seq).unwrap()
        );
    }

    #[test]
    fn delong_placements_reproduce_auc() {
        let y = [1u8, 0, 1, 1, 0, 0, 1];
        let f = [0.9, 0.4, 0.4, 0.7, 0.2, 0.8, 0.5];
        let correct: Vec<bool> = y.iter().map(|&v| v == 1).collect();
        let (v10, v01) = placements(&f, &correct);
        let a = crate::metrics::auc(&recs(&f, &y)).unwrap();
        assert!((v10.iter().sum::<f64>() / v10.len() as f64 - a).abs() < 1e-12);
        assert!((v01.iter().sum::<f64>() / v01.len() as f64 - a).abs() < 1e-12);
    }
}
