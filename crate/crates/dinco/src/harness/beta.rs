//! Total verbalized confidence over distractor sets, split by correctness.

use serde::{Deserialize, Serialize};

use super::config::{MethodId, RunConfig};
use super::dataset::DatasetInstance;
use super::run::run;
use super::HarnessError;
use crate::elicitation::templates::TemplateSet;
use crate::gateway::Gateway;

pub const HISTOGRAM_WIDTH: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub id: String,
    pub correct: bool,
    /// Weighted confidence mass before flooring.
    pub total: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Summary of one correctness group; the statistics are None when the
/// group is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaGroup {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaAnalysis {
    pub method: MethodId,
    pub correct: BetaGroup,
    pub incorrect: BetaGroup,
    pub points: Vec<BetaPoint>,
    pub dropped: Vec<String>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Histogram with bins `[1 + iw, 1 + (i+1)w)` covering every value.
fn histogram(values: &[f64], upper: f64) -> Vec<HistogramBin> {
    let n_bins = (((upper - 1.0) / HISTOGRAM_WIDTH).floor() as usize) + 1;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: 1.0 + i as f64 * HISTOGRAM_WIDTH,
            hi: 1.0 + (i + 1) as f64 * HISTOGRAM_WIDTH,
            count: 0,
        })
        .collect();
    for &v in values {
        let i = (((v - 1.0) / HISTOGRAM_WIDTH).floor().max(0.0) as usize).min(n_bins - 1);
        bins[i].count += 1;
    }
    bins
}

pub fn summarize(method: MethodId, points: Vec<BetaPoint>, dropped: Vec<String>) -> BetaAnalysis {
    let upper = points.iter().map(|p| p.beta).fold(1.0, f64::max);
    let group = |want: bool| {
        let mut v: Vec<f64> = points
            .iter()
            .filter(|p| p.correct == want)
            .map(|p| p.beta)
            .collect();
        v.sort_by(f64::total_cmp);
        BetaGroup {
            n: v.len(),
            mean: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
            median: median(&v),
            histogram: histogram(&v, upper),
        }
    };
    BetaAnalysis {
        method,
        correct: group(true),
        incorrect: group(false),
        points,
        dropped,
    }
}

/// Runs the normalized-confidence pipeline of `method` (an NVC variant) on
/// short-form instances and reports the normalization factor per instance.
pub fn total_confidence_analysis(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &TemplateSet,
    instances: &[DatasetInstance],
    method: MethodId,
) -> Result<BetaAnalysis, HarnessError> {
    if !method.is_nvc() {
        return Err(HarnessError::Config(format!(
            "{method} has no normalization factor; use an nvc method"
        )));
    }
    if instances.iter().any(DatasetInstance::is_long_form) {
        return Err(HarnessError::Config(
            "total-confidence analysis takes short-form instances".into(),
        ));
    }
    let mut cfg = cfg.clone();
    cfg.methods = vec![method];
    let out = run(&cfg, gateway, templates, instances)?;
    let points = out
        .traces
        .iter()
        .flat_map(|t| &t.units)
        .map(|u| {
            let r = u.methods[&method].nvc.expect("nvc trace");
            BetaPoint {
                id: u.record_id.clone(),
                correct: u.correct,
                total: r.total,
                beta: r.beta,
            }
        })
        .collect();
    let dropped = out.manifest.dropped.into_iter().map(|d| d.id).collect();
    Ok(summarize(method, points, dropped))
}
