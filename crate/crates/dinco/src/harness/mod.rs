//! Datasets in, methods under a fixed budget, records and reports out.

pub mod beta;
pub mod config;
pub mod dataset;
pub mod report;
pub mod run;
pub mod svg;

use thiserror::Error;

use crate::elicitation::templates::TemplateError;
use crate::gateway::GatewayError;
use crate::metrics::MetricError;

pub use beta::{total_confidence_analysis, BetaAnalysis, BetaGroup, BetaPoint};
pub use config::{
    CorrectnessRule, DincoSplit, DistractorStrategy, MethodId, NliSettings, ProviderSettings,
    RunConfig, SyntheticGenerate, VcKind,
};
pub use dataset::{
    ingest, synthetic_instances, write_jsonl, DatasetError, DatasetInstance, Gold, InstanceBody,
    LabeledClaim,
};
pub use report::{report, write_report, MetricReport, ReportOptions};
pub use run::{
    run, score_question, write_run, InstanceTrace, MethodTrace, RunManifest, RunOutput, Scored,
    UnitTrace,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} instances failed (limit {limit}); first: {first}")]
    TooManyErrors {
        failed: usize,
        total: usize,
        limit: f64,
        first: String,
    },
    #[error("{0}")]
    Method(String),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(path.display().to_string(), e)
}
