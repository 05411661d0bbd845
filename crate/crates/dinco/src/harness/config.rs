//! Run configuration (TOML) and the method catalogue.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::elicitation::templates::TemplateSet;
use crate::elicitation::DecodingConfig;
use crate::exec::Execution;
use crate::gateway::mock::MockNli;
use crate::gateway::synthetic::{BiasRule, SyntheticModelSpec, SyntheticProvider};
use crate::gateway::{
    Gateway, HttpNliBackend, OpenAiCompatibleProvider, Provider, ProviderCapabilities,
    ProviderConfig, ResponseCache, RetryPolicy,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    VcPtrue,
    VcNum,
    Kvc,
    Msp,
    Sc,
    ScVc,
    Nvc,
    NvcNum,
    Dinco,
    DincoNum,
    NvcBlackbox,
    DincoBlackbox,
}

/// How a method asks for verbalized confidence in a single claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcKind {
    PTrue,
    Numerical,
}

impl MethodId {
    pub const ALL: [MethodId; 12] = [
        MethodId::VcPtrue,
        MethodId::VcNum,
        MethodId::Kvc,
        MethodId::Msp,
        MethodId::Sc,
        MethodId::ScVc,
        MethodId::Nvc,
        MethodId::NvcNum,
        MethodId::Dinco,
        MethodId::DincoNum,
        MethodId::NvcBlackbox,
        MethodId::DincoBlackbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::VcPtrue => "vc_ptrue",
            MethodId::VcNum => "vc_num",
            MethodId::Kvc => "kvc",
            MethodId::Msp => "msp",
            MethodId::Sc => "sc",
            MethodId::ScVc => "sc_vc",
            MethodId::Nvc => "nvc",
            MethodId::NvcNum => "nvc_num",
            MethodId::Dinco => "dinco",
            MethodId::DincoNum => "dinco_num",
            MethodId::NvcBlackbox => "nvc_blackbox",
            MethodId::DincoBlackbox => "dinco_blackbox",
        }
    }

    pub fn vc_kind(self) -> Option<VcKind> {
        match self {
            MethodId::VcPtrue | MethodId::Nvc | MethodId::Dinco => Some(VcKind::PTrue),
            MethodId::VcNum
            | MethodId::NvcNum
            | MethodId::DincoNum
            | MethodId::NvcBlackbox
            | MethodId::DincoBlackbox => Some(VcKind::Numerical),
            MethodId::Kvc | MethodId::Msp | MethodId::Sc | MethodId::ScVc => None,
        }
    }

    pub fn needs_logprobs(self) -> bool {
        matches!(self, MethodId::Msp | MethodId::ScVc) || self.vc_kind() == Some(VcKind::PTrue)
    }

    pub fn is_nvc(self) -> bool {
        matches!(
            self,
            MethodId::Nvc | MethodId::NvcNum | MethodId::NvcBlackbox
        )
    }

    pub fn is_dinco(self) -> bool {
        matches!(
            self,
            MethodId::Dinco | MethodId::DincoNum | MethodId::DincoBlackbox
        )
    }

    pub fn is_black_box_variant(self) -> bool {
        matches!(self, MethodId::NvcBlackbox | MethodId::DincoBlackbox)
    }

    /// Whether the method runs on NLI scores for short-form questions.
    pub fn uses_nli(self, ablate_nli: bool) -> bool {
        match self {
            MethodId::VcPtrue | MethodId::VcNum | MethodId::Msp => false,
            MethodId::Kvc | MethodId::Sc | MethodId::ScVc => true,
            MethodId::Dinco | MethodId::DincoNum | MethodId::DincoBlackbox => true,
            MethodId::Nvc | MethodId::NvcNum | MethodId::NvcBlackbox => !ablate_nli,
        }
    }

    pub fn supports_long_form(self) -> bool {
        matches!(
            self,
            MethodId::VcPtrue
                | MethodId::VcNum
                | MethodId::Sc
                | MethodId::Nvc
                | MethodId::NvcNum
                | MethodId::Dinco
                | MethodId::DincoNum
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorStrategy {
    /// Beam search when available, else pseudo-beam search when top
    /// alternatives are available, else the K-VC list.
    #[default]
    Auto,
    Beam,
    PseudoBeam,
    BlackBox,
}

impl DistractorStrategy {
    pub fn resolve(self, caps: ProviderCapabilities) -> DistractorStrategy {
        match self {
            DistractorStrategy::Auto if caps.has_beam_search => DistractorStrategy::Beam,
            DistractorStrategy::Auto if caps.has_top_alternatives => DistractorStrategy::PseudoBeam,
            DistractorStrategy::Auto => DistractorStrategy::BlackBox,
            s => s,
        }
    }
}

/// How a generated short-form answer is judged against the gold aliases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessRule {
    /// Normalized exact match with any alias.
    #[default]
    Exact,
    /// Exact match, or semantic equality with an alias under the NLI backend.
    Nli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DincoSplit {
    pub sc_samples: usize,
    pub n_distractors: usize,
}

impl Default for DincoSplit {
    fn default() -> Self {
        DincoSplit {
            sc_samples: 5,
            n_distractors: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenerate {
    pub n_questions: usize,
    pub n_answers: usize,
    pub bias: BiasRule,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSettings {
    Openai(ProviderConfig),
    /// The biased-latent simulator, from a spec file or generated.
    Synthetic {
        #[serde(default)]
        spec: Option<PathBuf>,
        #[serde(default)]
        generate: Option<SyntheticGenerate>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        capabilities: Option<ProviderCapabilities>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NliSettings {
    Http {
        url: String,
        #[serde(default = "default_nli_timeout")]
        timeout_secs: u64,
    },
    /// Mock: normalized-identical texts entail, all others contradict.
    ExactMatch,
    /// Mock: normalized-identical texts entail, all others are neutral.
    Reflexive,
    #[default]
    None,
}

fn default_nli_timeout() -> u64 {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub methods: Vec<MethodId>,
    /// Inference budget K shared by the budgeted methods.
    pub budget: usize,
    pub dinco: DincoSplit,
    /// Distractors for standalone NVC.
    pub nvc_distractors: usize,
    pub ablate_nli: bool,
    pub distractor_strategy: DistractorStrategy,
    pub correctness: CorrectnessRule,
    /// Largest tolerated fraction of instances failing with errors other
    /// than refusals.
    pub max_error_fraction: f64,
    pub execution: Execution,
    pub workers: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub provider: Option<ProviderSettings>,
    pub nli: NliSettings,
    pub decoding: DecodingConfig,
    pub retry: RetryPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            methods: vec![
                MethodId::VcPtrue,
                MethodId::Sc,
                MethodId::Nvc,
                MethodId::Dinco,
            ],
            budget: 10,
            dinco: DincoSplit::default(),
            nvc_distractors: 10,
            ablate_nli: false,
            distractor_strategy: DistractorStrategy::Auto,
            correctness: CorrectnessRule::Exact,
            max_error_fraction: 0.2,
            execution: Execution::default(),
            workers: None,
            dataset: None,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            templates_dir: None,
            provider: None,
            nli: NliSettings::None,
            decoding: DecodingConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.dataset.as_mut().map(fix);
        self.cache_dir.as_mut().map(fix);
        self.templates_dir.as_mut().map(fix);
        fix(&mut self.output_dir);
        if let Some(ProviderSettings::Synthetic { spec: Some(p), .. }) = &mut self.provider {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not need a live provider.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return err("no methods configured".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return err(format!("method {m} listed twice"));
        }
        if self.budget == 0 {
            return err("budget must be positive".into());
        }
        if self.dinco.sc_samples + self.dinco.n_distractors > self.budget {
            return err(format!(
                "dinco split {} samples + {} distractors exceeds budget {}",
                self.dinco.sc_samples, self.dinco.n_distractors, self.budget
            ));
        }
        if self.nvc_distractors > self.budget {
            return err(format!(
                "nvc_distractors {} exceeds budget {}",
                self.nvc_distractors, self.budget
            ));
        }
        if !(0.0..=1.0).contains(&self.max_error_fraction) {
            return err("max_error_fraction must lie in [0, 1]".into());
        }
        if self.workers == Some(0) {
            return err("workers must be positive".into());
        }
        Ok(())
    }

    /// Checks against the provider and NLI backend actually in use.
    pub fn validate_against(&self, gateway: &Gateway, long_form: bool) -> Result<(), HarnessError> {
        let caps = gateway.capabilities();
        for &m in &self.methods {
            if m.needs_logprobs() && !caps.has_logprobs {
                return Err(HarnessError::Config(format!(
                    "method {m} needs token logprobs"
                )));
            }
            if m.uses_nli(self.ablate_nli) && !gateway.has_nli() {
                return Err(HarnessError::Config(format!(
                    "method {m} needs an NLI backend"
                )));
            }
            if long_form && !m.supports_long_form() {
                return Err(HarnessError::Config(format!(
                    "method {m} does not apply to long-form instances"
                )));
            }
        }
        if long_form && self.uses_distractors() && !self.ablate_nli && !gateway.has_nli() {
            return Err(HarnessError::Config(
                "long-form distractor weighting needs an NLI backend".into(),
            ));
        }
        let strategy = self.distractor_strategy.resolve(caps);
        let needs_strategy = self
            .methods
            .iter()
            .any(|m| (m.is_nvc() || m.is_dinco()) && !m.is_black_box_variant());
        if needs_strategy && !long_form {
            match strategy {
                DistractorStrategy::Beam if !caps.has_beam_search => {
                    return Err(HarnessError::Config(
                        "beam distractors need a beam-search provider".into(),
                    ))
                }
                DistractorStrategy::PseudoBeam if !caps.has_top_alternatives => {
                    return Err(HarnessError::Config(
                        "pseudo-beam distractors need top alternatives".into(),
                    ))
                }
                _ => {}
            }
        }
        if self.correctness == CorrectnessRule::Nli && !gateway.has_nli() {
            return Err(HarnessError::Config(
                "nli correctness needs an NLI backend".into(),
            ));
        }
        Ok(())
    }

    fn uses_distractors(&self) -> bool {
        self.methods.iter().any(|m| m.is_nvc() || m.is_dinco())
    }

    pub fn templates(&self) -> Result<TemplateSet, HarnessError> {
        match &self.templates_dir {
            Some(dir) => {
                TemplateSet::with_overrides(dir).map_err(|e| HarnessError::Config(e.to_string()))
            }
            None => Ok(TemplateSet::default()),
        }
    }

    /// The synthetic model spec named by the provider settings, if any.
    pub fn synthetic_spec(&self) -> Result<Option<SyntheticModelSpec>, HarnessError> {
        match &self.provider {
            Some(ProviderSettings::Synthetic { spec, generate, .. }) => {
                let s = match (spec, generate) {
                    (Some(path), _) => {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
                        serde_json::from_str(&text)
                            .map_err(|e| HarnessError::Config(format!("synthetic spec: {e}")))?
                    }
                    (None, Some(g)) => {
                        SyntheticModelSpec::generate(g.n_questions, g.n_answers, g.bias, g.seed)
                    }
                    (None, None) => {
                        return Err(HarnessError::Config(
                            "synthetic provider needs `spec` or `generate`".into(),
                        ))
                    }
                };
                Ok(Some(s))
            }
            _ => Ok(None),
        }
    }

    /// The configured dataset, or the synthetic spec's questions when no
    /// dataset is named.
    pub fn instances(&self) -> Result<Vec<super::DatasetInstance>, HarnessError> {
        match (&self.dataset, self.synthetic_spec()?) {
            (Some(path), _) => Ok(super::ingest(path)?),
            (None, Some(spec)) => Ok(super::synthetic_instances(&spec)),
            (None, None) => Err(HarnessError::Config("no dataset configured".into())),
        }
    }

    pub fn build_provider(
        &self,
        templates: &TemplateSet,
    ) -> Result<Arc<dyn Provider>, HarnessError> {
        match &self.provider {
            None => Err(HarnessError::Config("no provider configured".into())),
            Some(ProviderSettings::Openai(pc)) => {
                Ok(Arc::new(OpenAiCompatibleProvider::new(pc.clone())?))
            }
            Some(ProviderSettings::Synthetic {
                seed, capabilities, ..
            }) => {
                let spec = self.synthetic_spec()?.expect("synthetic settings");
                let mut p = SyntheticProvider::new(spec, *seed)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
                    .with_templates(templates.clone());
                if let Some(c) = capabilities {
                    p = p.with_capabilities(*c);
                }
                Ok(Arc::new(p))
            }
        }
    }

    /// Gateway with the configured provider, NLI backend, cache and retry
    /// policy, plus an in-process memo so methods share identical requests.
    pub fn build_gateway(&self, templates: &TemplateSet) -> Result<Gateway, HarnessError> {
        let mut g = Gateway::new(self.build_provider(templates)?)
            .with_retry(self.retry)
            .with_memo();
        g = match &self.nli {
            NliSettings::Http { url, timeout_secs } => {
                g.with_nli(Arc::new(HttpNliBackend::new(url.clone(), *timeout_secs)?))
            }
            NliSettings::ExactMatch => g.with_nli(Arc::new(MockNli::exact_match())),
            NliSettings::Reflexive => g.with_nli(Arc::new(MockNli::reflexive())),
            NliSettings::None => g,
        };
        if let Some(dir) = &self.cache_dir {
            g = g.with_cache(ResponseCache::open(dir)?);
        }
        Ok(g)
    }
}
