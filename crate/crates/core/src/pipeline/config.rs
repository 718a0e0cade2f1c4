use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::causal::{DEFAULT_ALPHA, DEFAULT_PARENT_CAP, DEFAULT_REPROMPT_BUDGET, DEFAULT_SCORE_TOLERANCE, DEFAULT_T_MAX};
use crate::ehr::{DEFAULT_EPSILON, DEFAULT_MAX_CANDIDATES};
use crate::gateway::{OpenAiConfig, TokenRates};
use crate::knowledge::{RemoteEmbedderConfig, DEFAULT_K_RETRIEVAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub epsilon: f64,
    pub max_candidates: usize,
    pub k_retrieval: usize,
    pub t_max: usize,
    pub score_tolerance: f64,
    pub alpha: f64,
    pub parent_cap: usize,
    pub reprompt_budget: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            k_retrieval: DEFAULT_K_RETRIEVAL,
            t_max: DEFAULT_T_MAX,
            score_tolerance: DEFAULT_SCORE_TOLERANCE,
            alpha: DEFAULT_ALPHA,
            parent_cap: DEFAULT_PARENT_CAP,
            reprompt_budget: DEFAULT_REPROMPT_BUDGET,
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    RuleBased,
    /// Canned replies, one JSON object per line.
    Scripted { script: PathBuf },
    OpenaiCompatible(OpenAiConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    /// Seeded with the run's `seed`.
    Hash,
    Remote(RemoteEmbedderConfig),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_knowledge: bool,
    pub disable_causal: bool,
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    1
}

fn default_in_flight() -> usize {
    4
}

fn default_ks() -> Vec<usize> {
    vec![10, 20]
}

fn default_embedder() -> EmbedderConfig {
    EmbedderConfig::Hash
}

/// Everything a run depends on. Relative paths are resolved against the
/// directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub registry: PathBuf,
    pub train_cohort: PathBuf,
    pub test_cohort: PathBuf,
    /// Persisted matrices from `build-matrices`; built from `train_cohort` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    /// Output location only; not part of a run's identity.
    #[serde(default = "default_runs_dir", skip_serializing)]
    pub runs_dir: PathBuf,
    #[serde(default)]
    pub params: Params,
    pub provider: ProviderConfig,
    #[serde(default = "default_embedder")]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub rates: TokenRates,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_ks")]
    pub recall_ks: Vec<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.registry, &mut self.train_cohort, &mut self.test_cohort, &mut self.runs_dir] {
            resolve(base, p);
        }
        for p in [&mut self.matrices_dir, &mut self.store_dir, &mut self.template_dir].into_iter().flatten() {
            resolve(base, p);
        }
        if let ProviderConfig::Scripted { script } = &mut self.provider {
            resolve(base, script);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.params;
        let mut problems = Vec::new();
        if !(0.0..1.0).contains(&p.epsilon) {
            problems.push(format!("params.epsilon must be in [0, 1), got {}", p.epsilon));
        }
        if p.max_candidates == 0 {
            problems.push("params.max_candidates must be at least 1".into());
        }
        if p.k_retrieval == 0 {
            problems.push("params.k_retrieval must be at least 1".into());
        }
        if !(p.score_tolerance >= 0.0 && p.score_tolerance.is_finite()) {
            problems.push(format!("params.score_tolerance must be finite and >= 0, got {}", p.score_tolerance));
        }
        if !(p.alpha > 0.0 && p.alpha.is_finite()) {
            problems.push(format!("params.alpha must be finite and > 0, got {}", p.alpha));
        }
        if p.parent_cap == 0 || p.parent_cap > 16 {
            problems.push(format!("params.parent_cap must be in 1..=16, got {}", p.parent_cap));
        }
        if !(0.0..=2.0).contains(&p.temperature) {
            problems.push(format!("params.temperature must be in [0, 2], got {}", p.temperature));
        }
        if p.max_tokens == 0 {
            problems.push("params.max_tokens must be at least 1".into());
        }
        if self.workers == 0 {
            problems.push("workers must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            problems.push("max_in_flight must be at least 1".into());
        }
        if self.recall_ks.is_empty() || self.recall_ks.contains(&0) {
            problems.push("recall_ks must be a nonempty list of positive integers".into());
        }
        if self.rates.input_per_1k < 0.0 || self.rates.output_per_1k < 0.0 {
            problems.push("rates must be non-negative".into());
        }
        if !self.ablation.disable_knowledge && self.store_dir.is_none() {
            problems.push("store_dir is required unless ablation.disable_knowledge is set".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(problems.join("; ")))
        }
    }
}
