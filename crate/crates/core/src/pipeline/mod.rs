//! End-to-end inference over a test cohort, ablation modes, evaluation,
//! run persistence and the HTTP API.

mod config;
mod http;
mod metrics;
mod run;

pub use config::{Ablation, EmbedderConfig, Params, ProviderConfig, RunConfig};
pub use http::{router, serve, AppState};
pub use metrics::{recall_at_k, weighted_f1, MetricsReport, PatientMetrics};
pub use run::{
    evaluate, load_run, PatientArtifact, PatientFailure, PatientOutcome, Pipeline, RunArtifacts, RunManifest,
    RunRequest, RUN_FORMAT_VERSION,
};

use std::path::PathBuf;

use crate::agents::AgentError;
use crate::causal::CausalError;
use crate::ehr::EhrError;
use crate::gateway::GatewayError;
use crate::knowledge::KnowledgeError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ehr(#[from] EhrError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("patient {0:?} has a single visit, so there is no history to predict from")]
    NoHistory(String),
    #[error("artifacts do not cover the cohort: {0}")]
    Coverage(String),
    #[error("run files: {0}")]
    Format(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the model provider, not the request or the data, is at fault.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Gateway(GatewayError::Provider { .. } | GatewayError::ContextLength(_))
                | PipelineError::Agent(AgentError::Gateway(GatewayError::Provider { .. } | GatewayError::ContextLength(_)))
                | PipelineError::Agent(AgentError::DiscoveryAborted {
                    source: GatewayError::Provider { .. } | GatewayError::ContextLength(_),
                    ..
                })
        )
    }
}
