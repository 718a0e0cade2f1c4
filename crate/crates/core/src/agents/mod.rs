//! The three agents of a prediction: knowledge synthesis, causal discovery
//! and decision making. Each renders its prompts from a [`TemplateSet`],
//! talks to the model through the [`Gateway`] and returns a serializable
//! record of what it did.

mod decision;
mod discovery;
mod rules;
mod synthesis;
pub mod templates;

pub use decision::{decision_making, parse_decision, ParsedDecision, Prediction, SEP_TOKEN};
pub use discovery::{causal_discovery, render_memory, DiscoveryIteration, DiscoveryLimits, DiscoveryTrace, FitMemory};
pub use rules::{focus_prefixes, RuleBasedProvider, RULES_VERSION};
pub use synthesis::{knowledge_synthesis, DocSummary, SynthesisOutput, MAX_SUMMARY_CHARS, TRUNCATION_MARKER};
pub use templates::default_templates;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::causal::CausalError;
use crate::ehr::{Candidate, CodeRegistry};
use crate::gateway::{CompletionParams, Gateway, GatewayError, TemplateSet};
use crate::knowledge::KnowledgeError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error("retrieval k must be at least 1")]
    InvalidK,
    #[error("history and candidates are both empty")]
    NoNodes,
    #[error("causal discovery aborted after {} iteration(s): {source}", .partial.len())]
    DiscoveryAborted {
        partial: Vec<DiscoveryIteration>,
        #[source]
        source: GatewayError,
    },
}

/// What every agent knows about the patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientInputs {
    pub patient_id: String,
    /// History codes in registry order.
    pub history: Vec<String>,
    /// Candidates, best first.
    pub candidates: Vec<Candidate>,
}

impl PatientInputs {
    pub fn candidate_codes(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.code.clone()).collect()
    }

    /// History ∪ candidates: the node set of the patient's causal graph.
    pub fn graph_nodes(&self) -> BTreeSet<String> {
        self.history
            .iter()
            .cloned()
            .chain(self.candidates.iter().map(|c| c.code.clone()))
            .collect()
    }
}

/// Shared, read-only services the agents use.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub registry: &'a CodeRegistry,
    pub params: CompletionParams,
}

/// `code (name)` entries joined with `; `.
pub(crate) fn describe_codes<'a>(registry: &CodeRegistry, codes: impl IntoIterator<Item = &'a String>) -> String {
    let parts: Vec<String> = codes
        .into_iter()
        .map(|c| {
            let name = registry.display_name(c);
            if name == *c {
                c.clone()
            } else {
                format!("{c} ({name})")
            }
        })
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("; ")
    }
}

/// Summaries as a bullet list; empty when there are none.
pub(crate) fn summary_block(summaries: &[DocSummary]) -> String {
    summaries
        .iter()
        .map(|s| format!("- [{}] {}", s.doc_id, s.summary))
        .collect::<Vec<_>>()
        .join("\n")
}
