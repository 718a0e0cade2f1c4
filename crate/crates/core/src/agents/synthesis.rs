use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::{self, CANDIDATE_DISEASES, DIAGNOSIS_HISTORY, DOCUMENT, META_DATA};
use super::{describe_codes, AgentEnv, AgentError, PatientInputs};
use crate::gateway::{ChatExchange, CompletionRequest, Message};
use crate::knowledge::{Embedder, KnowledgeError, StoreMetadata, VectorStore};

pub const MAX_SUMMARY_CHARS: usize = 1200;
pub const TRUNCATION_MARKER: &str = " [truncated]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub retrieval_score: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutput {
    pub search_query: String,
    /// One per retrieved document, in retrieval order.
    pub summaries: Vec<DocSummary>,
    pub exchanges: Vec<ChatExchange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn describe_metadata(m: &StoreMetadata) -> String {
    format!(
        "{} (source: {}; {} documents; one document per page section; ranked by {} similarity)",
        m.description, m.source, m.doc_count, m.similarity
    )
}

fn cap_summary(text: &str) -> String {
    let text = text.trim();
    if text.chars().count() <= MAX_SUMMARY_CHARS {
        return text.to_string();
    }
    let keep = MAX_SUMMARY_CHARS - TRUNCATION_MARKER.chars().count();
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Generates a search query, retrieves the top `k` documents and summarizes
/// each against the patient's history and candidates.
pub fn knowledge_synthesis(
    env: AgentEnv<'_>,
    inputs: &PatientInputs,
    store: &VectorStore,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<SynthesisOutput, AgentError> {
    if k == 0 {
        return Err(AgentError::InvalidK);
    }
    let candidates = inputs.candidate_codes();
    let history_text = describe_codes(env.registry, &inputs.history);
    let candidates_text = describe_codes(env.registry, &candidates);
    let mut warnings = Vec::new();

    let bindings = BTreeMap::from([
        (DIAGNOSIS_HISTORY.to_string(), history_text.clone()),
        (CANDIDATE_DISEASES.to_string(), candidates_text.clone()),
        (META_DATA.to_string(), describe_metadata(store.metadata())),
    ]);
    let prompt = env.templates.get(templates::KNOWLEDGE_QUERY)?.render(&bindings)?;
    let request = CompletionRequest::new(vec![Message::user(prompt)]).with_template(
        templates::KNOWLEDGE_QUERY,
        json!({ "history": inputs.history, "candidates": candidates }),
    );
    let query_exchange = env.gateway.complete(request, env.params)?;
    let mut search_query = query_exchange.response_text.trim().to_string();
    if search_query.is_empty() {
        warnings.push("empty search query from model; using history and candidates".into());
        search_query = format!("{history_text}; {candidates_text}");
    }
    let mut exchanges = vec![query_exchange];

    let retrieved = match store.query(&search_query, k, embedder) {
        Ok(r) => r,
        Err(KnowledgeError::EmptyStore) => {
            warnings.push("knowledge store is empty; no documents retrieved".into());
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };

    let mut summaries = Vec::with_capacity(retrieved.len());
    for hit in retrieved {
        let doc = &hit.doc;
        let heading = match &doc.disease_code {
            Some(code) => format!("{} / {} [{}]", env.registry.display_name(code), doc.section, doc.doc_id),
            None => format!("{} [{}]", doc.section, doc.doc_id),
        };
        let bindings = BTreeMap::from([
            (DOCUMENT.to_string(), format!("document {heading}:\n{}\n", doc.text)),
            (DIAGNOSIS_HISTORY.to_string(), history_text.clone()),
            (CANDIDATE_DISEASES.to_string(), candidates_text.clone()),
        ]);
        let prompt = env.templates.get(templates::REASON_IN_DOC)?.render(&bindings)?;
        let request = CompletionRequest::new(vec![Message::user(prompt)]).with_template(
            templates::REASON_IN_DOC,
            json!({
                "doc_id": doc.doc_id,
                "text": doc.text,
                "history": inputs.history,
                "candidates": candidates,
            }),
        );
        let ex = env.gateway.complete(request, env.params)?;
        let summary = cap_summary(&ex.response_text);
        if summary.ends_with(TRUNCATION_MARKER) {
            warnings.push(format!("summary of {} truncated to {MAX_SUMMARY_CHARS} characters", doc.doc_id));
        }
        summaries.push(DocSummary {
            doc_id: doc.doc_id.clone(),
            retrieval_score: hit.score,
            summary,
        });
        exchanges.push(ex);
    }
    Ok(SynthesisOutput {
        search_query,
        summaries,
        exchanges,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_cap() {
        assert_eq!(cap_summary("  short  "), "short");
        let long = "x".repeat(5000);
        let capped = cap_summary(&long);
        assert_eq!(capped.chars().count(), MAX_SUMMARY_CHARS);
        assert!(capped.ends_with(TRUNCATION_MARKER));
    }
}
