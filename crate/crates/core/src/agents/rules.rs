//! A provider that answers every agent prompt from the request context with
//! fixed rules, for offline end-to-end runs. Bump [`RULES_VERSION`] whenever a
//! rule changes, since frozen snapshots depend on it.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::templates;
use super::{FitMemory, SEP_TOKEN};
use crate::causal::{fit_with_cap, CausalDag, ParsedGraph};
use crate::ehr::{Candidate, CodeRegistry, DiagnosisMatrix, TransitionMatrix};
use crate::gateway::{estimate_tokens, CompletionParams, CompletionProvider, CompletionRequest, ProviderError, ProviderReply};

pub const RULES_VERSION: &str = "rules-v2";

const FOCUS_TABLE: &[(&[&str], &[&str])] = &[
    (&["kidney", "renal", "nephr"], &["403", "58"]),
    (&["heart", "cardiac"], &["39", "40", "41", "42"]),
    (&["lung", "respiratory", "pulmonary"], &["46", "47", "48", "49", "50", "51"]),
    (&["liver", "hepatic"], &["570", "571", "572", "573"]),
    (&["diabetes", "endocrine"], &["24", "25", "26", "27"]),
];

/// Code prefixes selected by the organ-system keywords in a clinician comment.
pub fn focus_prefixes(comment: &str) -> Vec<&'static str> {
    let lower = comment.to_lowercase();
    let mut out = Vec::new();
    for (keywords, prefixes) in FOCUS_TABLE {
        if keywords.iter().any(|k| lower.contains(k)) {
            out.extend_from_slice(prefixes);
        }
    }
    out
}

pub struct RuleBasedProvider {
    registry: Arc<CodeRegistry>,
    at: Arc<TransitionMatrix>,
    ad: Arc<DiagnosisMatrix>,
    alpha: f64,
    parent_cap: usize,
}

fn field<T: DeserializeOwned>(ctx: &Value, key: &str) -> Result<T, ProviderError> {
    let v = ctx
        .get(key)
        .ok_or_else(|| ProviderError::Config(format!("request context lacks {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| ProviderError::Config(format!("request context {key:?}: {e}")))
}

/// Up to the first two sentences; a sentence ends at `.`, `!` or `?` followed by whitespace.
fn first_sentences(text: &str, n: usize) -> String {
    let mut ends = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().map_or(true, |(_, next)| next.is_whitespace()) {
            ends += 1;
            if ends == n {
                return text[..i + c.len_utf8()].trim().to_string();
            }
        }
    }
    text.trim().to_string()
}

impl RuleBasedProvider {
    pub fn new(
        registry: Arc<CodeRegistry>,
        at: Arc<TransitionMatrix>,
        ad: Arc<DiagnosisMatrix>,
        alpha: f64,
        parent_cap: usize,
    ) -> Self {
        Self {
            registry,
            at,
            ad,
            alpha,
            parent_cap,
        }
    }

    fn names(&self, codes: &[String]) -> String {
        codes.iter().map(|c| self.registry.display_name(c)).collect::<Vec<_>>().join(", ")
    }

    fn fit(&self, dag: &CausalDag) -> Result<f64, ProviderError> {
        fit_with_cap(dag, &self.ad, self.alpha, self.parent_cap)
            .map(|f| f.score)
            .map_err(|e| ProviderError::Config(e.to_string()))
    }

    /// Tries absent edges by descending transition probability and adds the
    /// first one that keeps the graph acyclic and raises the score.
    fn amend(&self, memory: &FitMemory) -> Result<CausalDag, ProviderError> {
        let current = &memory.current;
        let base = self.fit(current)?;
        let mut options: Vec<(f64, &String, &String)> = Vec::new();
        for a in current.nodes() {
            for b in current.nodes() {
                if a == b || current.has_edge(a, b) {
                    continue;
                }
                let p = self.at.get_by_code(a, b).unwrap_or(0.0);
                if p > 0.0 {
                    options.push((p, a, b));
                }
            }
        }
        // stable: equal probabilities stay in (from, to) order
        options.sort_by(|x, y| y.0.total_cmp(&x.0));
        for (_, a, b) in options {
            let mut next = current.clone();
            if next.try_add_edge(a, b) && self.fit(&next)? > base {
                return Ok(next);
            }
        }
        Ok(current.clone())
    }

    fn decide(&self, ctx: &Value) -> Result<String, ProviderError> {
        let history: BTreeSet<String> = field(ctx, "history")?;
        let candidates: Vec<Candidate> = field(ctx, "candidates")?;
        let graph: CausalDag = field(ctx, "graph")?;
        let comment: String = field(ctx, "comment")?;

        let support = |code: &str| graph.parents(code).into_iter().filter(|p| history.contains(*p)).count();
        let mut ranked: Vec<(usize, &Candidate)> = candidates.iter().map(|c| (support(&c.code), c)).collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then(y.1.score.total_cmp(&x.1.score)));

        let prefixes = focus_prefixes(&comment);
        if !prefixes.is_empty() {
            ranked.retain(|(_, c)| prefixes.iter().any(|p| c.code.starts_with(p)));
        }
        let codes: Vec<&str> = ranked.iter().map(|(_, c)| c.code.as_str()).collect();

        let mut explanation = format!(
            "Ranked {} candidate disease(s) by the number of history diseases with a causal link to them, \
             then by transition probability from the history.",
            codes.len()
        );
        if !prefixes.is_empty() {
            explanation.push_str(&format!(
                " Kept only codes starting with {} as the clinician comment asks.",
                prefixes.join("/")
            ));
        }
        for (s, c) in ranked.iter().take(3) {
            explanation.push_str(&format!(
                " {} ({}): {s} supporting link(s), transition probability {:.3}.",
                c.code,
                self.registry.display_name(&c.code),
                c.score
            ));
        }
        Ok(format!("{} {SEP_TOKEN} {explanation}", json!(codes)))
    }

    fn reply(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let ctx = &request.context;
        let id = request
            .template_id
            .as_deref()
            .ok_or_else(|| ProviderError::Config("rule-based provider needs a template id".into()))?;
        match id {
            templates::KNOWLEDGE_QUERY => {
                let mut codes: Vec<String> = field(ctx, "history")?;
                for c in field::<Vec<String>>(ctx, "candidates")? {
                    if !codes.contains(&c) {
                        codes.push(c);
                    }
                }
                Ok(self.names(&codes))
            }
            templates::REASON_IN_DOC => Ok(first_sentences(&field::<String>(ctx, "text")?, 2)),
            templates::HYPOTHESIS => {
                let nodes: BTreeSet<String> = field(ctx, "nodes")?;
                Ok(CausalDag::empty(nodes).to_json())
            }
            templates::AMENDMENT => Ok(self.amend(&field(ctx, "memory")?)?.to_json()),
            templates::REPAIR => {
                let mut g = ParsedGraph::new(field(ctx, "nodes")?);
                for (a, b) in field::<Vec<(String, String)>>(ctx, "edges")? {
                    g.push_edge(&a, &b);
                }
                Ok(g.into_dag().dag.to_json())
            }
            templates::DECISION => self.decide(ctx),
            other => Err(ProviderError::Config(format!("no rule for template {other:?}"))),
        }
    }
}

impl CompletionProvider for RuleBasedProvider {
    fn id(&self) -> String {
        RULES_VERSION.into()
    }

    fn complete(&self, request: &CompletionRequest, _params: &CompletionParams) -> Result<ProviderReply, ProviderError> {
        let text = self.reply(request)?;
        let prompt: String = request.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        Ok(ProviderReply {
            input_tokens: estimate_tokens(&prompt),
            output_tokens: estimate_tokens(&text),
            text,
        })
    }
}
