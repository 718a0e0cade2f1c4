use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::templates::{self, CLINICIAN_COMMENT, DAG_JSON, SUMMARY};
use super::{describe_codes, summary_block, AgentEnv, AgentError, DocSummary, PatientInputs};
use crate::causal::CausalDag;
use crate::ehr::CodeRegistry;
use crate::gateway::{ChatExchange, CompletionRequest, Message};

pub const SEP_TOKEN: &str = "<SEP>";

/// Codes and explanation recovered from a decision reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDecision {
    pub codes: Vec<String>,
    pub explanation: String,
    /// No separator: the list was taken from anywhere in the reply.
    pub fallback: bool,
    /// No code list could be found at all.
    pub parse_failure: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Ranked, distinct, all in the registry.
    pub codes: Vec<String>,
    pub explanation: String,
    pub clinician_comment_used: Option<String>,
    pub exchange: ChatExchange,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub parse_failure: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// First JSON array in `text` whose items are all strings.
fn first_string_list(text: &str) -> Option<Vec<String>> {
    text.match_indices('[').find_map(|(start, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Some(s.trim().to_string()),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    })
}

pub fn parse_decision(reply: &str, registry: &CodeRegistry) -> ParsedDecision {
    let mut out = ParsedDecision {
        codes: Vec::new(),
        explanation: String::new(),
        fallback: false,
        parse_failure: false,
        warnings: Vec::new(),
    };
    let raw = match reply.split_once(SEP_TOKEN) {
        Some((left, right)) => {
            out.explanation = right.trim().to_string();
            first_string_list(left)
        }
        None => {
            out.fallback = true;
            out.explanation = reply.trim().to_string();
            out.warnings.push(format!("reply has no {SEP_TOKEN}; searched the whole reply for a code list"));
            first_string_list(reply)
        }
    };
    let Some(raw) = raw else {
        out.parse_failure = true;
        out.warnings.push("no JSON list of codes found in the reply".into());
        return out;
    };
    let mut seen = BTreeSet::new();
    for code in raw {
        if !registry.contains(&code) {
            out.warnings.push(format!("dropped unknown code {code:?}"));
        } else if seen.insert(code.clone()) {
            out.codes.push(code);
        } else {
            out.warnings.push(format!("dropped repeated code {code}"));
        }
    }
    out
}

/// `{Summary}` for the decision prompt: the patient's codes plus any document summaries.
fn patient_summary(env: AgentEnv<'_>, inputs: &PatientInputs, summaries: &[DocSummary]) -> String {
    let mut s = format!(
        "Diagnosis history: {}\nCandidate diseases: {}",
        describe_codes(env.registry, &inputs.history),
        describe_codes(env.registry, &inputs.candidate_codes())
    );
    let docs = summary_block(summaries);
    if !docs.is_empty() {
        s.push_str("\nDisease information:\n");
        s.push_str(&docs);
    }
    s
}

pub fn decision_making(
    env: AgentEnv<'_>,
    inputs: &PatientInputs,
    summaries: &[DocSummary],
    graph: &CausalDag,
    comment: Option<&str>,
) -> Result<Prediction, AgentError> {
    let comment_text = comment.unwrap_or("");
    let bindings = BTreeMap::from([
        (SUMMARY.to_string(), patient_summary(env, inputs, summaries)),
        (DAG_JSON.to_string(), graph.to_json()),
        (CLINICIAN_COMMENT.to_string(), comment_text.to_string()),
    ]);
    let prompt = env.templates.get(templates::DECISION)?.render(&bindings)?;
    let context = json!({
        "history": inputs.history,
        "candidates": inputs.candidates,
        "graph": graph,
        "comment": comment_text,
    });
    let request = CompletionRequest::new(vec![Message::user(prompt)]).with_template(templates::DECISION, context);
    let exchange = env.gateway.complete(request, env.params)?;
    let parsed = parse_decision(&exchange.response_text, env.registry);
    for w in &parsed.warnings {
        log::warn!("patient {}: {w}", inputs.patient_id);
    }
    Ok(Prediction {
        codes: parsed.codes,
        explanation: parsed.explanation,
        clinician_comment_used: comment.filter(|c| !c.is_empty()).map(str::to_string),
        exchange,
        fallback: parsed.fallback,
        parse_failure: parsed.parse_failure,
        warnings: parsed.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> CodeRegistry {
        CodeRegistry::from_codes(&["428.0", "584.9", "250.00"]).unwrap()
    }

    #[test]
    fn splits_on_first_sep() {
        let p = parse_decision(r#"["428.0","584.9"] <SEP> Because... <SEP> more"#, &reg());
        assert_eq!(p.codes, vec!["428.0", "584.9"]);
        assert_eq!(p.explanation, "Because... <SEP> more");
        assert!(!p.fallback && !p.parse_failure);
    }

    #[test]
    fn unknown_and_repeated_codes_dropped() {
        let p = parse_decision(r#"Codes: ["584.9","999.9","584.9","428.0"]<SEP>x"#, &reg());
        assert_eq!(p.codes, vec!["584.9", "428.0"]);
        assert_eq!(p.warnings.len(), 2);
    }

    #[test]
    fn missing_sep_falls_back() {
        let p = parse_decision(r#"I predict ["250.00"] for this patient."#, &reg());
        assert_eq!(p.codes, vec!["250.00"]);
        assert!(p.fallback);
        assert!(p.explanation.starts_with("I predict"));
    }

    #[test]
    fn no_list_is_parse_failure() {
        let p = parse_decision("nothing useful", &reg());
        assert!(p.codes.is_empty() && p.parse_failure && p.fallback);
        let p = parse_decision("[1, 2] <SEP> numbers are not codes", &reg());
        assert!(p.parse_failure && !p.fallback);
    }
}
