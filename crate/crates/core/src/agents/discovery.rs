use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::{self, DISEASE_NAMES, GRAPH, MEMORY, SUMMARY};
use super::{describe_codes, summary_block, AgentEnv, AgentError, DocSummary, PatientInputs};
use crate::causal::{
    enforce_acyclic, fit_with_cap, parse_dag, CausalDag, ParsedGraph, StopReason, StopRule, DEFAULT_ALPHA,
    DEFAULT_PARENT_CAP, DEFAULT_REPROMPT_BUDGET,
};
use crate::ehr::DiagnosisMatrix;
use crate::gateway::{ChatExchange, CompletionRequest, GatewayError, Message};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryLimits {
    pub stop: StopRule,
    pub alpha: f64,
    pub parent_cap: usize,
    pub reprompt_budget: usize,
}

impl Default for DiscoveryLimits {
    fn default() -> Self {
        Self {
            stop: StopRule::default(),
            alpha: DEFAULT_ALPHA,
            parent_cap: DEFAULT_PARENT_CAP,
            reprompt_budget: DEFAULT_REPROMPT_BUDGET,
        }
    }
}

/// The current and previous fitted graphs, as shown to the amendment prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMemory {
    pub t: usize,
    pub current: CausalDag,
    pub current_score: f64,
    pub previous: Option<(CausalDag, f64)>,
}

/// Text bound to `{Memory}`.
pub fn render_memory(m: &FitMemory) -> String {
    let mut out = format!(
        "Current graph (iteration {}): {}\nCurrent fitting score (log-likelihood): {:.4}\n",
        m.t,
        m.current.to_json(),
        m.current_score
    );
    match &m.previous {
        Some((g, s)) => out.push_str(&format!(
            "Previous graph (iteration {}): {}\nPrevious fitting score (log-likelihood): {:.4}",
            m.t - 1,
            g.to_json(),
            s
        )),
        None => out.push_str("Previous graph: none\nPrevious fitting score: none"),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryIteration {
    pub t: usize,
    pub graph: CausalDag,
    pub score: f64,
    /// The hypothesis (t = 0) or amendment exchange that proposed `graph`.
    pub exchange: ChatExchange,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repair_exchanges: Vec<ChatExchange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryTrace {
    pub iterations: Vec<DiscoveryIteration>,
    pub final_graph: CausalDag,
    pub final_score: f64,
    pub stop_reason: StopReason,
}

struct Proposal {
    graph: CausalDag,
    exchange: ChatExchange,
    repair_exchanges: Vec<ChatExchange>,
    removed_edges: Vec<(String, String)>,
    warnings: Vec<String>,
}

fn ask(
    env: AgentEnv<'_>,
    template_id: &str,
    bindings: &BTreeMap<String, String>,
    context: serde_json::Value,
) -> Result<ChatExchange, GatewayError> {
    let prompt = env.templates.get(template_id)?.render(bindings)?;
    let request = CompletionRequest::new(vec![Message::user(prompt)]).with_template(template_id, context);
    env.gateway.complete(request, env.params)
}

fn parsed_json(g: &ParsedGraph) -> String {
    json!({ "nodes": g.nodes, "edges": g.edges }).to_string()
}

/// Parses a reply, falling back to `fallback` when it holds no graph, then
/// makes it acyclic, reprompting with the repair template while budget lasts.
fn settle(
    env: AgentEnv<'_>,
    exchange: ChatExchange,
    fallback: &CausalDag,
    reprompt_budget: usize,
) -> Result<Proposal, GatewayError> {
    let nodes = fallback.nodes().clone();
    let mut warnings = Vec::new();
    let parsed = match parse_dag(&exchange.response_text, &nodes) {
        Ok(g) => g,
        Err(e) => {
            warnings.push(format!("{e}; keeping {}", if fallback.edge_count() == 0 { "an empty graph" } else { "the current graph" }));
            let mut g = ParsedGraph::new(nodes.clone());
            for (a, b) in fallback.edges() {
                g.push_edge(a, b);
            }
            g
        }
    };
    let mut repair_exchanges = Vec::new();
    let mut reprompter = |g: &ParsedGraph| -> Result<ParsedGraph, GatewayError> {
        let bindings = BTreeMap::from([(GRAPH.to_string(), parsed_json(g))]);
        let ex = ask(env, templates::REPAIR, &bindings, json!({ "nodes": g.nodes, "edges": g.edges }))?;
        let next = parse_dag(&ex.response_text, &nodes).unwrap_or_else(|e| {
            let mut same = g.clone();
            same.warnings = vec![format!("repair reply: {e}")];
            same
        });
        repair_exchanges.push(ex);
        Ok(next)
    };
    let repair = enforce_acyclic(parsed, reprompt_budget, Some(&mut reprompter))?;
    warnings.extend(repair.warnings);
    Ok(Proposal {
        graph: repair.dag,
        exchange,
        repair_exchanges,
        removed_edges: repair.removed,
        warnings,
    })
}

/// Hypothesis generation followed by fit-and-amend rounds until the stop
/// rule fires. Iteration `t` holds graph G_t and its score.
pub fn causal_discovery(
    env: AgentEnv<'_>,
    inputs: &PatientInputs,
    summaries: &[DocSummary],
    ad: &DiagnosisMatrix,
    limits: DiscoveryLimits,
) -> Result<DiscoveryTrace, AgentError> {
    let nodes = inputs.graph_nodes();
    if nodes.is_empty() {
        return Err(AgentError::NoNodes);
    }
    let empty = CausalDag::empty(nodes.iter().cloned());
    let mut iterations: Vec<DiscoveryIteration> = Vec::new();
    let abort = |partial: &Vec<DiscoveryIteration>, source: GatewayError| AgentError::DiscoveryAborted {
        partial: partial.clone(),
        source,
    };

    let summary = summary_block(summaries);
    let bindings = BTreeMap::from([
        (DISEASE_NAMES.to_string(), describe_codes(env.registry, &nodes)),
        (SUMMARY.to_string(), if summary.is_empty() { "none".into() } else { summary }),
    ]);
    let first = ask(env, templates::HYPOTHESIS, &bindings, json!({ "nodes": nodes }))
        .and_then(|ex| settle(env, ex, &empty, limits.reprompt_budget))
        .map_err(|e| abort(&iterations, e))?;
    let mut score = fit_with_cap(&first.graph, ad, limits.alpha, limits.parent_cap)?.score;
    iterations.push(DiscoveryIteration {
        t: 0,
        graph: first.graph,
        score,
        exchange: first.exchange,
        repair_exchanges: first.repair_exchanges,
        removed_edges: first.removed_edges,
        warnings: first.warnings,
    });

    let mut t = 0;
    let stop_reason = loop {
        let memory = FitMemory {
            t,
            current: iterations[t].graph.clone(),
            current_score: score,
            previous: t.checked_sub(1).map(|p| (iterations[p].graph.clone(), iterations[p].score)),
        };
        let bindings = BTreeMap::from([(MEMORY.to_string(), render_memory(&memory))]);
        let context = json!({ "nodes": nodes, "memory": memory });
        let next = ask(env, templates::AMENDMENT, &bindings, context)
            .and_then(|ex| settle(env, ex, &memory.current, limits.reprompt_budget))
            .map_err(|e| abort(&iterations, e))?;
        t += 1;
        let next_score = fit_with_cap(&next.graph, ad, limits.alpha, limits.parent_cap)?.score;
        let reason = limits.stop.check(t, &memory.current, &next.graph, score, next_score);
        iterations.push(DiscoveryIteration {
            t,
            graph: next.graph,
            score: next_score,
            exchange: next.exchange,
            repair_exchanges: next.repair_exchanges,
            removed_edges: next.removed_edges,
            warnings: next.warnings,
        });
        score = next_score;
        if let Some(r) = reason {
            break r;
        }
    };
    let last = iterations.last().expect("at least one iteration");
    Ok(DiscoveryTrace {
        final_graph: last.graph.clone(),
        final_score: last.score,
        stop_reason,
        iterations,
    })
}
