use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::{Map, Value};

use super::CausalError;

/// A graph as proposed by an agent: known nodes, edges in the order they
/// were listed, and anything that had to be dropped. Not yet checked for cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl ParsedGraph {
    pub fn new(nodes: BTreeSet<String>) -> Self {
        Self {
            nodes,
            edges: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Appends an edge, dropping self-loops, duplicates and unknown endpoints with a warning.
    pub fn push_edge(&mut self, from: &str, to: &str) {
        if !self.nodes.contains(from) || !self.nodes.contains(to) {
            let unknown = if self.nodes.contains(from) { to } else { from };
            self.warnings
                .push(format!("dropped edge {from} -> {to}: unknown node {unknown}"));
        } else if from == to {
            self.warnings.push(format!("dropped self-loop on {from}"));
        } else if self.edges.iter().any(|(a, b)| a == from && b == to) {
            self.warnings.push(format!("dropped duplicate edge {from} -> {to}"));
        } else {
            self.edges.push((from.to_string(), to.to_string()));
        }
    }
}

/// Extracts the first well-formed JSON object in `text` that describes a
/// graph, either as `{"edges": [[from, to], ..]}` (optionally nested under
/// another key) or as an adjacency map `{"A": ["B", ..], ..}`. The result's
/// node set is `allowed_nodes`.
pub fn parse_dag(text: &str, allowed_nodes: &BTreeSet<String>) -> Result<ParsedGraph, CausalError> {
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        if let Some(edges) = edge_list(&obj) {
            let mut graph = ParsedGraph::new(allowed_nodes.clone());
            for (from, to) in edges {
                graph.push_edge(&from, &to);
            }
            return Ok(graph);
        }
    }
    Err(CausalError::NoGraphFound)
}

fn edge_list(obj: &Map<String, Value>) -> Option<Vec<(String, String)>> {
    if let Some(edges) = obj.get("edges") {
        return edges_from_array(edges);
    }
    for key in ["dag", "graph", "causal_graph", "DAG"] {
        if let Some(Value::Object(inner)) = obj.get(key) {
            if let Some(edges) = edge_list(inner) {
                return Some(edges);
            }
        }
    }
    if obj.contains_key("nodes") {
        return Some(Vec::new());
    }
    adjacency(obj)
}

fn edges_from_array(v: &Value) -> Option<Vec<(String, String)>> {
    let items = v.as_array()?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let pair = match item {
            Value::Array(pair) if pair.len() == 2 => (as_code(&pair[0])?, as_code(&pair[1])?),
            Value::Object(o) => {
                let pick = |keys: &[&str]| keys.iter().find_map(|k| o.get(*k).and_then(as_code));
                (
                    pick(&["from", "source", "cause", "parent"])?,
                    pick(&["to", "target", "effect", "child"])?,
                )
            }
            _ => return None,
        };
        out.push(pair);
    }
    Some(out)
}

fn adjacency(obj: &Map<String, Value>) -> Option<Vec<(String, String)>> {
    if obj.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for (from, targets) in obj {
        for t in targets.as_array()? {
            out.push((from.clone(), as_code(t)?));
        }
    }
    Some(out)
}

fn as_code(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}
