use std::collections::HashMap;
use std::convert::Infallible;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{CausalDag, ParsedGraph};

pub const DEFAULT_REPROMPT_BUDGET: usize = 3;

/// Outcome of [`enforce_acyclic`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcyclicRepair {
    pub dag: CausalDag,
    /// Edges removed to break cycles, in removal order.
    pub removed: Vec<(String, String)>,
    pub reprompts: usize,
    pub warnings: Vec<String>,
}

/// Indices (into `graph.edges`) of every edge lying on a directed cycle.
pub fn find_cycle_edges(graph: &ParsedGraph) -> Vec<usize> {
    let mut g = DiGraph::<(), usize>::new();
    let ids: HashMap<&str, _> = graph.nodes.iter().map(|n| (n.as_str(), g.add_node(()))).collect();
    for (i, (a, b)) in graph.edges.iter().enumerate() {
        g.add_edge(ids[a.as_str()], ids[b.as_str()], i);
    }
    let mut component = vec![usize::MAX; g.node_count()];
    for (c, scc) in tarjan_scc(&g).iter().enumerate() {
        if scc.len() > 1 {
            for n in scc {
                component[n.index()] = c;
            }
        }
    }
    let mut on_cycle: Vec<usize> = g
        .raw_edges()
        .iter()
        .filter(|e| {
            let c = component[e.source().index()];
            c != usize::MAX && c == component[e.target().index()]
        })
        .map(|e| e.weight)
        .collect();
    on_cycle.sort_unstable();
    on_cycle
}

/// Turns a parsed graph into a DAG.
///
/// While the graph is cyclic and budget remains, `reprompter` is asked for a
/// replacement graph. Whatever cycles survive are broken by deleting, one at a
/// time, the most recently listed edge that lies on a cycle.
pub fn enforce_acyclic<E>(
    mut graph: ParsedGraph,
    reprompt_budget: usize,
    mut reprompter: Option<&mut dyn FnMut(&ParsedGraph) -> Result<ParsedGraph, E>>,
) -> Result<AcyclicRepair, E> {
    let mut reprompts = 0;
    if let Some(ask) = reprompter.as_mut() {
        while reprompts < reprompt_budget && !find_cycle_edges(&graph).is_empty() {
            let mut next = ask(&graph)?;
            reprompts += 1;
            let mut warnings = std::mem::take(&mut graph.warnings);
            warnings.append(&mut next.warnings);
            next.warnings = warnings;
            graph = next;
        }
    }
    let mut removed = Vec::new();
    loop {
        let cyc = find_cycle_edges(&graph);
        let Some(&last) = cyc.last() else { break };
        let (a, b) = graph.edges.remove(last);
        graph.warnings.push(format!("removed edge {a} -> {b} to break a cycle"));
        log::warn!("removed edge {a} -> {b} to break a cycle");
        removed.push((a, b));
    }
    let dag = CausalDag::new(graph.nodes.iter().cloned(), graph.edges.iter().cloned())
        .expect("cycle-free parsed graph with validated endpoints");
    Ok(AcyclicRepair {
        dag,
        removed,
        reprompts,
        warnings: graph.warnings,
    })
}

impl ParsedGraph {
    /// Repairs without any reprompting.
    pub fn into_dag(self) -> AcyclicRepair {
        match enforce_acyclic::<Infallible>(self, 0, None) {
            Ok(r) => r,
            Err(never) => match never {},
        }
    }
}
