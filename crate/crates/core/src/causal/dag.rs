use std::collections::BTreeSet;

use petgraph::algo::toposort;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use super::CausalError;

/// Directed acyclic graph over disease codes.
///
/// Serializes to the wire format `{"nodes": [..], "edges": [[from, to], ..]}`
/// with nodes and edges sorted, so equal graphs serialize identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WireDag")]
pub struct CausalDag {
    nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
}

#[derive(Deserialize)]
struct WireDag {
    nodes: Vec<String>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

impl TryFrom<WireDag> for CausalDag {
    type Error = CausalError;

    fn try_from(w: WireDag) -> Result<Self, Self::Error> {
        CausalDag::new(w.nodes, w.edges)
    }
}

impl CausalDag {
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self, CausalError>
    where
        N: IntoIterator,
        N::Item: Into<String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let nodes: BTreeSet<String> = nodes.into_iter().map(Into::into).collect();
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from == to {
                return Err(CausalError::SelfLoop(from));
            }
            if !nodes.contains(&from) || !nodes.contains(&to) {
                return Err(CausalError::DanglingEdge(from, to));
            }
            set.insert((from, to));
        }
        let dag = Self { nodes, edges: set };
        if !dag.is_acyclic() {
            return Err(CausalError::Cyclic);
        }
        Ok(dag)
    }

    /// The graph with every node and no relations.
    pub fn empty<N>(nodes: N) -> Self
    where
        N: IntoIterator,
        N::Item: Into<String>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: BTreeSet::new(),
        }
    }

    fn is_acyclic(&self) -> bool {
        let mut g: DiGraphMap<&str, ()> = DiGraphMap::new();
        for n in &self.nodes {
            g.add_node(n);
        }
        for (a, b) in &self.edges {
            g.add_edge(a, b, ());
        }
        toposort(&g, None).is_ok()
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&(from.to_string(), to.to_string()))
    }

    /// Parents of `node`, sorted.
    pub fn parents(&self, node: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, to)| to == node)
            .map(|(from, _)| from.as_str())
            .collect()
    }

    /// Undirected edge set, each pair ordered lexicographically.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|(a, b)| if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) })
            .collect()
    }

    /// Adds an edge if it keeps the graph acyclic. Returns whether it was added.
    pub fn try_add_edge(&mut self, from: &str, to: &str) -> bool {
        if from == to || !self.nodes.contains(from) || !self.nodes.contains(to) || self.has_edge(from, to) {
            return false;
        }
        self.edges.insert((from.to_string(), to.to_string()));
        if self.is_acyclic() {
            true
        } else {
            self.edges.remove(&(from.to_string(), to.to_string()));
            false
        }
    }

    /// Wire-format JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

/// Size of the symmetric difference of the two edge sets.
pub fn graph_diff(g1: &CausalDag, g2: &CausalDag) -> Result<usize, CausalError> {
    if g1.nodes != g2.nodes {
        return Err(CausalError::NodeSetMismatch);
    }
    Ok(g1.edges.symmetric_difference(&g2.edges).count())
}
