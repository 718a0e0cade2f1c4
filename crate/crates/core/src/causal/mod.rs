//! Causal graph machinery: the DAG type and its wire format, tolerant parsing
//! of agent replies, cycle repair, Bernoulli-table log-likelihood scoring
//! against the diagnosis matrix, and an exhaustive search oracle for small
//! node sets.

mod acyclic;
mod dag;
mod fit;
mod parse;
mod search;
mod stop;

pub use acyclic::{enforce_acyclic, find_cycle_edges, AcyclicRepair, DEFAULT_REPROMPT_BUDGET};
pub use dag::{graph_diff, CausalDag};
pub use fit::{fit_loglikelihood, fit_with_cap, Cpt, Fit, NodeTable, DEFAULT_ALPHA, DEFAULT_PARENT_CAP};
pub use parse::{parse_dag, ParsedGraph};
pub use search::{brute_force_best_dag, BruteForceResult, MAX_BRUTE_FORCE_NODES};
pub use stop::{StopReason, StopRule, DEFAULT_SCORE_TOLERANCE, DEFAULT_T_MAX};

#[derive(Debug, thiserror::Error)]
pub enum CausalError {
    #[error("no parseable graph object in reply")]
    NoGraphFound,
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("edge {0:?} -> {1:?} references a node outside the graph")]
    DanglingEdge(String, String),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("node {0:?} is not a column of the diagnosis matrix")]
    UnknownNode(String),
    #[error("smoothing alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("graphs have different node sets")]
    NodeSetMismatch,
    #[error("brute-force search supports at most {max} nodes, got {got}")]
    TooManyNodes { got: usize, max: usize },
}
