use serde::{Deserialize, Serialize};

use super::{graph_diff, CausalDag};

pub const DEFAULT_T_MAX: usize = 5;
pub const DEFAULT_SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ConvergedGraph,
    ConvergedScore,
    Budget,
}

/// When to end the hypothesis-amendment loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub t_max: usize,
    pub score_tolerance: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            score_tolerance: DEFAULT_SCORE_TOLERANCE,
        }
    }
}

impl StopRule {
    /// Checked after producing graph `t` from graph `t - 1`.
    pub fn check(&self, t: usize, previous: &CausalDag, current: &CausalDag, prev_score: f64, score: f64) -> Option<StopReason> {
        // node sets always agree inside one discovery run
        if graph_diff(previous, current).map_or(false, |d| d == 0) {
            Some(StopReason::ConvergedGraph)
        } else if (score - prev_score).abs() < self.score_tolerance {
            Some(StopReason::ConvergedScore)
        } else if t >= self.t_max {
            Some(StopReason::Budget)
        } else {
            None
        }
    }
}
