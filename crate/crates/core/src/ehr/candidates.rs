use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EhrError, TransitionMatrix};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_CANDIDATES: usize = 50;

/// A candidate disease and its strongest transition probability from the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub score: f64,
}

/// Every disease `b` with `at[a][b] > epsilon` for at least one history disease
/// `a`, ranked by the maximum such probability, ties in registry order.
pub fn select_candidates(
    history: &BTreeSet<usize>,
    at: &TransitionMatrix,
    epsilon: f64,
    max_candidates: usize,
) -> Result<Vec<Candidate>, EhrError> {
    if history.is_empty() {
        return Err(EhrError::EmptyHistory);
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(EhrError::InvalidEpsilon(epsilon));
    }
    let n = at.size();
    let mut best = vec![0.0f64; n];
    for &a in history {
        for (b, &p) in at.row(a).iter().enumerate() {
            if p > best[b] {
                best[b] = p;
            }
        }
    }
    let mut ranked: Vec<usize> = (0..n).filter(|&b| best[b] > epsilon).collect();
    // stable sort keeps registry order among equal scores
    ranked.sort_by(|&x, &y| best[y].total_cmp(&best[x]));
    ranked.truncate(max_candidates);
    Ok(ranked
        .into_iter()
        .map(|b| Candidate {
            code: at.registry().code(b).to_string(),
            score: best[b],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{build_transition_matrix, parse_cohort, CodeRegistry};
    use std::sync::Arc;

    fn c1_matrix() -> TransitionMatrix {
        let reg = Arc::new(CodeRegistry::from_codes(&["A", "B", "C"]).unwrap());
        let c = parse_cohort(
            r#"{"patient_id":"p1","visits":[["A"],["B"]]}
{"patient_id":"p2","visits":[["A"],["A","C"]]}
{"patient_id":"p3","visits":[["B"]]}"#,
            reg,
        )
        .unwrap();
        build_transition_matrix(&c)
    }

    fn codes(c: &[Candidate]) -> Vec<&str> {
        c.iter().map(|c| c.code.as_str()).collect()
    }

    #[test]
    fn examples_on_c1() {
        let at = c1_matrix();
        let a: BTreeSet<usize> = [0].into();
        assert_eq!(codes(&select_candidates(&a, &at, 0.4, 50).unwrap()), vec!["A", "B", "C"]);
        assert_eq!(codes(&select_candidates(&a, &at, 0.6, 50).unwrap()), vec!["A"]);
        let b: BTreeSet<usize> = [1].into();
        assert!(select_candidates(&b, &at, 0.0, 50).unwrap().is_empty());
    }

    #[test]
    fn truncation_and_errors() {
        let at = c1_matrix();
        let a: BTreeSet<usize> = [0].into();
        assert_eq!(codes(&select_candidates(&a, &at, 0.0, 2).unwrap()), vec!["A", "B"]);
        assert!(matches!(
            select_candidates(&BTreeSet::new(), &at, 0.1, 5),
            Err(EhrError::EmptyHistory)
        ));
        assert!(matches!(select_candidates(&a, &at, 1.0, 5), Err(EhrError::InvalidEpsilon(_))));
    }

    #[test]
    fn union_over_history() {
        let at = c1_matrix();
        let ab: BTreeSet<usize> = [0, 1].into();
        assert_eq!(codes(&select_candidates(&ab, &at, 0.4, 50).unwrap()), vec!["A", "B", "C"]);
    }
}
