use std::collections::BTreeSet;

use serde::Serialize;

use super::{fit_loglikelihood, CausalDag, CausalError};
use crate::ehr::DiagnosisMatrix;

pub const MAX_BRUTE_FORCE_NODES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub dag: CausalDag,
    pub score: f64,
    /// Number of DAGs scored.
    pub evaluated: usize,
}

/// Scores every DAG on `nodes` and returns the best one. Near-equal scores
/// (relative 1e-9) are broken by fewer edges, then by the lexicographically
/// smallest sorted edge list.
pub fn brute_force_best_dag(
    ad: &DiagnosisMatrix,
    nodes: &BTreeSet<String>,
    alpha: f64,
) -> Result<BruteForceResult, CausalError> {
    let n = nodes.len();
    if n > MAX_BRUTE_FORCE_NODES {
        return Err(CausalError::TooManyNodes {
            got: n,
            max: MAX_BRUTE_FORCE_NODES,
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CausalError::InvalidAlpha(alpha));
    }
    let names: Vec<&String> = nodes.iter().collect();
    let cols: Vec<Vec<u8>> = names
        .iter()
        .map(|c| {
            ad.registry()
                .index_of(c)
                .map(|i| ad.column(i))
                .ok_or_else(|| CausalError::UnknownNode((*c).clone()))
        })
        .collect::<Result<_, _>>()?;

    // decomposable: local[v][mask] with mask over all n nodes (bit v unused)
    let local: Vec<Vec<f64>> = (0..n)
        .map(|v| (0..1usize << n).map(|mask| local_score(&cols, v, mask, alpha)).collect())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut evaluated = 0;
    for code in 0..total {
        let mut rest = code;
        let mut parents = vec![0usize; n];
        let mut edges = Vec::new();
        for &(i, j) in &pairs {
            match rest % 3 {
                1 => {
                    parents[j] |= 1 << i;
                    edges.push((i, j));
                }
                2 => {
                    parents[i] |= 1 << j;
                    edges.push((j, i));
                }
                _ => {}
            }
            rest /= 3;
        }
        if !acyclic(&parents) {
            continue;
        }
        evaluated += 1;
        let score: f64 = (0..n).map(|v| local[v][parents[v]]).sum();
        edges.sort_unstable();
        let better = match &best {
            None => true,
            Some((bs, be)) => {
                let tol = 1e-9 * bs.abs().max(1.0);
                if score > bs + tol {
                    true
                } else if score >= bs - tol {
                    (edges.len(), &edges) < (be.len(), be)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((score, edges));
        }
    }
    let (_, edges) = best.expect("the empty graph is always a DAG");
    let dag = CausalDag::new(
        names.iter().map(|s| s.to_string()),
        edges.iter().map(|&(a, b)| (names[a].clone(), names[b].clone())),
    )?;
    let score = fit_loglikelihood(&dag, ad, alpha)?.score;
    Ok(BruteForceResult { dag, score, evaluated })
}

fn local_score(cols: &[Vec<u8>], v: usize, mask: usize, alpha: f64) -> f64 {
    if mask & (1 << v) != 0 {
        return f64::NAN;
    }
    let parents: Vec<usize> = (0..cols.len()).filter(|&b| mask & (1 << b) != 0).collect();
    let configs = 1usize << parents.len();
    let mut ones = vec![0f64; configs];
    let mut totals = vec![0f64; configs];
    let n_patients = cols.first().map_or(0, Vec::len);
    for p in 0..n_patients {
        let cfg = parents
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &b)| acc | ((cols[b][p] as usize) << j));
        totals[cfg] += 1.0;
        ones[cfg] += cols[v][p] as f64;
    }
    ones.iter()
        .zip(&totals)
        .map(|(&k, &t)| {
            let q = (k + alpha) / (t + 2.0 * alpha);
            k * q.ln() + (t - k) * (1.0 - q).ln()
        })
        .sum()
}

fn acyclic(parents: &[usize]) -> bool {
    let n = parents.len();
    let mut placed = 0usize;
    for _ in 0..n {
        let ready = (0..n).find(|&v| placed & (1 << v) == 0 && parents[v] & !placed == 0);
        match ready {
            Some(v) => placed |= 1 << v,
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::CodeRegistry;
    use std::sync::Arc;

    fn matrix(codes: &[&str], rows: &[Vec<u8>]) -> DiagnosisMatrix {
        let reg = Arc::new(CodeRegistry::from_codes(codes).unwrap());
        let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
        DiagnosisMatrix::from_rows(reg, ids, rows)
    }

    fn set(n: &[&str]) -> BTreeSet<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn independent_data_prefers_empty_graph() {
        let ad = matrix(&["A", "B"], &[vec![1, 1], vec![1, 0], vec![0, 1], vec![0, 0]]);
        let r = brute_force_best_dag(&ad, &set(&["A", "B"]), 1.0).unwrap();
        assert_eq!(r.dag.edge_count(), 0);
        assert_eq!(r.evaluated, 3);
    }

    #[test]
    fn copy_data_links_the_pair() {
        let rows: Vec<Vec<u8>> = [1, 1, 0, 1, 0, 0, 1, 0, 1, 1].iter().map(|&a| vec![a, a]).collect();
        let ad = matrix(&["A", "B"], &rows);
        let r = brute_force_best_dag(&ad, &set(&["A", "B"]), 1.0).unwrap();
        assert!(r.dag.has_edge("A", "B"), "lexicographic tie-break picks A -> B");
    }

    #[test]
    fn single_node_is_marginal() {
        let ad = matrix(&["A"], &[vec![1], vec![0], vec![0]]);
        let r = brute_force_best_dag(&ad, &set(&["A"]), 1.0).unwrap();
        let q: f64 = 2.0 / 5.0;
        assert!((r.score - (q.ln() + 2.0 * (1.0 - q).ln())).abs() < 1e-12);
    }

    #[test]
    fn dag_counts_match_known_sequence() {
        // labelled DAG counts: 1, 3, 25, 543, 29281
        let counts = [1, 3, 25, 543, 29281];
        let codes = ["A", "B", "C", "D", "E"];
        for n in 1..=5 {
            let ad = matrix(&codes[..n], &[vec![0; n], vec![1; n]]);
            let r = brute_force_best_dag(&ad, &set(&codes[..n]), 1.0).unwrap();
            assert_eq!(r.evaluated, counts[n - 1]);
        }
    }

    #[test]
    fn too_many_nodes() {
        let codes = ["A", "B", "C", "D", "E", "F"];
        let ad = matrix(&codes, &[vec![0; 6]]);
        assert!(matches!(
            brute_force_best_dag(&ad, &set(&codes), 1.0),
            Err(CausalError::TooManyNodes { got: 6, .. })
        ));
    }
}
