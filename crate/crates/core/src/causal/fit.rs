use std::collections::BTreeMap;

use serde::Serialize;

use super::{CausalDag, CausalError};
use crate::ehr::DiagnosisMatrix;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_PARENT_CAP: usize = 5;

/// Bernoulli table for one node.
///
/// `prob_one[cfg]` is P(node = 1 | parents = cfg), where bit `j` of `cfg` is
/// the value of `parents[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeTable {
    pub parents: Vec<String>,
    /// Parents beyond the cap, excluded from the table.
    pub dropped_parents: Vec<String>,
    pub prob_one: Vec<f64>,
    pub ones: Vec<u64>,
    pub totals: Vec<u64>,
}

/// Conditional probability tables for every node of a fitted graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cpt {
    pub alpha: f64,
    pub nodes: BTreeMap<String, NodeTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub score: f64,
    pub cpt: Cpt,
}

struct Columns<'a> {
    ad: &'a DiagnosisMatrix,
    idx: BTreeMap<&'a str, usize>,
}

impl<'a> Columns<'a> {
    fn new(dag: &'a CausalDag, ad: &'a DiagnosisMatrix) -> Result<Self, CausalError> {
        let mut idx = BTreeMap::new();
        for n in dag.nodes() {
            let c = ad
                .registry()
                .index_of(n)
                .ok_or_else(|| CausalError::UnknownNode(n.clone()))?;
            idx.insert(n.as_str(), c);
        }
        Ok(Self { ad, idx })
    }

    fn value(&self, patient: usize, node: &str) -> u8 {
        self.ad.get(patient, self.idx[node])
    }
}

/// Fits smoothed Bernoulli tables and returns the data log-likelihood with
/// the default parent cap.
pub fn fit_loglikelihood(dag: &CausalDag, ad: &DiagnosisMatrix, alpha: f64) -> Result<Fit, CausalError> {
    fit_with_cap(dag, ad, alpha, DEFAULT_PARENT_CAP)
}

/// Score = sum over patients and graph nodes of log P(x | parents), each table
/// estimated as (ones + alpha) / (total + 2 alpha) per parent configuration.
/// Parents beyond `parent_cap` are dropped, weakest absolute phi correlation
/// with the child first.
pub fn fit_with_cap(
    dag: &CausalDag,
    ad: &DiagnosisMatrix,
    alpha: f64,
    parent_cap: usize,
) -> Result<Fit, CausalError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CausalError::InvalidAlpha(alpha));
    }
    let cols = Columns::new(dag, ad)?;
    let mut nodes = BTreeMap::new();
    for node in dag.nodes() {
        let (parents, dropped_parents) = cap_parents(&cols, node, dag.parents(node), parent_cap);
        let configs = 1usize << parents.len();
        let mut ones = vec![0u64; configs];
        let mut totals = vec![0u64; configs];
        for p in 0..ad.n_patients() {
            let cfg = config_of(&cols, p, &parents);
            totals[cfg] += 1;
            ones[cfg] += u64::from(cols.value(p, node));
        }
        let prob_one = ones
            .iter()
            .zip(&totals)
            .map(|(&k, &n)| (k as f64 + alpha) / (n as f64 + 2.0 * alpha))
            .collect();
        nodes.insert(
            node.clone(),
            NodeTable {
                parents: parents.into_iter().map(str::to_string).collect(),
                dropped_parents: dropped_parents.into_iter().map(str::to_string).collect(),
                prob_one,
                ones,
                totals,
            },
        );
    }
    let cpt = Cpt { alpha, nodes };
    let score = cpt.log_likelihood(ad)?;
    Ok(Fit { score, cpt })
}

fn config_of(cols: &Columns<'_>, patient: usize, parents: &[&str]) -> usize {
    parents
        .iter()
        .enumerate()
        .fold(0, |cfg, (j, par)| cfg | (usize::from(cols.value(patient, par)) << j))
}

fn cap_parents<'a>(
    cols: &Columns<'_>,
    child: &str,
    parents: Vec<&'a str>,
    cap: usize,
) -> (Vec<&'a str>, Vec<&'a str>) {
    if parents.len() <= cap {
        return (parents, Vec::new());
    }
    let mut ranked: Vec<(f64, usize)> = parents
        .iter()
        .enumerate()
        .map(|(i, par)| (phi(cols, child, par).abs(), i))
        .collect();
    // strongest first; earlier parent wins ties
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = ranked[..cap].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    let kept = keep.iter().map(|&i| parents[i]).collect();
    let dropped = (0..parents.len())
        .filter(|i| !keep.contains(i))
        .map(|i| parents[i])
        .collect();
    (kept, dropped)
}

/// Phi coefficient between two binary columns; 0 when either is constant.
fn phi(cols: &Columns<'_>, a: &str, b: &str) -> f64 {
    let mut n = [[0f64; 2]; 2];
    for p in 0..cols.ad.n_patients() {
        n[cols.value(p, a) as usize][cols.value(p, b) as usize] += 1.0;
    }
    let denom = (n[1][0] + n[1][1]) * (n[0][0] + n[0][1]) * (n[0][1] + n[1][1]) * (n[0][0] + n[1][0]);
    if denom == 0.0 {
        0.0
    } else {
        (n[1][1] * n[0][0] - n[1][0] * n[0][1]) / denom.sqrt()
    }
}

impl Cpt {
    /// Log-likelihood of `ad` under these tables, whatever their values.
    pub fn log_likelihood(&self, ad: &DiagnosisMatrix) -> Result<f64, CausalError> {
        let mut idx = BTreeMap::new();
        for n in self.nodes.keys() {
            let c = ad
                .registry()
                .index_of(n)
                .ok_or_else(|| CausalError::UnknownNode(n.clone()))?;
            idx.insert(n.as_str(), c);
        }
        let mut score = 0.0;
        for p in 0..ad.n_patients() {
            for (node, table) in &self.nodes {
                let cfg = table
                    .parents
                    .iter()
                    .enumerate()
                    .fold(0usize, |cfg, (j, par)| cfg | (usize::from(ad.get(p, idx[par.as_str()])) << j));
                let q = table.prob_one[cfg];
                score += if ad.get(p, idx[node.as_str()]) == 1 { q.ln() } else { (1.0 - q).ln() };
            }
        }
        Ok(score)
    }
}
