#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dxcausal_core::causal::CausalDag;
use dxcausal_core::ehr::{CodeRegistry, Cohort, DiagnosisMatrix, PatientRecord};
use dxcausal_core::knowledge::{ingest_corpus, HashEmbedder};
use dxcausal_core::pipeline::RunConfig;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Compares against `tests/snapshots/<name>`. Set DXCAUSAL_UPDATE_SNAPSHOTS=1
/// to (re)write the file after reviewing the change.
pub fn assert_snapshot(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(name);
    if std::env::var_os("DXCAUSAL_UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing snapshot {}; rerun with DXCAUSAL_UPDATE_SNAPSHOTS=1", path.display()));
    assert_eq!(actual, expected, "snapshot {name} changed");
}

pub fn registry(n: usize) -> Arc<CodeRegistry> {
    let codes: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    Arc::new(CodeRegistry::from_codes(&codes).unwrap())
}

/// Raw visits as registry indices.
pub type RawCohort = Vec<Vec<Vec<usize>>>;

pub fn random_raw_cohort(rng: &mut impl Rng, max_patients: usize, n_codes: usize, max_visits: usize) -> RawCohort {
    let n_patients = rng.random_range(1..=max_patients);
    (0..n_patients)
        .map(|_| {
            let visits = rng.random_range(1..=max_visits);
            (0..visits)
                .map(|_| {
                    let mut v: Vec<usize> = (0..n_codes).filter(|_| rng.random_bool(0.35)).collect();
                    if v.is_empty() {
                        v.push(rng.random_range(0..n_codes));
                    }
                    v
                })
                .collect()
        })
        .collect()
}

pub fn to_cohort(raw: &RawCohort, reg: Arc<CodeRegistry>) -> Cohort {
    let patients = raw
        .iter()
        .enumerate()
        .map(|(i, visits)| PatientRecord::new(format!("p{i}"), visits.clone()).unwrap())
        .collect();
    Cohort::new(reg, patients).unwrap()
}

/// Straight double loop over patients and consecutive visit pairs.
pub fn oracle_transition(raw: &RawCohort, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let (mut num, mut den) = (0u32, 0u32);
            for visits in raw {
                for i in 0..visits.len().saturating_sub(1) {
                    if visits[i].contains(&a) {
                        den += 1;
                        if visits[i].contains(&b) || visits[i + 1].contains(&b) {
                            num += 1;
                        }
                    }
                }
            }
            out[a][b] = if den == 0 { 0.0 } else { num as f64 / den as f64 };
        }
    }
    out
}

pub fn oracle_diagnosis(raw: &RawCohort, n: usize) -> Vec<Vec<u8>> {
    raw.iter()
        .map(|visits| (0..n).map(|c| u8::from(visits.iter().any(|v| v.contains(&c)))).collect())
        .collect()
}

pub fn matrix(rows: &[Vec<u8>]) -> DiagnosisMatrix {
    let n = rows.first().map_or(0, Vec::len);
    let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
    DiagnosisMatrix::from_rows(registry(n), ids, rows)
}

/// Direct-count log-likelihood: every (patient, node) term re-counts the
/// matching parent configuration over all patients. No parent cap.
pub fn oracle_loglik(rows: &[Vec<u8>], dag: &CausalDag, alpha: f64) -> f64 {
    let col = |name: &str| name[1..].parse::<usize>().unwrap();
    let mut total = 0.0;
    for row in rows {
        for node in dag.nodes() {
            let parents: Vec<usize> = dag.parents(node).iter().map(|p| col(p)).collect();
            let (mut ones, mut count) = (0.0, 0.0);
            for other in rows {
                if parents.iter().all(|&p| other[p] == row[p]) {
                    count += 1.0;
                    if other[col(node)] == 1 {
                        ones += 1.0;
                    }
                }
            }
            let p1 = (ones + alpha) / (count + 2.0 * alpha);
            total += if row[col(node)] == 1 { p1.ln() } else { (1.0 - p1).ln() };
        }
    }
    total
}

/// Random DAG on `nodes`: a random order, then forward edges only.
pub fn random_dag(rng: &mut impl Rng, nodes: &[String], max_edges: usize) -> CausalDag {
    let mut order = nodes.to_vec();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            pairs.push((order[i].clone(), order[j].clone()));
        }
    }
    pairs.shuffle(rng);
    let k = rng.random_range(0..=max_edges.min(pairs.len()));
    pairs.truncate(k);
    CausalDag::new(nodes.iter().cloned(), pairs).unwrap()
}

/// Kahn's algorithm; true when every node can be ordered.
pub fn is_topologically_sortable(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> bool {
    let mut remaining: BTreeSet<String> = nodes.clone();
    let mut live: Vec<(String, String)> = edges.iter().cloned().collect();
    loop {
        let Some(free) = remaining.iter().find(|n| !live.iter().any(|(_, b)| b == *n)).cloned() else {
            return remaining.is_empty();
        };
        remaining.remove(&free);
        live.retain(|(a, _)| *a != free);
    }
}

/// Samples from A -> B, A -> C, B -> D, C -> D with strong dependencies.
pub fn four_node_rows(rng: &mut impl Rng, n: usize) -> Vec<Vec<u8>> {
    (0..n)
        .map(|_| {
            let a = rng.random_bool(0.5);
            let b = rng.random_bool(if a { 0.9 } else { 0.1 });
            let c = rng.random_bool(if a { 0.85 } else { 0.15 });
            let d = rng.random_bool(match (b, c) {
                (true, true) => 0.95,
                (true, false) | (false, true) => 0.5,
                (false, false) => 0.05,
            });
            [a, b, c, d].iter().map(|&x| u8::from(x)).collect()
        })
        .collect()
}

pub const FIXTURE_SEED: u64 = 7;

/// A run config over the fixture files writing into `root`, with the
/// fixture corpus embedded under `root/store`.
pub fn fixture_config(root: &Path, provider_toml: &str, extra_toml: &str) -> RunConfig {
    let fx = fixtures();
    let store = root.join("store");
    if !store.exists() {
        ingest_corpus(fx.join("corpus.jsonl"), &HashEmbedder::new(FIXTURE_SEED), "Fixture disease articles, one document per section")
            .unwrap()
            .save(&store)
            .unwrap();
    }
    let text = format!(
        r#"
registry = "{reg}"
train_cohort = "{train}"
test_cohort = "{test}"
store_dir = "{store}"
runs_dir = "{runs}"
seed = {FIXTURE_SEED}
{extra_toml}

[provider]
{provider_toml}

[rates]
input_per_1k = 0.0003
output_per_1k = 0.0004
"#,
        reg = fx.join("codes.jsonl").display(),
        train = fx.join("train.jsonl").display(),
        test = fx.join("test5.jsonl").display(),
        store = store.display(),
        runs = root.join("runs").display(),
    );
    RunConfig::from_toml(&text).unwrap()
}

pub const RULE_BASED: &str = r#"kind = "rule_based""#;
