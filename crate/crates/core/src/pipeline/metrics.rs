use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// |truth ∩ ranked[..k]| / |truth|; 0 for an empty truth set. Repeated
/// codes in `ranked` count once.
pub fn recall_at_k(truth: &BTreeSet<String>, ranked: &[String], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let top: BTreeSet<&String> = ranked.iter().take(k).collect();
    let hits = truth.iter().filter(|c| top.contains(c)).count();
    hits as f64 / truth.len() as f64
}

/// Support-weighted mean of per-code F1 over `(truth, predicted)` pairs.
/// Codes that never occur in any truth set carry no weight.
pub fn weighted_f1(pairs: &[(BTreeSet<String>, BTreeSet<String>)]) -> f64 {
    #[derive(Default)]
    struct Counts {
        tp: u64,
        fp: u64,
        fn_: u64,
    }
    let mut per_code: BTreeMap<&str, Counts> = BTreeMap::new();
    for (truth, pred) in pairs {
        for c in truth.union(pred) {
            let e = per_code.entry(c.as_str()).or_default();
            match (truth.contains(c), pred.contains(c)) {
                (true, true) => e.tp += 1,
                (false, true) => e.fp += 1,
                (true, false) => e.fn_ += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let mut weighted = 0.0;
    let mut total_support = 0u64;
    for c in per_code.values() {
        let support = c.tp + c.fn_;
        if support == 0 {
            continue;
        }
        let f1 = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
        weighted += support as f64 * f1;
        total_support += support;
    }
    if total_support == 0 {
        0.0
    } else {
        weighted / total_support as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub truth: Vec<String>,
    pub predicted: usize,
    pub recall_at: BTreeMap<usize, f64>,
    /// Candidates appended after the predicted codes to reach the largest k.
    pub padded: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub n_patients: usize,
    pub n_failed: usize,
    pub w_f1: f64,
    pub recall_at: BTreeMap<usize, f64>,
    /// Patients whose ranked list needed candidate padding for R@k.
    pub padded_patients: usize,
    pub per_patient: Vec<PatientMetrics>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(codes: &[&str]) -> BTreeSet<String> {
        codes.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_fixture() {
        let ranked: Vec<String> = ["A", "X", "B"].iter().map(|s| s.to_string()).collect();
        assert_eq!(recall_at_k(&set(&["A", "B", "C"]), &ranked, 10), 2.0 / 3.0);
        assert_eq!(recall_at_k(&set(&["A", "B", "C"]), &ranked, 1), 1.0 / 3.0);
    }

    #[test]
    fn weighted_f1_fixture() {
        let pairs = vec![(set(&["A"]), set(&["A", "B"])), (set(&["B"]), set(&["B"]))];
        assert!((weighted_f1(&pairs) - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let pairs = vec![(set(&["A", "C"]), set(&["A", "C"])), (set(&["B"]), set(&["B"]))];
        assert_eq!(weighted_f1(&pairs), 1.0);
    }

    #[test]
    fn predicted_only_codes_have_no_weight() {
        // Z is never true: it lowers nothing but its own (excluded) F1
        let pairs = vec![(set(&["A"]), set(&["A", "Z"]))];
        assert_eq!(weighted_f1(&pairs), 1.0);
    }
}
