use std::sync::Arc;

use super::cohort::{CodeRegistry, Cohort};

/// Disease succession probabilities, dense and row-major in registry order.
///
/// `get(a, b)` is the fraction of non-final visits containing `a` whose
/// same or next visit contains `b`. Rows are not distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    registry: Arc<CodeRegistry>,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub(crate) fn from_parts(registry: Arc<CodeRegistry>, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), registry.len() * registry.len());
        Self { registry, entries }
    }

    pub fn registry(&self) -> &Arc<CodeRegistry> {
        &self.registry
    }

    pub fn size(&self) -> usize {
        self.registry.len()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size() + to]
    }

    /// Entry by code; `None` when either code is unknown.
    pub fn get_by_code(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.get(self.registry.index_of(from)?, self.registry.index_of(to)?))
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.size();
        &self.entries[from * n..(from + 1) * n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Binary patient-by-disease occurrence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosisMatrix {
    registry: Arc<CodeRegistry>,
    patient_ids: Vec<String>,
    entries: Vec<u8>,
}

impl DiagnosisMatrix {
    pub(crate) fn from_parts(registry: Arc<CodeRegistry>, patient_ids: Vec<String>, entries: Vec<u8>) -> Self {
        assert_eq!(entries.len(), registry.len() * patient_ids.len());
        Self {
            registry,
            patient_ids,
            entries,
        }
    }

    /// Builds a matrix directly from rows. Values other than 0/1 are clamped to 1.
    pub fn from_rows(registry: Arc<CodeRegistry>, patient_ids: Vec<String>, rows: &[Vec<u8>]) -> Self {
        assert_eq!(rows.len(), patient_ids.len());
        let mut entries = Vec::with_capacity(rows.len() * registry.len());
        for row in rows {
            assert_eq!(row.len(), registry.len());
            entries.extend(row.iter().map(|&v| u8::from(v != 0)));
        }
        Self::from_parts(registry, patient_ids, entries)
    }

    pub fn registry(&self) -> &Arc<CodeRegistry> {
        &self.registry
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_codes(&self) -> usize {
        self.registry.len()
    }

    pub fn get(&self, patient: usize, code: usize) -> u8 {
        self.entries[patient * self.n_codes() + code]
    }

    pub fn row(&self, patient: usize) -> &[u8] {
        let n = self.n_codes();
        &self.entries[patient * n..(patient + 1) * n]
    }

    /// Column as 0/1 values over patients.
    pub fn column(&self, code: usize) -> Vec<u8> {
        (0..self.n_patients()).map(|p| self.get(p, code)).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.n_codes()];
        for p in 0..self.n_patients() {
            for (s, &v) in sums.iter_mut().zip(self.row(p)) {
                *s += v as usize;
            }
        }
        sums
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }
}

/// Counts, for every non-final visit containing `a`, whether `b` is in the
/// same or the next visit. A pair counts once per visit even when `b`
/// appears in both.
pub fn build_transition_matrix(cohort: &Cohort) -> TransitionMatrix {
    let n = cohort.registry.len();
    let mut numer = vec![0u64; n * n];
    let mut denom = vec![0u64; n];
    let mut successors = vec![false; n];
    for patient in cohort.patients() {
        for pair in patient.visits().windows(2) {
            let (cur, next) = (&pair[0], &pair[1]);
            successors.iter_mut().for_each(|s| *s = false);
            for &b in cur.iter().chain(next) {
                successors[b] = true;
            }
            for &a in cur {
                denom[a] += 1;
                let row = &mut numer[a * n..(a + 1) * n];
                for (cell, &hit) in row.iter_mut().zip(&successors) {
                    *cell += u64::from(hit);
                }
            }
        }
    }
    let entries = numer
        .iter()
        .enumerate()
        .map(|(i, &num)| match denom[i / n] {
            0 => 0.0,
            d => num as f64 / d as f64,
        })
        .collect();
    TransitionMatrix::from_parts(cohort.registry.clone(), entries)
}

/// One row per patient, `1` where the code appears in any visit.
pub fn build_diagnosis_matrix(cohort: &Cohort) -> DiagnosisMatrix {
    let n = cohort.registry.len();
    let mut entries = vec![0u8; cohort.len() * n];
    for (p, patient) in cohort.patients().iter().enumerate() {
        for &c in patient.visits().iter().flatten() {
            entries[p * n + c] = 1;
        }
    }
    DiagnosisMatrix::from_parts(cohort.registry.clone(), cohort.patient_ids(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::parse_cohort;

    fn c1() -> Cohort {
        let reg = Arc::new(CodeRegistry::from_codes(&["A", "B", "C"]).unwrap());
        parse_cohort(
            r#"{"patient_id":"p1","visits":[["A"],["B"]]}
{"patient_id":"p2","visits":[["A"],["A","C"]]}
{"patient_id":"p3","visits":[["B"]]}"#,
            reg,
        )
        .unwrap()
    }

    #[test]
    fn c1_transition_entries() {
        let at = build_transition_matrix(&c1());
        assert_eq!(at.get_by_code("A", "B"), Some(0.5));
        assert_eq!(at.get_by_code("A", "C"), Some(0.5));
        assert_eq!(at.get_by_code("A", "A"), Some(1.0));
        assert!(at.row(1).iter().all(|&v| v == 0.0));
        assert!(at.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn c1_diagnosis_rows() {
        let ad = build_diagnosis_matrix(&c1());
        assert_eq!(ad.row(0), &[1, 1, 0]);
        assert_eq!(ad.row(1), &[1, 0, 1]);
        assert_eq!(ad.row(2), &[0, 1, 0]);
        assert_eq!(ad.column_sums(), vec![2, 2, 1]);
    }

    #[test]
    fn single_visit_patient() {
        let reg = Arc::new(CodeRegistry::from_codes(&["A"]).unwrap());
        let c = parse_cohort(r#"{"patient_id":"p","visits":[["A"]]}"#, reg).unwrap();
        assert_eq!(build_diagnosis_matrix(&c).row(0), &[1]);
        assert_eq!(build_transition_matrix(&c).get(0, 0), 0.0);
    }

    #[test]
    fn same_and_next_visit_count_once() {
        let reg = Arc::new(CodeRegistry::from_codes(&["A", "B"]).unwrap());
        let c = parse_cohort(r#"{"patient_id":"p","visits":[["A","B"],["B"]]}"#, reg).unwrap();
        let at = build_transition_matrix(&c);
        assert_eq!(at.get(0, 1), 1.0);
        assert_eq!(at.get(1, 1), 1.0);
        assert_eq!(at.get(1, 0), 1.0);
    }
}
