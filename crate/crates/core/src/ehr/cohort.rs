use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EhrError;

/// A disease code with its human-readable label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseCode {
    pub code: String,
    #[serde(default)]
    pub name: String,
}

/// Ordered set of all known disease codes. Row and column order of every
/// matrix follows registry order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeRegistry {
    codes: Vec<DiseaseCode>,
    index: HashMap<String, usize>,
}

impl CodeRegistry {
    pub fn new(codes: Vec<DiseaseCode>) -> Result<Self, EhrError> {
        if codes.is_empty() {
            return Err(EhrError::EmptyRegistry);
        }
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.code.is_empty() {
                return Err(EhrError::Parse {
                    line: i + 1,
                    message: "empty disease code".into(),
                });
            }
            if index.insert(c.code.clone(), i).is_some() {
                return Err(EhrError::DuplicateCode(c.code.clone()));
            }
        }
        Ok(Self { codes, index })
    }

    /// Registry from bare codes with empty names. Handy for fixtures.
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Result<Self, EhrError> {
        Self::new(
            codes
                .iter()
                .map(|c| DiseaseCode {
                    code: c.as_ref().to_string(),
                    name: String::new(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn get(&self, idx: usize) -> &DiseaseCode {
        &self.codes[idx]
    }

    pub fn code(&self, idx: usize) -> &str {
        &self.codes[idx].code
    }

    /// Label for a code, falling back to the code itself when the name is empty.
    pub fn display_name(&self, code: &str) -> String {
        match self.index_of(code) {
            Some(i) if !self.codes[i].name.is_empty() => self.codes[i].name.clone(),
            _ => code.to_string(),
        }
    }

    pub fn codes(&self) -> &[DiseaseCode] {
        &self.codes
    }

    pub fn code_strings(&self) -> Vec<String> {
        self.codes.iter().map(|c| c.code.clone()).collect()
    }

    /// SHA-256 over the registry in line-delimited form, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(serde_json::to_string(c).expect("serializable").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

pub fn parse_registry(text: &str) -> Result<CodeRegistry, EhrError> {
    let mut codes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let code: DiseaseCode = serde_json::from_str(line).map_err(|e| EhrError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        codes.push(code);
    }
    CodeRegistry::new(codes)
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<CodeRegistry, EhrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EhrError::io(path, e))?;
    parse_registry(&text)
}

/// One patient: an ordered list of visits, each a sorted set of registry indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    visits: Vec<Vec<usize>>,
}

impl PatientRecord {
    /// Validates the visit structure. Codes are registry indices.
    pub fn new(patient_id: impl Into<String>, visits: Vec<Vec<usize>>) -> Result<Self, EhrError> {
        let patient_id = patient_id.into();
        if visits.is_empty() {
            return Err(EhrError::InvalidPatient {
                patient: patient_id,
                message: "no visits".into(),
            });
        }
        let mut sorted = Vec::with_capacity(visits.len());
        for (i, visit) in visits.into_iter().enumerate() {
            if visit.is_empty() {
                return Err(EhrError::InvalidPatient {
                    patient: patient_id,
                    message: format!("visit {} is empty", i + 1),
                });
            }
            let set: BTreeSet<usize> = visit.iter().copied().collect();
            if set.len() != visit.len() {
                return Err(EhrError::InvalidPatient {
                    patient: patient_id,
                    message: format!("visit {} repeats a code", i + 1),
                });
            }
            sorted.push(set.into_iter().collect());
        }
        Ok(Self {
            patient_id,
            visits: sorted,
        })
    }

    pub fn visits(&self) -> &[Vec<usize>] {
        &self.visits
    }

    /// m_p, the number of visits.
    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }

    /// Union of all visits, sorted by registry order.
    pub fn all_codes(&self) -> BTreeSet<usize> {
        self.visits.iter().flatten().copied().collect()
    }

    /// Union of every visit except the last: the history a prediction starts from.
    pub fn history(&self) -> BTreeSet<usize> {
        let n = self.visits.len();
        self.visits[..n.saturating_sub(1)]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    /// The held-out last visit.
    pub fn last_visit(&self) -> &[usize] {
        self.visits.last().expect("at least one visit")
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub registry: Arc<CodeRegistry>,
    patients: Vec<PatientRecord>,
    by_id: HashMap<String, usize>,
}

impl Cohort {
    pub fn new(registry: Arc<CodeRegistry>, patients: Vec<PatientRecord>) -> Result<Self, EhrError> {
        if patients.is_empty() {
            return Err(EhrError::EmptyCohort);
        }
        let mut by_id = HashMap::with_capacity(patients.len());
        for (i, p) in patients.iter().enumerate() {
            if by_id.insert(p.patient_id.clone(), i).is_some() {
                return Err(EhrError::DuplicatePatient(p.patient_id.clone()));
            }
            if let Some(&bad) = p.visits.iter().flatten().find(|&&c| c >= registry.len()) {
                return Err(EhrError::InvalidPatient {
                    patient: p.patient_id.clone(),
                    message: format!("code index {bad} outside registry"),
                });
            }
        }
        Ok(Self {
            registry,
            patients,
            by_id,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.by_id.get(id).map(|&i| &self.patients[i])
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    /// Same patients in a different order; used by permutation tests.
    pub fn reordered(&self, order: &[usize]) -> Result<Self, EhrError> {
        let patients = order.iter().map(|&i| self.patients[i].clone()).collect();
        Self::new(self.registry.clone(), patients)
    }

    /// SHA-256 over the cohort in its line format.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self.to_lines() {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// The cohort rendered back to its line-delimited file format.
    pub fn to_lines(&self) -> Vec<String> {
        self.patients
            .iter()
            .map(|p| {
                let rec = CohortLine {
                    patient_id: p.patient_id.clone(),
                    visits: p
                        .visits
                        .iter()
                        .map(|v| v.iter().map(|&c| self.registry.code(c).to_string()).collect())
                        .collect(),
                };
                serde_json::to_string(&rec).expect("serializable")
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortLine {
    patient_id: String,
    visits: Vec<Vec<String>>,
}

/// Parses the line-delimited cohort format against a registry.
pub fn parse_cohort(text: &str, registry: Arc<CodeRegistry>) -> Result<Cohort, EhrError> {
    let mut patients = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CohortLine = serde_json::from_str(line).map_err(|e| EhrError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.patient_id.is_empty() {
            return Err(EhrError::Parse {
                line: lineno,
                message: "empty patient_id".into(),
            });
        }
        if !seen.insert(rec.patient_id.clone()) {
            return Err(EhrError::DuplicatePatient(rec.patient_id));
        }
        let mut visits = Vec::with_capacity(rec.visits.len());
        for visit in &rec.visits {
            let mut idx = Vec::with_capacity(visit.len());
            for code in visit {
                let c = registry.index_of(code).ok_or_else(|| EhrError::UnknownCode {
                    line: lineno,
                    code: code.clone(),
                })?;
                idx.push(c);
            }
            visits.push(idx);
        }
        patients.push(PatientRecord::new(rec.patient_id, visits)?);
    }
    Cohort::new(registry, patients)
}

pub fn load_cohort(path: impl AsRef<Path>, registry: Arc<CodeRegistry>) -> Result<Cohort, EhrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EhrError::io(path, e))?;
    parse_cohort(&text, registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Arc<CodeRegistry> {
        Arc::new(CodeRegistry::from_codes(&["A", "B", "C"]).unwrap())
    }

    #[test]
    fn single_line_cohort() {
        let c = parse_cohort(r#"{"patient_id":"p1","visits":[["A"],["B"]]}"#, abc()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.patients()[0].visit_count(), 2);
    }

    #[test]
    fn fixture_c1_loads() {
        let text = r#"{"patient_id":"p1","visits":[["A"],["B"]]}
{"patient_id":"p2","visits":[["A"],["A","C"]]}
{"patient_id":"p3","visits":[["B"]]}
"#;
        let c = parse_cohort(text, abc()).unwrap();
        assert_eq!(c.patient_ids(), vec!["p1", "p2", "p3"]);
        assert_eq!(c.registry.code_strings(), vec!["A", "B", "C"]);
        assert_eq!(c.patient("p2").unwrap().visits()[1], vec![0, 2]);
    }

    #[test]
    fn duplicate_patient_rejected() {
        let text = "{\"patient_id\":\"p1\",\"visits\":[[\"A\"]]}\n{\"patient_id\":\"p1\",\"visits\":[[\"B\"]]}";
        assert!(matches!(parse_cohort(text, abc()), Err(EhrError::DuplicatePatient(id)) if id == "p1"));
    }

    #[test]
    fn unknown_code_rejected() {
        let err = parse_cohort(r#"{"patient_id":"p1","visits":[["Z"]]}"#, abc()).unwrap_err();
        assert!(matches!(err, EhrError::UnknownCode { line: 1, ref code } if code == "Z"));
    }

    #[test]
    fn malformed_and_empty() {
        assert!(matches!(parse_cohort("{not json", abc()), Err(EhrError::Parse { line: 1, .. })));
        assert!(matches!(parse_cohort("\n\n", abc()), Err(EhrError::EmptyCohort)));
        let empty_visit = r#"{"patient_id":"p1","visits":[["A"],[]]}"#;
        assert!(matches!(parse_cohort(empty_visit, abc()), Err(EhrError::InvalidPatient { .. })));
        let no_visits = r#"{"patient_id":"p1","visits":[]}"#;
        assert!(matches!(parse_cohort(no_visits, abc()), Err(EhrError::InvalidPatient { .. })));
        let repeated = r#"{"patient_id":"p1","visits":[["A","A"]]}"#;
        assert!(matches!(parse_cohort(repeated, abc()), Err(EhrError::InvalidPatient { .. })));
    }

    #[test]
    fn registry_rules() {
        let reg = parse_registry("{\"code\":\"428.0\",\"name\":\"Congestive heart failure\"}\n{\"code\":\"584.9\"}\n").unwrap();
        assert_eq!(reg.display_name("428.0"), "Congestive heart failure");
        assert_eq!(reg.display_name("584.9"), "584.9");
        assert!(matches!(
            parse_registry("{\"code\":\"A\"}\n{\"code\":\"A\"}"),
            Err(EhrError::DuplicateCode(_))
        ));
        assert!(matches!(parse_registry(""), Err(EhrError::EmptyRegistry)));
    }

    #[test]
    fn history_excludes_last_visit() {
        let p = PatientRecord::new("p", vec![vec![0], vec![1, 0], vec![2]]).unwrap();
        assert_eq!(p.history().into_iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(p.last_visit(), &[2]);
        assert_eq!(p.all_codes().len(), 3);
    }
}
