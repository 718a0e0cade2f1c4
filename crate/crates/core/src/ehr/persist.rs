//! Line-delimited matrix files.
//!
//! Line 1 is a JSON header carrying the format tag, version and the full
//! registry in row/column order. Every following line is one matrix row:
//! a JSON array of `f64` for transition matrices, a `0`/`1` string for
//! diagnosis matrices. Floats use shortest round-trip formatting so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CodeRegistry, DiagnosisMatrix, DiseaseCode, EhrError, TransitionMatrix};

pub const MATRIX_FORMAT_VERSION: u32 = 1;
const TRANSITION_TAG: &str = "dxcausal.transition";
const DIAGNOSIS_TAG: &str = "dxcausal.diagnosis";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    registry: Vec<DiseaseCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patients: Option<Vec<String>>,
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>, EhrError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| EhrError::io(parent, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| EhrError::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_line(out: &mut impl Write, path: &Path, line: &str) -> Result<(), EhrError> {
    out.write_all(line.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| EhrError::io(path, e))
}

pub fn write_transition_matrix(path: impl AsRef<Path>, at: &TransitionMatrix) -> Result<(), EhrError> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let header = Header {
        format: TRANSITION_TAG.into(),
        version: MATRIX_FORMAT_VERSION,
        registry: at.registry().codes().to_vec(),
        patients: None,
    };
    write_line(&mut out, path, &serde_json::to_string(&header).expect("serializable"))?;
    for i in 0..at.size() {
        let row = serde_json::to_string(at.row(i)).expect("finite floats");
        write_line(&mut out, path, &row)?;
    }
    out.flush().map_err(|e| EhrError::io(path, e))
}

pub fn write_diagnosis_matrix(path: impl AsRef<Path>, ad: &DiagnosisMatrix) -> Result<(), EhrError> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let header = Header {
        format: DIAGNOSIS_TAG.into(),
        version: MATRIX_FORMAT_VERSION,
        registry: ad.registry().codes().to_vec(),
        patients: Some(ad.patient_ids().to_vec()),
    };
    write_line(&mut out, path, &serde_json::to_string(&header).expect("serializable"))?;
    let mut buf = String::with_capacity(ad.n_codes());
    for p in 0..ad.n_patients() {
        buf.clear();
        for &v in ad.row(p) {
            let _ = write!(buf, "{v}");
        }
        write_line(&mut out, path, &format!("\"{buf}\""))?;
    }
    out.flush().map_err(|e| EhrError::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>, EhrError> {
    let f = std::fs::File::open(path).map_err(|e| EhrError::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EhrError::io(path, e))
}

fn read_header(lines: &[String], tag: &str) -> Result<(Header, Arc<CodeRegistry>), EhrError> {
    let first = lines.first().ok_or_else(|| EhrError::Format("missing header".into()))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| EhrError::Format(format!("bad header: {e}")))?;
    if header.format != tag {
        return Err(EhrError::Format(format!("expected {tag}, found {}", header.format)));
    }
    if header.version != MATRIX_FORMAT_VERSION {
        return Err(EhrError::Format(format!("unsupported version {}", header.version)));
    }
    let registry = Arc::new(CodeRegistry::new(header.registry.clone())?);
    Ok((header, registry))
}

pub fn read_transition_matrix(path: impl AsRef<Path>) -> Result<TransitionMatrix, EhrError> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let (_, registry) = read_header(&lines, TRANSITION_TAG)?;
    let n = registry.len();
    let rows = &lines[1..];
    if rows.len() != n {
        return Err(EhrError::Format(format!("expected {n} rows, found {}", rows.len())));
    }
    let mut entries = Vec::with_capacity(n * n);
    for (i, line) in rows.iter().enumerate() {
        let row: Vec<f64> = serde_json::from_str(line)
            .map_err(|e| EhrError::Format(format!("row {}: {e}", i + 1)))?;
        if row.len() != n || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EhrError::Format(format!("row {}: bad width or value", i + 1)));
        }
        entries.extend(row);
    }
    Ok(TransitionMatrix::from_parts(registry, entries))
}

pub fn read_diagnosis_matrix(path: impl AsRef<Path>) -> Result<DiagnosisMatrix, EhrError> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let (header, registry) = read_header(&lines, DIAGNOSIS_TAG)?;
    let patients = header
        .patients
        .ok_or_else(|| EhrError::Format("diagnosis header lacks patients".into()))?;
    let rows = &lines[1..];
    if rows.len() != patients.len() {
        return Err(EhrError::Format(format!(
            "expected {} rows, found {}",
            patients.len(),
            rows.len()
        )));
    }
    let n = registry.len();
    let mut entries = Vec::with_capacity(n * patients.len());
    for (i, line) in rows.iter().enumerate() {
        let row: String = serde_json::from_str(line)
            .map_err(|e| EhrError::Format(format!("row {}: {e}", i + 1)))?;
        if row.len() != n {
            return Err(EhrError::Format(format!("row {}: width {} != {n}", i + 1, row.len())));
        }
        for ch in row.chars() {
            entries.push(match ch {
                '0' => 0,
                '1' => 1,
                other => return Err(EhrError::Format(format!("row {}: bad cell {other:?}", i + 1))),
            });
        }
    }
    Ok(DiagnosisMatrix::from_parts(registry, patients, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{build_diagnosis_matrix, build_transition_matrix, parse_cohort};

    #[test]
    fn round_trip_is_bit_exact() {
        let reg = Arc::new(CodeRegistry::from_codes(&["A", "B", "C"]).unwrap());
        // thirds and sevenths do not have short decimal forms
        let cohort = parse_cohort(
            r#"{"patient_id":"p1","visits":[["A"],["B"],["A"],["C"]]}
{"patient_id":"p2","visits":[["A","B"],["A"],["B","C"],["A"]]}
{"patient_id":"p3","visits":[["C"],["A"],["B"]]}"#,
            reg,
        )
        .unwrap();
        let at = build_transition_matrix(&cohort);
        let ad = build_diagnosis_matrix(&cohort);
        let dir = tempfile::tempdir().unwrap();
        write_transition_matrix(dir.path().join("t.jsonl"), &at).unwrap();
        write_diagnosis_matrix(dir.path().join("d.jsonl"), &ad).unwrap();
        let at2 = read_transition_matrix(dir.path().join("t.jsonl")).unwrap();
        let ad2 = read_diagnosis_matrix(dir.path().join("d.jsonl")).unwrap();
        let bits = |m: &TransitionMatrix| m.entries().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&at), bits(&at2));
        assert_eq!(ad, ad2);
    }

    #[test]
    fn wrong_tag_rejected() {
        let reg = Arc::new(CodeRegistry::from_codes(&["A"]).unwrap());
        let cohort = parse_cohort(r#"{"patient_id":"p","visits":[["A"]]}"#, reg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_diagnosis_matrix(&p, &build_diagnosis_matrix(&cohort)).unwrap();
        assert!(matches!(read_transition_matrix(&p), Err(EhrError::Format(_))));
    }
}
