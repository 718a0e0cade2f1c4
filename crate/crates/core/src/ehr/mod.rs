//! Cohort data and the two data-driven matrices derived from it.
//!
//! A [`Cohort`] is a list of patients, each an ordered sequence of visits,
//! each visit a set of disease codes drawn from a [`CodeRegistry`]. From a
//! training cohort we derive the disease [`TransitionMatrix`] (how often a
//! disease is followed by another, in the same or the next visit) and the
//! binary patient-by-disease [`DiagnosisMatrix`]. Candidate selection for a
//! patient reads the transition matrix.

mod candidates;
mod cohort;
mod matrix;
mod persist;

pub use candidates::{select_candidates, Candidate, DEFAULT_EPSILON, DEFAULT_MAX_CANDIDATES};
pub use cohort::{load_cohort, load_registry, parse_cohort, parse_registry, Cohort, CodeRegistry, DiseaseCode, PatientRecord};
pub use matrix::{build_diagnosis_matrix, build_transition_matrix, DiagnosisMatrix, TransitionMatrix};
pub use persist::{
    read_diagnosis_matrix, read_transition_matrix, write_diagnosis_matrix, write_transition_matrix,
    MATRIX_FORMAT_VERSION,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum EhrError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown disease code {code:?}")]
    UnknownCode { line: usize, code: String },
    #[error("duplicate patient id {0:?}")]
    DuplicatePatient(String),
    #[error("duplicate disease code {0:?} in registry")]
    DuplicateCode(String),
    #[error("patient {patient:?}: {message}")]
    InvalidPatient { patient: String, message: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("diagnosis history is empty")]
    EmptyHistory,
    #[error("epsilon must lie in [0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("matrix file: {0}")]
    Format(String),
}

impl EhrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EhrError::Io {
            path: path.into(),
            source,
        }
    }
}
