//! Longitudinal EHR data model, ingestion, vocabulary, samples, splits and
//! the synthetic cohort generator.

mod io;
mod samples;
mod split;
pub mod synth;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{load_cohort, parse_cohort, write_cohort, LoadReport, LoadedCohort};
pub use samples::{make_samples, samples_for_cohort, Sample, SampleSet};
pub use split::{split_cohort, CohortSplit, SplitRatios};
pub use vocab::{build_vocabulary, build_vocabulary_with_grouping, load_label_grouping, CodeVocabulary};

/// The three event categories carried by a visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
    Medication,
}

impl CodeKind {
    pub const ALL: [CodeKind; 3] = [CodeKind::Diagnosis, CodeKind::Procedure, CodeKind::Medication];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::Diagnosis => "diagnosis",
            CodeKind::Procedure => "procedure",
            CodeKind::Medication => "medication",
        }
    }

    /// Dense position in [`CodeKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A code resolved against a [`CodeVocabulary`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MedicalCode {
    pub kind: CodeKind,
    pub code: String,
    pub vocab_index: usize,
}

/// One clinical encounter.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    /// Fractional days since the cohort epoch.
    pub time: f64,
    /// 1-based position in the patient's history.
    pub index_t: usize,
    pub diagnoses: BTreeSet<String>,
    pub procedures: BTreeSet<String>,
    pub medications: BTreeSet<String>,
}

impl Visit {
    pub fn codes(&self, kind: CodeKind) -> &BTreeSet<String> {
        match kind {
            CodeKind::Diagnosis => &self.diagnoses,
            CodeKind::Procedure => &self.procedures,
            CodeKind::Medication => &self.medications,
        }
    }

    /// All codes of the visit, grouped by kind in [`CodeKind::ALL`] order.
    pub fn iter_codes(&self) -> impl Iterator<Item = (CodeKind, &str)> + '_ {
        CodeKind::ALL
            .into_iter()
            .flat_map(move |k| self.codes(k).iter().map(move |c| (k, c.as_str())))
    }

    pub fn n_codes(&self) -> usize {
        self.diagnoses.len() + self.procedures.len() + self.medications.len()
    }
}

/// Time-ordered visits of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Builds a record from unordered visits: sorts by time (stable) and
    /// assigns 1-based indices.
    pub fn new(patient_id: impl Into<String>, mut visits: Vec<Visit>) -> Self {
        visits.sort_by(|a, b| a.time.total_cmp(&b.time));
        for (i, v) in visits.iter_mut().enumerate() {
            v.index_t = i + 1;
        }
        PatientRecord {
            patient_id: patient_id.into(),
            visits,
        }
    }

    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }
}

/// Convenience constructor used by tests and the generator.
pub fn visit(time: f64, diagnoses: &[&str], procedures: &[&str], medications: &[&str]) -> Visit {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    Visit {
        time,
        index_t: 0,
        diagnoses: set(diagnoses),
        procedures: set(procedures),
        medications: set(medications),
    }
}

/// 64-bit FNV-1a, used wherever a hash must be stable across builds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
