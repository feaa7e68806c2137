use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CodeKind, CodeVocabulary, PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVisit {
    time: f64,
    #[serde(default)]
    diagnoses: Vec<String>,
    #[serde(default)]
    procedures: Vec<String>,
    #[serde(default)]
    medications: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatient {
    patient_id: String,
    visits: Vec<RawVisit>,
}

/// Counters collected while reading a cohort file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    /// Patients dropped for having fewer than two visits.
    pub dropped_short: usize,
    /// Duplicate code entries removed inside a visit.
    pub duplicate_codes: usize,
    /// Code occurrences absent from the supplied vocabulary.
    pub unknown_codes: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub records: Vec<PatientRecord>,
    pub report: LoadReport,
}

/// Reads a JSONL cohort from disk.
pub fn load_cohort(path: impl AsRef<Path>, vocab: Option<&CodeVocabulary>) -> Result<LoadedCohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_cohort(BufReader::new(file), vocab)
}

/// Parses JSONL cohort text. Records come back sorted by patient id.
pub fn parse_cohort(reader: impl Read, vocab: Option<&CodeVocabulary>) -> Result<LoadedCohort> {
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let raw: RawPatient = serde_json::from_str(&line).map_err(|e| {
            if e.to_string().contains("unknown field") {
                Error::Schema(format!("line {line_no}: {e}"))
            } else {
                Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                }
            }
        })?;
        if !seen.insert(raw.patient_id.clone()) {
            return Err(Error::Schema(format!(
                "line {line_no}: duplicate patient_id {:?}",
                raw.patient_id
            )));
        }
        let mut visits = Vec::with_capacity(raw.visits.len());
        for rv in raw.visits {
            if !rv.time.is_finite() {
                return Err(Error::Schema(format!("line {line_no}: non-finite visit time")));
            }
            let mut dedup = |codes: Vec<String>| {
                let n = codes.len();
                let set: BTreeSet<String> = codes.into_iter().collect();
                report.duplicate_codes += n - set.len();
                set
            };
            visits.push(Visit {
                time: rv.time,
                index_t: 0,
                diagnoses: dedup(rv.diagnoses),
                procedures: dedup(rv.procedures),
                medications: dedup(rv.medications),
            });
        }
        if visits.len() < 2 {
            report.dropped_short += 1;
            continue;
        }
        let record = PatientRecord::new(raw.patient_id, visits);
        if let Some(vocab) = vocab {
            report.unknown_codes += record
                .visits
                .iter()
                .flat_map(|v| v.iter_codes())
                .filter(|(k, c)| vocab.index_of(*k, c).is_none())
                .count();
        }
        records.push(record);
    }
    if report.dropped_short > 0 {
        log::warn!("dropped {} patients with fewer than two visits", report.dropped_short);
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(LoadedCohort { records, report })
}

pub(crate) fn record_to_line(record: &PatientRecord) -> Result<String> {
    let raw = RawPatient {
        patient_id: record.patient_id.clone(),
        visits: record
            .visits
            .iter()
            .map(|v| RawVisit {
                time: v.time,
                diagnoses: v.codes(CodeKind::Diagnosis).iter().cloned().collect(),
                procedures: v.codes(CodeKind::Procedure).iter().cloned().collect(),
                medications: v.codes(CodeKind::Medication).iter().cloned().collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&raw)?)
}

/// Writes records as JSONL (one patient per line), atomically.
pub fn write_cohort(path: impl AsRef<Path>, records: &[PatientRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&record_to_line(r)?);
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}
