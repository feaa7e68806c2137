use std::collections::BTreeSet;

use super::{CodeVocabulary, PatientRecord, Visit};

/// One supervised example: visits `1..t-1` in full plus the medications and
/// procedures of visit `t`; the target is visit `t`'s diagnoses mapped to
/// label groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patient_id: String,
    /// 1-based index of the predicted visit.
    pub visit_index: usize,
    pub history: Vec<Visit>,
    pub target: BTreeSet<usize>,
    pub n_labels: usize,
}

impl Sample {
    pub fn multi_hot(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.n_labels];
        for &l in &self.target {
            y[l] = 1.0;
        }
        y
    }

    /// The final, partially observed visit.
    pub fn current_visit(&self) -> &Visit {
        self.history.last().expect("history is never empty")
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    /// Visits that produced no sample because no diagnosis mapped to a label.
    pub skipped: usize,
}

/// Extracts the `T-1` next-visit samples of one patient.
pub fn make_samples(record: &PatientRecord, vocab: &CodeVocabulary) -> SampleSet {
    let mut out = SampleSet::default();
    for t in 1..record.visits.len() {
        let current = &record.visits[t];
        let target: BTreeSet<usize> = current.diagnoses.iter().filter_map(|d| vocab.label_of(d)).collect();
        if target.is_empty() {
            out.skipped += 1;
            continue;
        }
        let mut history: Vec<Visit> = record.visits[..t].to_vec();
        let mut last = current.clone();
        last.diagnoses.clear();
        history.push(last);
        out.samples.push(Sample {
            patient_id: record.patient_id.clone(),
            visit_index: t + 1,
            history,
            target,
            n_labels: vocab.n_label_groups(),
        });
    }
    out
}

pub fn samples_for_cohort(records: &[PatientRecord], vocab: &CodeVocabulary) -> SampleSet {
    let mut all = SampleSet::default();
    for r in records {
        let s = make_samples(r, vocab);
        all.samples.extend(s.samples);
        all.skipped += s.skipped;
    }
    all
}
