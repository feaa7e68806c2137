use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fnv1a, CodeKind, MedicalCode, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
struct KindVocab {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl KindVocab {
    fn insert(&mut self, code: &str) {
        if !self.index.contains_key(code) {
            self.index.insert(code.to_string(), self.codes.len());
            self.codes.push(code.to_string());
        }
    }
}

impl From<Vec<String>> for KindVocab {
    fn from(codes: Vec<String>) -> Self {
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        KindVocab { codes, index }
    }
}

impl From<KindVocab> for Vec<String> {
    fn from(v: KindVocab) -> Self {
        v.codes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum Grouping {
    /// `fnv1a(code) mod n_label_groups`; defined for every code, seen or not.
    Hashed,
    Explicit { groups: BTreeMap<String, usize> },
}

/// Per-kind code ↔ index maps plus the diagnosis → label-group map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeVocabulary {
    diagnoses: KindVocab,
    procedures: KindVocab,
    medications: KindVocab,
    n_label_groups: usize,
    grouping: Grouping,
}

impl CodeVocabulary {
    fn kind(&self, kind: CodeKind) -> &KindVocab {
        match kind {
            CodeKind::Diagnosis => &self.diagnoses,
            CodeKind::Procedure => &self.procedures,
            CodeKind::Medication => &self.medications,
        }
    }

    fn kind_mut(&mut self, kind: CodeKind) -> &mut KindVocab {
        match kind {
            CodeKind::Diagnosis => &mut self.diagnoses,
            CodeKind::Procedure => &mut self.procedures,
            CodeKind::Medication => &mut self.medications,
        }
    }

    /// Number of known codes of one kind. Embedding tables reserve one more
    /// row for unknown codes, at index `len(kind)`.
    pub fn len(&self, kind: CodeKind) -> usize {
        self.kind(kind).codes.len()
    }

    pub fn is_empty(&self) -> bool {
        CodeKind::ALL.iter().all(|&k| self.len(k) == 0)
    }

    pub fn unk_index(&self, kind: CodeKind) -> usize {
        self.len(kind)
    }

    pub fn index_of(&self, kind: CodeKind, code: &str) -> Option<usize> {
        self.kind(kind).index.get(code).copied()
    }

    pub fn code_at(&self, kind: CodeKind, index: usize) -> Option<&str> {
        self.kind(kind).codes.get(index).map(String::as_str)
    }

    pub fn codes(&self, kind: CodeKind) -> &[String] {
        &self.kind(kind).codes
    }

    pub fn resolve(&self, kind: CodeKind, code: &str) -> Option<MedicalCode> {
        self.index_of(kind, code).map(|vocab_index| MedicalCode {
            kind,
            code: code.to_string(),
            vocab_index,
        })
    }

    /// Index used for embedding lookup: the code's own row or the UNK row.
    pub fn embedding_index(&self, kind: CodeKind, code: &str) -> usize {
        self.index_of(kind, code).unwrap_or_else(|| self.unk_index(kind))
    }

    pub fn n_label_groups(&self) -> usize {
        self.n_label_groups
    }

    /// Label category of a diagnosis code. Hashed grouping covers unseen
    /// codes too; explicit grouping returns `None` for unmapped codes.
    pub fn label_of(&self, diagnosis: &str) -> Option<usize> {
        match &self.grouping {
            Grouping::Hashed => Some((fnv1a(diagnosis.as_bytes()) % self.n_label_groups as u64) as usize),
            Grouping::Explicit { groups } => groups.get(diagnosis).copied(),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn collect(cohort: &[PatientRecord], n_label_groups: usize, grouping: Grouping) -> CodeVocabulary {
    let mut vocab = CodeVocabulary {
        diagnoses: KindVocab::default(),
        procedures: KindVocab::default(),
        medications: KindVocab::default(),
        n_label_groups,
        grouping,
    };
    for record in cohort {
        for v in &record.visits {
            for (kind, code) in v.iter_codes() {
                vocab.kind_mut(kind).insert(code);
            }
        }
    }
    vocab
}

/// Builds a vocabulary in first-appearance order with hashed label groups.
pub fn build_vocabulary(cohort: &[PatientRecord], n_label_groups: usize) -> Result<CodeVocabulary> {
    if n_label_groups == 0 {
        return Err(Error::Argument("n_label_groups must be positive".into()));
    }
    if cohort.is_empty() {
        return Err(Error::Argument("cannot build a vocabulary from an empty cohort".into()));
    }
    Ok(collect(cohort, n_label_groups, Grouping::Hashed))
}

/// Builds a vocabulary whose label groups come from an explicit map; every
/// diagnosis code in the cohort must be mapped.
pub fn build_vocabulary_with_grouping(
    cohort: &[PatientRecord],
    groups: BTreeMap<String, usize>,
) -> Result<CodeVocabulary> {
    if cohort.is_empty() {
        return Err(Error::Argument("cannot build a vocabulary from an empty cohort".into()));
    }
    let used: BTreeSet<usize> = groups.values().copied().collect();
    let n = used.len();
    if n == 0 {
        return Err(Error::Argument("label grouping is empty".into()));
    }
    if used.iter().copied().ne(0..n) {
        return Err(Error::Schema("label groups must be contiguous from 0".into()));
    }
    let vocab = collect(cohort, n, Grouping::Explicit { groups });
    if let Some(missing) = vocab.codes(CodeKind::Diagnosis).iter().find(|c| vocab.label_of(c).is_none()) {
        return Err(Error::Schema(format!("diagnosis code {missing:?} has no label group")));
    }
    Ok(vocab)
}

/// Reads a two-column `diagnosis_code,label_group` CSV; a header row is
/// skipped when its second column is not an integer.
pub fn load_label_grouping(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_label_grouping(file)
}

pub(crate) fn parse_label_grouping(reader: impl std::io::Read) -> Result<BTreeMap<String, usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut groups = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 2 columns, found {}", row.len()),
            });
        }
        match row[1].parse::<usize>() {
            Ok(g) => {
                groups.insert(row[0].to_string(), g);
            }
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::visit;

    fn cohort() -> Vec<PatientRecord> {
        vec![
            PatientRecord::new(
                "a",
                vec![visit(0.0, &["d1", "d2"], &["p1"], &["m1"]), visit(1.0, &["d3"], &[], &["m2"])],
            ),
            PatientRecord::new(
                "b",
                vec![visit(0.0, &["d4", "d1"], &[], &["m1"]), visit(1.0, &["d5"], &[], &[])],
            ),
        ]
    }

    #[test]
    fn counts_per_kind() {
        let v = build_vocabulary(&cohort(), 3).unwrap();
        assert_eq!(v.len(CodeKind::Diagnosis), 5);
        assert_eq!(v.len(CodeKind::Medication), 2);
        assert_eq!(v.len(CodeKind::Procedure), 1);
        assert_eq!(v.index_of(CodeKind::Diagnosis, "d1"), Some(0));
        assert_eq!(v.index_of(CodeKind::Diagnosis, "d4"), Some(3));
        assert_eq!(v.unk_index(CodeKind::Medication), 2);
        assert_eq!(v.embedding_index(CodeKind::Medication, "nope"), 2);
    }

    #[test]
    fn deterministic_and_serializable() {
        let a = build_vocabulary(&cohort(), 3).unwrap();
        let b = build_vocabulary(&cohort(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let json = serde_json::to_string(&a).unwrap();
        let back: CodeVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.index_of(CodeKind::Diagnosis, "d5"), Some(4));
    }

    #[test]
    fn zero_groups_rejected() {
        assert!(matches!(build_vocabulary(&cohort(), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn hashed_groups_in_range_and_total() {
        let v = build_vocabulary(&cohort(), 3).unwrap();
        for c in v.codes(CodeKind::Diagnosis) {
            assert!(v.label_of(c).unwrap() < 3);
        }
        assert!(v.label_of("never-seen").is_some());
    }

    #[test]
    fn explicit_grouping_all_zero() {
        let csv = "diagnosis_code,label_group\nd1,0\nd2,0\nd3,0\nd4,0\nd5,0\n";
        let groups = parse_label_grouping(csv.as_bytes()).unwrap();
        let v = build_vocabulary_with_grouping(&cohort(), groups).unwrap();
        assert_eq!(v.n_label_groups(), 1);
        assert!(v.codes(CodeKind::Diagnosis).iter().all(|c| v.label_of(c) == Some(0)));
    }

    #[test]
    fn explicit_grouping_must_cover_and_be_contiguous() {
        let partial = parse_label_grouping("d1,0\nd2,0\n".as_bytes()).unwrap();
        assert!(matches!(build_vocabulary_with_grouping(&cohort(), partial), Err(Error::Schema(_))));
        let gap = parse_label_grouping("d1,0\nd2,2\nd3,0\nd4,0\nd5,0\n".as_bytes()).unwrap();
        assert!(matches!(build_vocabulary_with_grouping(&cohort(), gap), Err(Error::Schema(_))));
    }
}
