//! Synthetic cohorts with planted, verifiable signal.
//!
//! Each patient carries one or more latent chronic conditions. A condition
//! walks a deterministic stage chain (one stage per visit from its onset,
//! saturating at the last stage) and at every visit emits its stage
//! diagnoses, its primary medication and, with some probability, its stage
//! procedure. Unrelated "routine" procedures and medications are sprinkled
//! on top. Two optional modifiers swap a condition's stage diagnoses for an
//! alternate set:
//!
//! * [`Modifier::LongGap`]: the gap since the previous visit is at least half
//!   of the patient's elapsed history, a signal visible only through visit
//!   times;
//! * [`Modifier::RepeatedMaintenance`]: the condition's maintenance drug is
//!   given at this visit and was already given at an earlier one, a signal
//!   visible through the medication meta-path structure.
//!
//! With `noise = 0` the diagnoses of every visit are a deterministic function
//! of the history (codes and times) that precedes them plus the visit's own
//! medications and procedures.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{CodeKind, CodeVocabulary, PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Distribution of the number of visits per patient (always at least 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisitLength {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    /// `1 + G` with `G ~ Geometric(p)` on `{1, 2, ...}`, so the mean is
    /// `1/p + 1` when uncapped.
    Geometric { p: f64, max: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    #[default]
    None,
    LongGap,
    RepeatedMaintenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_diagnoses: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub n_label_groups: usize,
    pub n_latent_conditions: usize,
    pub n_stages: usize,
    pub diagnoses_per_stage: usize,
    /// Inclusive range of conditions drawn per patient.
    pub conditions_per_patient: (usize, usize),
    pub visit_length: VisitLength,
    /// Probability that an emitted condition code is replaced by a uniformly
    /// random code of the same kind.
    pub noise: f64,
    pub procedure_prob: f64,
    pub routine_procedures_max: usize,
    pub routine_medications_max: usize,
    pub modifier: Modifier,
    pub maintenance_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 1000,
            n_diagnoses: 200,
            n_procedures: 80,
            n_medications: 60,
            n_label_groups: 50,
            n_latent_conditions: 8,
            n_stages: 4,
            diagnoses_per_stage: 3,
            conditions_per_patient: (1, 2),
            visit_length: VisitLength::Geometric { p: 0.4, max: Some(10) },
            noise: 0.0,
            procedure_prob: 0.5,
            routine_procedures_max: 2,
            routine_medications_max: 1,
            modifier: Modifier::None,
            maintenance_prob: 0.35,
        }
    }
}

impl GeneratorConfig {
    fn needs_alternates(&self) -> bool {
        self.modifier != Modifier::None
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.n_label_groups == 0 || self.n_latent_conditions == 0 || self.n_stages == 0 || self.diagnoses_per_stage == 0 {
            return bad("label groups, conditions, stages and diagnoses per stage must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise rate {} outside [0, 1)", self.noise));
        }
        for (name, p) in [("procedure_prob", self.procedure_prob), ("maintenance_prob", self.maintenance_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.conditions_per_patient;
        if lo == 0 || lo > hi || hi > self.n_latent_conditions {
            return bad(format!(
                "conditions_per_patient {:?} must satisfy 1 <= min <= max <= {}",
                self.conditions_per_patient, self.n_latent_conditions
            ));
        }
        if self.n_latent_conditions > self.n_diagnoses {
            return bad(format!(
                "{} latent conditions exceed the diagnosis vocabulary of {}",
                self.n_latent_conditions, self.n_diagnoses
            ));
        }
        let per = if self.needs_alternates() { 2 } else { 1 };
        let diag_needed = self.n_latent_conditions * self.n_stages * self.diagnoses_per_stage * per;
        if diag_needed > self.n_diagnoses {
            return bad(format!("conditions need {diag_needed} diagnosis codes, vocabulary has {}", self.n_diagnoses));
        }
        let proc_needed = self.n_latent_conditions * self.n_stages;
        if proc_needed > self.n_procedures {
            return bad(format!("conditions need {proc_needed} procedure codes, vocabulary has {}", self.n_procedures));
        }
        let maint = usize::from(self.modifier == Modifier::RepeatedMaintenance);
        let med_needed = self.n_latent_conditions * (1 + maint);
        if med_needed > self.n_medications {
            return bad(format!("conditions need {med_needed} medication codes, vocabulary has {}", self.n_medications));
        }
        match self.visit_length {
            VisitLength::Fixed { n } if n < 2 => bad("fixed visit length must be at least 2".into()),
            VisitLength::Uniform { min, max } if min < 2 || min > max => {
                bad(format!("uniform visit length [{min}, {max}] invalid (min 2)"))
            }
            VisitLength::Geometric { p, max } if !(p > 0.0 && p <= 1.0) || max.is_some_and(|m| m < 2) => {
                bad(format!("geometric visit length p={p} max={max:?} invalid"))
            }
            _ => Ok(()),
        }
    }
}

/// Stage and modifier state of one active condition at one visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveCondition {
    pub condition: usize,
    pub stage: usize,
    pub modified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitTruth {
    pub active: Vec<ActiveCondition>,
    /// Diagnoses the conditions meant to emit, before noise.
    pub planted_diagnoses: BTreeSet<String>,
    pub n_diagnosis_emissions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub conditions: Vec<usize>,
    /// Every code that any of the patient's conditions can emit.
    pub causal_codes: BTreeSet<(CodeKind, String)>,
    pub visits: Vec<VisitTruth>,
}

/// Generator-side knowledge used by oracles and acceptance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub noise: f64,
    pub diagnosis_universe: Vec<String>,
    pub condition_codes: Vec<BTreeSet<(CodeKind, String)>>,
    pub condition_diagnoses: Vec<BTreeSet<String>>,
    pub routine_codes: BTreeSet<(CodeKind, String)>,
    pub patients: BTreeMap<String, PatientTruth>,
}

impl GroundTruth {
    /// Codes causally linked to a label group: all codes of every condition
    /// able to emit a diagnosis in that group.
    pub fn causal_codes_for_label(&self, vocab: &CodeVocabulary, label: usize) -> BTreeSet<(CodeKind, String)> {
        let mut out = BTreeSet::new();
        for (c, diags) in self.condition_diagnoses.iter().enumerate() {
            if diags.iter().any(|d| vocab.label_of(d) == Some(label)) {
                out.extend(self.condition_codes[c].iter().cloned());
            }
        }
        out
    }

    /// Label scores from the latent state: the probability that each label
    /// group appears among visit `visit_index`'s diagnoses, treating codes
    /// as independent.
    pub fn oracle_label_scores(&self, patient_id: &str, visit_index: usize, vocab: &CodeVocabulary) -> Option<Vec<f64>> {
        let truth = self.patients.get(patient_id)?.visits.get(visit_index.checked_sub(1)?)?;
        let n_labels = vocab.n_label_groups();
        let background = self.noise * truth.n_diagnosis_emissions as f64 / self.diagnosis_universe.len().max(1) as f64;
        let mut log_absent = vec![0.0f64; n_labels];
        for code in &self.diagnosis_universe {
            let Some(label) = vocab.label_of(code) else { continue };
            let mut p = background;
            if truth.planted_diagnoses.contains(code) {
                p += 1.0 - self.noise;
            }
            log_absent[label] += (1.0 - p.min(1.0)).max(1e-300).ln();
        }
        Some(log_absent.into_iter().map(|la| 1.0 - la.exp()).collect())
    }
}

struct ConditionLayout {
    stage_diagnoses: Vec<Vec<String>>,
    alt_diagnoses: Vec<Vec<String>>,
    stage_procedures: Vec<String>,
    primary_med: String,
    maintenance_med: Option<String>,
}

struct Layout {
    conditions: Vec<ConditionLayout>,
    routine_procedures: Vec<String>,
    routine_medications: Vec<String>,
    diagnoses: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
}

fn code_names(prefix: char, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:04}")).collect()
}

fn build_layout(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Layout {
    let diagnoses = code_names('D', cfg.n_diagnoses);
    let procedures = code_names('P', cfg.n_procedures);
    let medications = code_names('M', cfg.n_medications);
    let mut d_pool = diagnoses.clone();
    let mut p_pool = procedures.clone();
    let mut m_pool = medications.clone();
    d_pool.shuffle(rng);
    p_pool.shuffle(rng);
    m_pool.shuffle(rng);
    let mut d_iter = d_pool.into_iter();
    let mut p_iter = p_pool.into_iter();
    let mut m_iter = m_pool.into_iter();
    let mut take = |n: usize| -> Vec<String> { d_iter.by_ref().take(n).collect() };
    let mut conditions = Vec::with_capacity(cfg.n_latent_conditions);
    for _ in 0..cfg.n_latent_conditions {
        let stage_diagnoses: Vec<_> = (0..cfg.n_stages).map(|_| take(cfg.diagnoses_per_stage)).collect();
        let alt_diagnoses: Vec<_> = if cfg.needs_alternates() {
            (0..cfg.n_stages).map(|_| take(cfg.diagnoses_per_stage)).collect()
        } else {
            Vec::new()
        };
        conditions.push(ConditionLayout {
            stage_diagnoses,
            alt_diagnoses,
            stage_procedures: p_iter.by_ref().take(cfg.n_stages).collect(),
            primary_med: m_iter.next().expect("validated medication budget"),
            maintenance_med: (cfg.modifier == Modifier::RepeatedMaintenance)
                .then(|| m_iter.next().expect("validated medication budget")),
        });
    }
    let mut routine_procedures: Vec<String> = p_iter.collect();
    let mut routine_medications: Vec<String> = m_iter.collect();
    routine_procedures.sort();
    routine_medications.sort();
    Layout {
        conditions,
        routine_procedures,
        routine_medications,
        diagnoses,
        procedures,
        medications,
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn draw_visit_count(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> usize {
    match cfg.visit_length {
        VisitLength::Fixed { n } => n,
        VisitLength::Uniform { min, max } => rng.random_range(min..=max),
        VisitLength::Geometric { p, max } => {
            let failures = Geometric::new(p).expect("validated p").sample(rng) as usize;
            let n = 2usize.saturating_add(failures);
            max.map_or(n, |m| n.min(m))
        }
    }
}

fn generate_patient(cfg: &GeneratorConfig, layout: &Layout, seed: u64, p: usize) -> (PatientRecord, PatientTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(p as u64 + 1)));
    let n_visits = draw_visit_count(cfg, &mut rng);
    let k = rng.random_range(cfg.conditions_per_patient.0..=cfg.conditions_per_patient.1);
    let mut conditions: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.n_latent_conditions, k).into_vec();
    conditions.sort_unstable();
    let onsets: Vec<usize> = (0..k)
        .map(|i| if i == 0 { 1 } else { rng.random_range(1..=(n_visits - 1).max(1)) })
        .collect();
    let mut times = Vec::with_capacity(n_visits);
    let mut t = round2(rng.random_range(0.0..365.0));
    for v in 0..n_visits {
        if v > 0 {
            t = round2(t + rng.random_range(7.0..180.0));
        }
        times.push(t);
    }

    let mut had_maintenance = vec![false; k];
    let mut visits = Vec::with_capacity(n_visits);
    let mut truths = Vec::with_capacity(n_visits);
    for v in 1..=n_visits {
        let time = times[v - 1];
        let long_gap = v >= 2 && (time - times[v - 2]) >= 0.5 * (time - times[0]);
        let mut diagnoses = BTreeSet::new();
        let mut procedures = BTreeSet::new();
        let mut medications = BTreeSet::new();
        let mut truth = VisitTruth {
            active: Vec::new(),
            planted_diagnoses: BTreeSet::new(),
            n_diagnosis_emissions: 0,
        };
        let noisy = |rng: &mut ChaCha8Rng, code: &str, universe: &[String]| -> String {
            if cfg.noise > 0.0 && rng.random_bool(cfg.noise) {
                universe[rng.random_range(0..universe.len())].clone()
            } else {
                code.to_string()
            }
        };
        for (slot, &c) in conditions.iter().enumerate() {
            if onsets[slot] > v {
                continue;
            }
            let lay = &layout.conditions[c];
            let stage = (v - onsets[slot]).min(cfg.n_stages - 1);
            let maintenance_now = cfg.modifier == Modifier::RepeatedMaintenance && rng.random_bool(cfg.maintenance_prob);
            let modified = match cfg.modifier {
                Modifier::None => false,
                Modifier::LongGap => long_gap,
                Modifier::RepeatedMaintenance => maintenance_now && had_maintenance[slot],
            };
            had_maintenance[slot] |= maintenance_now;
            let planted = if modified { &lay.alt_diagnoses[stage] } else { &lay.stage_diagnoses[stage] };
            for d in planted {
                truth.planted_diagnoses.insert(d.clone());
                truth.n_diagnosis_emissions += 1;
                diagnoses.insert(noisy(&mut rng, d, &layout.diagnoses));
            }
            medications.insert(noisy(&mut rng, &lay.primary_med, &layout.medications));
            if maintenance_now {
                let mm = lay.maintenance_med.as_deref().expect("maintenance drug allocated");
                medications.insert(noisy(&mut rng, mm, &layout.medications));
            }
            if rng.random_bool(cfg.procedure_prob) {
                procedures.insert(noisy(&mut rng, &lay.stage_procedures[stage], &layout.procedures));
            }
            truth.active.push(ActiveCondition {
                condition: c,
                stage,
                modified,
            });
        }
        if !layout.routine_procedures.is_empty() {
            for _ in 0..rng.random_range(0..=cfg.routine_procedures_max) {
                procedures.insert(layout.routine_procedures[rng.random_range(0..layout.routine_procedures.len())].clone());
            }
        }
        if !layout.routine_medications.is_empty() {
            for _ in 0..rng.random_range(0..=cfg.routine_medications_max) {
                medications.insert(layout.routine_medications[rng.random_range(0..layout.routine_medications.len())].clone());
            }
        }
        visits.push(Visit {
            time,
            index_t: v,
            diagnoses,
            procedures,
            medications,
        });
        truths.push(truth);
    }
    let causal_codes = conditions.iter().flat_map(|&c| condition_codes(&layout.conditions[c])).collect();
    let record = PatientRecord::new(format!("P{p:06}"), visits);
    (
        record,
        PatientTruth {
            conditions,
            causal_codes,
            visits: truths,
        },
    )
}

fn condition_codes(lay: &ConditionLayout) -> BTreeSet<(CodeKind, String)> {
    let mut out = BTreeSet::new();
    for d in lay.stage_diagnoses.iter().chain(&lay.alt_diagnoses).flatten() {
        out.insert((CodeKind::Diagnosis, d.clone()));
    }
    for p in &lay.stage_procedures {
        out.insert((CodeKind::Procedure, p.clone()));
    }
    out.insert((CodeKind::Medication, lay.primary_med.clone()));
    if let Some(m) = &lay.maintenance_med {
        out.insert((CodeKind::Medication, m.clone()));
    }
    out
}

/// Generates a cohort (sorted by patient id) and its ground truth.
pub fn generate_synthetic_cohort(cfg: &GeneratorConfig, seed: u64) -> Result<(Vec<PatientRecord>, GroundTruth)> {
    cfg.validate()?;
    let layout = build_layout(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    let generated = par::map_range(Exec::Parallel, cfg.n_patients, |p| generate_patient(cfg, &layout, seed, p));
    let mut records = Vec::with_capacity(cfg.n_patients);
    let mut patients = BTreeMap::new();
    for (record, truth) in generated {
        patients.insert(record.patient_id.clone(), truth);
        records.push(record);
    }
    let routine_codes = layout
        .routine_procedures
        .iter()
        .map(|c| (CodeKind::Procedure, c.clone()))
        .chain(layout.routine_medications.iter().map(|c| (CodeKind::Medication, c.clone())))
        .collect();
    let truth = GroundTruth {
        noise: cfg.noise,
        diagnosis_universe: layout.diagnoses.clone(),
        condition_codes: layout.conditions.iter().map(condition_codes).collect(),
        condition_diagnoses: layout
            .conditions
            .iter()
            .map(|c| c.stage_diagnoses.iter().chain(&c.alt_diagnoses).flatten().cloned().collect())
            .collect(),
        routine_codes,
        patients,
    };
    debug_assert!(layout.procedures.len() == cfg.n_procedures && layout.medications.len() == cfg.n_medications);
    Ok((records, truth))
}
