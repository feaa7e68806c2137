use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::error::{Error, Result};

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.75,
            val: 0.10,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Argument(format!("split ratios must be positive, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

/// Seeded patient-level partition. Each part keeps the input order.
pub fn split_cohort(cohort: &[PatientRecord], ratios: SplitRatios, seed: u64) -> Result<CohortSplit> {
    ratios.validate()?;
    let n = cohort.len();
    if n < 3 {
        return Err(Error::Argument(format!("need at least 3 patients to split, got {n}")));
    }
    let n_train = ((ratios.train * n as f64).round() as usize).clamp(1, n - 2);
    let n_val = ((ratios.val * n as f64).round() as usize).clamp(1, n - 1 - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut part = vec![2u8; n];
    for &i in &order[..n_train] {
        part[i] = 0;
    }
    for &i in &order[n_train..n_train + n_val] {
        part[i] = 1;
    }
    let pick = |p: u8| -> Vec<PatientRecord> {
        cohort.iter().zip(&part).filter(|(_, &q)| q == p).map(|(r, _)| r.clone()).collect()
    };
    Ok(CohortSplit {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::visit;
    use std::collections::BTreeSet;

    fn cohort(n: usize) -> Vec<PatientRecord> {
        (0..n)
            .map(|i| PatientRecord::new(format!("p{i:03}"), vec![visit(0.0, &["d"], &[], &[]), visit(1.0, &["d"], &[], &[])]))
            .collect()
    }

    #[test]
    fn default_ratio_on_100_patients() {
        let s = split_cohort(&cohort(100), SplitRatios::default(), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (75, 10, 15));
    }

    #[test]
    fn deterministic_partition() {
        let c = cohort(57);
        let a = split_cohort(&c, SplitRatios::default(), 9).unwrap();
        let b = split_cohort(&c, SplitRatios::default(), 9).unwrap();
        let ids = |v: &[PatientRecord]| v.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
        let mut all: BTreeSet<String> = BTreeSet::new();
        for part in [&a.train, &a.val, &a.test] {
            for r in part.iter() {
                assert!(all.insert(r.patient_id.clone()), "patient in two splits");
            }
        }
        assert_eq!(all.len(), 57);
    }

    #[test]
    fn zero_ratio_rejected() {
        let r = SplitRatios {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        assert!(matches!(split_cohort(&cohort(10), r, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn tiny_cohort_rejected_and_minimal_cohort_nonempty() {
        assert!(split_cohort(&cohort(2), SplitRatios::default(), 0).is_err());
        let s = split_cohort(&cohort(3), SplitRatios::default(), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }
}
