//! Visit-level precision@k, code-level accuracy@k, the frequency-prior
//! baseline and aggregated metric reports.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ehr::Sample;
use crate::error::{Error, Result};

/// Indices of the `k` highest scores; ties go to the lower label index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    Ok(())
}

fn hits(truth: &BTreeSet<usize>, scores: &[f64], k: usize) -> usize {
    top_k(scores, k).iter().filter(|l| truth.contains(l)).count()
}

/// `|top-k ∩ Y| / min(k, |Y|)`.
pub fn visit_precision_at_k(truth: &BTreeSet<usize>, scores: &[f64], k: usize) -> Result<f64> {
    check_k(k)?;
    if truth.is_empty() {
        return Err(Error::Argument("visit has no true labels".into()));
    }
    Ok(hits(truth, scores, k) as f64 / k.min(truth.len()) as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counted half. `None` if either side is empty.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positive {
        for q in negative {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (positive.len() * negative.len()) as f64)
}

/// One scored visit: its true labels and the model's label scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredVisit {
    pub target: BTreeSet<usize>,
    pub scores: Vec<f64>,
}

/// Mean of [`visit_precision_at_k`] over visits.
pub fn mean_visit_precision_at_k(visits: &[ScoredVisit], k: usize) -> Result<f64> {
    if visits.is_empty() {
        return Err(Error::Argument("no visits to evaluate".into()));
    }
    let mut total = 0.0;
    for v in visits {
        total += visit_precision_at_k(&v.target, &v.scores, k)?;
    }
    Ok(total / visits.len() as f64)
}

/// Total top-k hits over total true labels, across the whole split.
pub fn code_accuracy_at_k(visits: &[ScoredVisit], k: usize) -> Result<f64> {
    check_k(k)?;
    if visits.is_empty() {
        return Err(Error::Argument("no visits to evaluate".into()));
    }
    let (mut num, mut den) = (0usize, 0usize);
    for v in visits {
        num += hits(&v.target, &v.scores, k);
        den += v.target.len();
    }
    if den == 0 {
        return Err(Error::Argument("split has no true labels".into()));
    }
    Ok(num as f64 / den as f64)
}

/// Scores each label by its share of training visits that carry it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPrior {
    pub scores: Vec<f64>,
}

impl FrequencyPrior {
    pub fn fit(train: &[Sample]) -> Result<FrequencyPrior> {
        let first = train
            .first()
            .ok_or_else(|| Error::Argument("frequency prior needs a non-empty training split".into()))?;
        let mut counts = vec![0.0; first.n_labels];
        for s in train {
            for &l in &s.target {
                counts[l] += 1.0;
            }
        }
        let n = train.len() as f64;
        Ok(FrequencyPrior {
            scores: counts.into_iter().map(|c| c / n).collect(),
        })
    }

    pub fn score(&self, samples: &[Sample]) -> Vec<ScoredVisit> {
        samples
            .iter()
            .map(|s| ScoredVisit {
                target: s.target.clone(),
                scores: self.scores.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    VisitPrecision,
    CodeAccuracy,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::VisitPrecision => "visit_precision",
            MetricKind::CodeAccuracy => "code_accuracy",
        }
    }

    pub fn compute(self, visits: &[ScoredVisit], k: usize) -> Result<f64> {
        match self {
            MetricKind::VisitPrecision => mean_visit_precision_at_k(visits, k),
            MetricKind::CodeAccuracy => code_accuracy_at_k(visits, k),
        }
    }
}

/// One row of a report: a metric at one `k`, aggregated over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

/// Metric values of a single run, in `(metric, k)` order.
pub fn evaluate_run(visits: &[ScoredVisit], ks: &[usize]) -> Result<Vec<(MetricKind, usize, f64)>> {
    let mut out = Vec::with_capacity(2 * ks.len());
    for kind in [MetricKind::VisitPrecision, MetricKind::CodeAccuracy] {
        for &k in ks {
            out.push((kind, k, kind.compute(visits, k)?));
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation (zero for a single run) per entry.
pub fn aggregate_runs(runs: &[Vec<(MetricKind, usize, f64)>]) -> Result<Vec<MetricEntry>> {
    let first = runs.first().ok_or_else(|| Error::Argument("no runs to aggregate".into()))?;
    let n = runs.len();
    let mut out = Vec::with_capacity(first.len());
    for (i, &(kind, k, _)) in first.iter().enumerate() {
        let mut values = Vec::with_capacity(n);
        for run in runs {
            match run.get(i) {
                Some(&(rk, rkk, v)) if rk == kind && rkk == k => values.push(v),
                _ => return Err(Error::Argument("runs report different metric layouts".into())),
            }
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(MetricEntry {
            metric: kind.as_str().to_string(),
            k,
            mean,
            std,
            n_runs: n,
        });
    }
    Ok(out)
}
