//! Soft event-node masks that explain a prediction, and their cohort-level
//! aggregation into per-code importance.
//!
//! The mask multiplies each event node's projected initial feature by
//! `sigmoid(m_e)`. With model parameters frozen, the mask logits minimise
//! `−Σ_{i∈labels} log σ(logit_i) + λ Σ_e σ(m_e)`: keep the evidence that
//! supports the explained labels, pay for every node kept.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ehr::CodeKind;
use crate::error::{Error, Result};
use crate::metrics::top_k;
use crate::model::{Model, PreparedSample};
use crate::numeric::{AdamW, AdamWConfig, GradMap, ParamStore, Tape, Tensor, Var};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    /// Weight of the mask-size penalty.
    pub lambda: f64,
    /// Budget on the reported subgraph size.
    pub max_nodes: usize,
    /// How many of the unmasked top predictions are explained.
    pub top_labels: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            lambda: 0.005,
            max_nodes: 10,
            top_labels: 3,
            steps: 100,
            lr: 0.1,
        }
    }
}

impl ExplainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.max_nodes == 0 || self.top_labels == 0 {
            return Err(Error::Argument("max_nodes and top_labels must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("explainer lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeImportance {
    pub kind: CodeKind,
    pub code: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub patient_id: String,
    pub visit_index: usize,
    pub labels: Vec<usize>,
    /// Mask logits after optimisation, one per event node.
    pub mask_logits: Vec<f64>,
    /// One entry per event node, in graph order.
    pub nodes: Vec<NodeImportance>,
    /// Event node ids of the selected subgraph, most important first.
    pub subgraph: Vec<usize>,
    /// Objective value before each step and after the last one.
    pub objective: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logits with each event's projected feature scaled by `importance[e]`.
pub fn masked_logits(model: &Model, s: &PreparedSample, importance: &[f64]) -> Result<Vec<f64>> {
    if importance.len() != s.n_events() {
        return Err(Error::dim(
            "masked_logits",
            format!("{} importances for {} event nodes", importance.len(), s.n_events()),
        ));
    }
    let mut tape = Tape::frozen();
    let mask = tape.constant(Tensor::col(importance.to_vec()));
    let out = model.forward(&mut tape, s, None, Some(mask))?;
    Ok(tape.value(out.logits).data().to_vec())
}

/// Objective value and its gradient with respect to the mask logits.
fn objective(model: &Model, s: &PreparedSample, logits: &Tensor, labels: &[usize], lambda: f64, grad: bool) -> Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::frozen();
    let m: Var = tape.leaf(logits.clone(), true);
    let keep = tape.sigmoid(m)?;
    let out = model.forward(&mut tape, s, None, Some(keep))?;
    let col = tape.transpose(out.logits)?;
    let picked = tape.gather_rows(col, labels)?;
    let ones = vec![1.0; labels.len()];
    let nll = tape.bce_with_logits(picked, &ones)?;
    let nll = tape.scale(nll, labels.len() as f64)?;
    let size = tape.sum(keep)?;
    let size = tape.scale(size, lambda)?;
    let total = tape.add(nll, size)?;
    let value = tape.value(total).item();
    if !grad {
        return Ok((value, None));
    }
    let g = tape.backward(total)?;
    let gm = g.wrt(m).cloned().unwrap_or_else(|| Tensor::zeros(logits.rows(), 1));
    Ok((value, Some(gm)))
}

/// Explains `labels`, or the model's top predictions when `labels` is `None`.
pub fn explain(model: &Model, s: &PreparedSample, labels: Option<&[usize]>, opts: &ExplainOptions) -> Result<Explanation> {
    opts.validate()?;
    let n = s.n_events();
    if n == 0 {
        return Err(Error::Explanation(format!(
            "sample {} visit {} has no event nodes",
            s.patient_id, s.visit_index
        )));
    }
    let labels: Vec<usize> = match labels {
        Some(l) => {
            if l.is_empty() || l.iter().any(|&x| x >= model.n_labels) {
                return Err(Error::Argument(format!("invalid label set {l:?}")));
            }
            l.to_vec()
        }
        None => top_k(&model.logits(s)?, opts.top_labels),
    };
    let mut store = ParamStore::new();
    store.insert("mask", Tensor::zeros(n, 1))?;
    let mut opt = AdamW::new(AdamWConfig {
        lr: opts.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    })?;
    let mut trace = Vec::with_capacity(opts.steps + 1);
    for _ in 0..opts.steps {
        let current = store.get("mask").expect("inserted").clone();
        let (value, grad) = objective(model, s, &current, &labels, opts.lambda, true)?;
        trace.push(value);
        let grads: GradMap = [("mask".to_string(), grad.expect("requested"))].into_iter().collect();
        opt.step(&mut store, &grads)
            .map_err(|e| Error::Explanation(format!("mask optimisation failed: {e}")))?;
    }
    let final_logits = store.get("mask").expect("inserted").data().to_vec();
    let (last, _) = objective(model, s, &Tensor::col(final_logits.clone()), &labels, opts.lambda, false)?;
    trace.push(last);
    let importance: Vec<f64> = final_logits.iter().map(|&m| sigmoid(m)).collect();
    let subgraph = top_k(&importance, opts.max_nodes);
    let nodes = s
        .graph
        .events
        .iter()
        .zip(&importance)
        .map(|(e, &importance)| NodeImportance {
            kind: e.kind,
            code: e.code.clone(),
            importance,
        })
        .collect();
    Ok(Explanation {
        patient_id: s.patient_id.clone(),
        visit_index: s.visit_index,
        labels,
        mask_logits: final_logits,
        nodes,
        subgraph,
        objective: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeImportance {
    pub kind: CodeKind,
    pub code: String,
    pub mean_importance: f64,
    pub count: usize,
}

/// Mean importance per code over every occurrence, ranked descending.
/// Ties fall back to `(kind, code)` order.
pub fn rank_codes(explanations: &[Explanation]) -> Vec<CodeImportance> {
    let mut acc: BTreeMap<(CodeKind, String), (f64, usize)> = BTreeMap::new();
    for ex in explanations {
        for node in &ex.nodes {
            let slot = acc.entry((node.kind, node.code.clone())).or_insert((0.0, 0));
            slot.0 += node.importance;
            slot.1 += 1;
        }
    }
    let mut out: Vec<CodeImportance> = acc
        .into_iter()
        .map(|((kind, code), (sum, count))| CodeImportance {
            kind,
            code,
            mean_importance: sum / count as f64,
            count,
        })
        .collect();
    out.sort_by(|a, b| b.mean_importance.total_cmp(&a.mean_importance));
    out
}

/// Explains `label` on every sample whose target carries it and ranks codes
/// by mean importance.
pub fn aggregate_importance(
    model: &Model,
    samples: &[PreparedSample],
    label: usize,
    opts: &ExplainOptions,
    exec: Exec,
) -> Result<Vec<CodeImportance>> {
    if label >= model.n_labels {
        return Err(Error::Argument(format!("label {label} out of range 0..{}", model.n_labels)));
    }
    let carriers: Vec<&PreparedSample> = samples
        .iter()
        .filter(|s| s.target.contains(&label) && s.n_events() > 0)
        .collect();
    if carriers.is_empty() {
        return Err(Error::Argument(format!("no sample carries label {label}")));
    }
    let explanations = par::try_map(exec, &carriers, |s| explain(model, s, Some(&[label]), opts))?;
    Ok(rank_codes(&explanations))
}
