//! The temporal heterogeneous message-passing layer.
//!
//! Each visit node attends over the event nodes attached to it and over the
//! previous visit node. Scores use a per-type bilinear form scaled by the
//! visit's time factor; messages are gated against a skip connection head
//! by head. The plain functions at the top evaluate one score, one
//! aggregation and one update directly and double as the reference the
//! dense tape implementation is tested against.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::CodeKind;
use crate::error::{Error, Result};
use crate::graph::PatientGraph;
use crate::numeric::{ParamStore, Tape, Tensor, Var};

/// `α · (q W kᵀ) / √d_head` for row vectors `q`, `k` and row-major `W`.
pub fn attention_score(q: &[f64], k: &[f64], w: &[f64], alpha: f64, d_head: usize) -> f64 {
    let n = q.len();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += q[a] * w[a * n + b] * k[b];
        }
    }
    alpha * s / (d_head as f64).sqrt()
}

/// Softmax weights over `scores` and the weighted sum of `values`.
/// An empty neighbourhood yields no weights and a zero message.
pub fn aggregate(scores: &[f64], values: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut message = vec![0.0; dim];
    if scores.is_empty() {
        return (Vec::new(), message);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let weights: Vec<f64> = exp.iter().map(|e| e / z).collect();
    for (w, v) in weights.iter().zip(values) {
        for (m, x) in message.iter_mut().zip(v) {
            *m += w * x;
        }
    }
    (weights, message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// One head's gated update: `γ · (σ(message) W + b) + (1 − γ) · skip`.
pub fn update_head(message: &[f64], skip: &[f64], w: &[f64], b: &[f64], gamma: f64, act: Activation) -> Vec<f64> {
    let n = message.len();
    let s: Vec<f64> = message.iter().map(|&x| act.apply(x)).collect();
    (0..n)
        .map(|c| {
            let l = (0..n).map(|r| s[r] * w[r * n + c]).sum::<f64>() + b[c];
            gamma * l + (1.0 - gamma) * skip[c]
        })
        .collect()
}

/// Concatenation of per-head updates; head `i` skips from slice `i` of `h`.
pub fn update(messages: &[Vec<f64>], h: &[f64], maps: &[(Vec<f64>, Vec<f64>)], gamma: f64, act: Activation) -> Vec<f64> {
    let dh = h.len() / messages.len();
    messages
        .iter()
        .zip(maps)
        .enumerate()
        .flat_map(|(i, (m, (w, b)))| update_head(m, &h[i * dh..(i + 1) * dh], w, b, gamma, act))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum GammaMode {
    Fixed(f64),
    /// One gate per layer, stored as a logit and squashed by a sigmoid.
    Learnable,
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::Fixed(0.5)
    }
}

/// Inverted dropout with a caller-owned seeded stream.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Dropout {
        Dropout { rate, rng }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = tape.shape(x);
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..r * c)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(Tensor::matrix(r, c, mask)?);
        tape.mul(x, mask)
    }
}

/// Graph structure in the dense form the layer consumes.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    pub n_visits: usize,
    pub n_events: usize,
    /// Event-id range of each kind, in [`CodeKind::ALL`] order.
    pub kind_ranges: [Range<usize>; 3],
    /// `T × (n_events + T)`: visit `t` may attend to its events and to `t − 1`.
    pub visit_mask: Vec<bool>,
    /// `n_events × T`: event `e` may attend to the visits containing it.
    pub event_mask: Vec<bool>,
    /// `T × 1`, 1 where the visit has at least one neighbour.
    pub visit_has_neighbours: Tensor,
    /// `n_events × 1`, 1 where the event has at least one visit.
    pub event_has_neighbours: Tensor,
}

impl LayerGraph {
    pub fn new(graph: &PatientGraph) -> Result<LayerGraph> {
        let t = graph.n_visits();
        let n = graph.n_events();
        let mut kind_ranges = [0..0, 0..0, 0..0];
        let mut start = 0;
        for kind in CodeKind::ALL {
            let len = graph.events[start..].iter().take_while(|e| e.kind == kind).count();
            kind_ranges[kind.index()] = start..start + len;
            start += len;
        }
        if start != n {
            return Err(Error::Argument("event nodes are not grouped by kind".into()));
        }
        let width = n + t;
        let mut visit_mask = vec![false; t * width];
        let mut event_mask = vec![false; n * t];
        for (v, events) in graph.visit_events.iter().enumerate() {
            for &e in events {
                visit_mask[v * width + e] = true;
                event_mask[e * t + v] = true;
            }
            if v > 0 {
                visit_mask[v * width + n + v - 1] = true;
            }
        }
        let has = |mask: &[bool], rows: usize, cols: usize| {
            let col = (0..rows)
                .map(|r| if mask[r * cols..(r + 1) * cols].iter().any(|&b| b) { 1.0 } else { 0.0 })
                .collect();
            Tensor::col(col)
        };
        Ok(LayerGraph {
            n_visits: t,
            n_events: n,
            visit_has_neighbours: has(&visit_mask, t, width),
            event_has_neighbours: has(&event_mask, n, t),
            kind_ranges,
            visit_mask,
            event_mask,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub d: usize,
    pub heads: usize,
    pub gamma: GammaMode,
    pub activation: Activation,
    /// Let event nodes receive messages from their visits as well.
    pub update_events: bool,
    /// Scale the previous-visit score by the time factor of index `t − 1`
    /// instead of leaving it unscaled.
    pub visit_edge_time_factor: bool,
}

const TYPE_NAMES: [&str; 4] = ["diagnosis", "procedure", "medication", "visit"];

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dim {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma must lie in [0, 1], got {g}")));
            }
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d / self.heads
    }

    fn name(&self, head: usize, what: &str) -> String {
        format!("layer{}.head{}.{}", self.index, head, what)
    }

    pub fn gamma_name(&self) -> String {
        format!("layer{}.gamma", self.index)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let (d, dh) = (self.d, self.d_head());
        let bd = 1.0 / (d as f64).sqrt();
        let bh = 1.0 / (dh as f64).sqrt();
        for i in 0..self.heads {
            for m in ["q", "k", "v"] {
                store.insert(self.name(i, m), Tensor::uniform(d, dh, bd, rng))?;
            }
            for t in TYPE_NAMES {
                store.insert(self.name(i, &format!("w_{t}")), Tensor::uniform(dh, dh, bh, rng))?;
            }
            store.insert(self.name(i, "update_w"), Tensor::uniform(dh, dh, bh, rng))?;
            store.insert(self.name(i, "update_b"), Tensor::uniform(1, dh, bh, rng))?;
            if self.update_events {
                store.insert(self.name(i, "event_update_w"), Tensor::uniform(dh, dh, bh, rng))?;
                store.insert(self.name(i, "event_update_b"), Tensor::uniform(1, dh, bh, rng))?;
            }
        }
        if self.gamma == GammaMode::Learnable {
            store.insert(self.gamma_name(), Tensor::scalar(0.0))?;
        }
        Ok(())
    }

    /// `γ·x + (1−γ)·skip`.
    fn gate(&self, tape: &mut Tape, store: &ParamStore, x: Var, skip: Var) -> Result<Var> {
        match self.gamma {
            GammaMode::Fixed(g) => {
                let a = tape.scale(x, g)?;
                let b = tape.scale(skip, 1.0 - g)?;
                tape.add(a, b)
            }
            GammaMode::Learnable => {
                let raw = tape.param(store, &self.gamma_name())?;
                let g = tape.sigmoid(raw)?;
                let diff = tape.sub(x, skip)?;
                let a = tape.mul_scalar(diff, g)?;
                tape.add(a, skip)
            }
        }
    }

    /// Rows flagged 0 in `has` keep `h`, the others take `updated`.
    fn keep_isolated(tape: &mut Tape, updated: Var, h: Var, has: &Tensor) -> Result<Var> {
        if has.data().iter().all(|&x| x == 1.0) {
            return Ok(updated);
        }
        let c = tape.constant(has.clone());
        let inv = tape.constant(Tensor::col(has.data().iter().map(|x| 1.0 - x).collect()));
        let a = tape.mul_col(updated, c)?;
        let b = tape.mul_col(h, inv)?;
        tape.add(a, b)
    }

    /// One synchronous layer step. `alpha` is the `T × 1` column of time
    /// factors for indices `1..=T`. Returns new visit and event features.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &LayerGraph,
        h_v: Var,
        h_e: Var,
        alpha: Var,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(Var, Var)> {
        let (t, n) = (g.n_visits, g.n_events);
        if tape.shape(h_v) != (t, self.d) || tape.shape(h_e) != (n, self.d) || tape.shape(alpha) != (t, 1) {
            return Err(Error::dim(
                "layer_forward",
                format!(
                    "visits {:?}, events {:?}, time factors {:?} for a graph with {t} visits and {n} events at d = {}",
                    tape.shape(h_v),
                    tape.shape(h_e),
                    tape.shape(alpha),
                    self.d
                ),
            ));
        }
        let dh = self.d_head();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let prev_alpha = if self.visit_edge_time_factor && t > 1 {
            let head = tape.slice_rows(alpha, 0, t - 1)?;
            let one = tape.constant(Tensor::scalar(1.0));
            Some(tape.concat_rows(&[one, head])?)
        } else {
            None
        };
        let mut visit_heads = Vec::with_capacity(self.heads);
        let mut event_heads = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let wq = tape.param(store, &self.name(i, "q"))?;
            let wk = tape.param(store, &self.name(i, "k"))?;
            let wv = tape.param(store, &self.name(i, "v"))?;
            let q = tape.matmul(h_v, wq)?;
            let k_v = tape.matmul(h_v, wk)?;
            let v_v = tape.matmul(h_v, wv)?;
            let mut score_blocks = Vec::with_capacity(4);
            let mut value_blocks = Vec::with_capacity(2);
            if n > 0 {
                let k_e = tape.matmul(h_e, wk)?;
                let v_e = tape.matmul(h_e, wv)?;
                value_blocks.push(v_e);
                let mut per_kind = Vec::with_capacity(3);
                for kind in CodeKind::ALL {
                    let r = g.kind_ranges[kind.index()].clone();
                    if r.is_empty() {
                        continue;
                    }
                    let w = tape.param(store, &self.name(i, &format!("w_{}", TYPE_NAMES[kind.index()])))?;
                    let qw = tape.matmul(q, w)?;
                    let kk = tape.slice_rows(k_e, r.start, r.end)?;
                    let kt = tape.transpose(kk)?;
                    per_kind.push(tape.matmul(qw, kt)?);
                }
                let s = tape.concat_cols(&per_kind)?;
                let s = tape.mul_col(s, alpha)?;
                score_blocks.push(s);
            }
            let w_visit = tape.param(store, &self.name(i, "w_visit"))?;
            let qw = tape.matmul(q, w_visit)?;
            let kt = tape.transpose(k_v)?;
            let mut s_vis = tape.matmul(qw, kt)?;
            if let Some(pa) = prev_alpha {
                s_vis = tape.mul_col(s_vis, pa)?;
            }
            score_blocks.push(s_vis);
            value_blocks.push(v_v);
            let scores = tape.concat_cols(&score_blocks)?;
            let scores = tape.scale(scores, inv_sqrt)?;
            let p = tape.masked_softmax_rows(scores, Some(&g.visit_mask))?;
            let values = tape.concat_rows(&value_blocks)?;
            let mut msg = tape.matmul(p, values)?;
            if let Some(d) = dropout.as_deref_mut() {
                msg = d.apply(tape, msg)?;
            }
            let act = self.activation.on_tape(tape, msg)?;
            let uw = tape.param(store, &self.name(i, "update_w"))?;
            let ub = tape.param(store, &self.name(i, "update_b"))?;
            let l = tape.matmul(act, uw)?;
            let l = tape.add_row(l, ub)?;
            let skip = tape.slice_cols(h_v, i * dh, (i + 1) * dh)?;
            visit_heads.push(self.gate(tape, store, l, skip)?);

            if self.update_events && n > 0 {
                let q_e = tape.matmul(h_e, wq)?;
                let qw = tape.matmul(q_e, w_visit)?;
                let kt = tape.transpose(k_v)?;
                let s = tape.matmul(qw, kt)?;
                // time factor of the attended visit scales each column
                let st = tape.transpose(s)?;
                let st = tape.mul_col(st, alpha)?;
                let s = tape.transpose(st)?;
                let s = tape.scale(s, inv_sqrt)?;
                let p = tape.masked_softmax_rows(s, Some(&g.event_mask))?;
                let mut msg = tape.matmul(p, v_v)?;
                if let Some(d) = dropout.as_deref_mut() {
                    msg = d.apply(tape, msg)?;
                }
                let act = self.activation.on_tape(tape, msg)?;
                let uw = tape.param(store, &self.name(i, "event_update_w"))?;
                let ub = tape.param(store, &self.name(i, "event_update_b"))?;
                let l = tape.matmul(act, uw)?;
                let l = tape.add_row(l, ub)?;
                let skip = tape.slice_cols(h_e, i * dh, (i + 1) * dh)?;
                event_heads.push(self.gate(tape, store, l, skip)?);
            }
        }
        let new_v = tape.concat_cols(&visit_heads)?;
        let new_v = Self::keep_isolated(tape, new_v, h_v, &g.visit_has_neighbours)?;
        let new_e = if event_heads.is_empty() {
            h_e
        } else {
            let e = tape.concat_cols(&event_heads)?;
            Self::keep_isolated(tape, e, h_e, &g.event_has_neighbours)?
        };
        if !tape.value(new_v).all_finite() || !tape.value(new_e).all_finite() {
            return Err(Error::Numeric { layer: self.index });
        }
        Ok((new_v, new_e))
    }
}
