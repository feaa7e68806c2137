//! Initial features, stacked layers and the last-visit predictor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ehr::{CodeKind, CodeVocabulary};
use crate::error::{Error, Result};
use crate::layer::{Dropout, LayerSpec};
use crate::numeric::{GradMap, ParamStore, Tape, Tensor, Var};
use crate::temporal::{Time2Vec, TimeFactor};

use super::config::ModelConfig;
use super::features::PreparedSample;

/// Visit roles: earlier visits versus the visit being predicted.
const ROLE_HISTORY: usize = 0;
const ROLE_TARGET: usize = 1;

fn embed_name(kind: CodeKind) -> String {
    format!("embed.{}", kind.as_str())
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `T × d` visit features after the last layer.
    pub visits: Var,
    /// `n_events × d` event features after the last layer.
    pub events: Var,
    /// `1 × n_labels`.
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub n_labels: usize,
    /// Known codes per kind; each embedding table has one extra UNK row.
    pub vocab_sizes: [usize; 3],
}

impl Model {
    /// Fresh parameters drawn from a generator seeded by `config.seed`.
    pub fn new(config: &ModelConfig, vocab: &CodeVocabulary) -> Result<Model> {
        config.validate()?;
        let vocab_sizes = CodeKind::ALL.map(|k| vocab.len(k));
        let n_labels = vocab.n_label_groups();
        let mut model = Model {
            config: config.clone(),
            params: ParamStore::new(),
            n_labels,
            vocab_sizes,
        };
        model.init()?;
        Ok(model)
    }

    fn init(&mut self) -> Result<()> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let p = &mut store;
        let emb = c.embedding_dim;
        let eb = 1.0 / (emb as f64).sqrt();
        for kind in CodeKind::ALL {
            p.insert(embed_name(kind), Tensor::uniform(self.vocab_sizes[kind.index()] + 1, emb, eb, &mut rng))?;
        }
        p.insert("embed.visit_role", Tensor::uniform(2, emb, eb, &mut rng))?;
        let linear = |p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let b = 1.0 / (fan_in as f64).sqrt();
            p.insert(format!("{name}.w"), Tensor::uniform(fan_in, fan_out, b, rng))?;
            p.insert(format!("{name}.b"), Tensor::uniform(1, fan_out, b, rng))
        };
        linear(p, "event_proj", self.event_input_dim(), c.hidden_dim, &mut rng)?;
        linear(p, "visit_proj", self.visit_input_dim(), c.hidden_dim, &mut rng)?;
        if c.use_te {
            self.time2vec()?.init(p, &mut rng)?;
        }
        if c.use_seq {
            for m in ["q", "k", "v"] {
                p.insert(format!("seq.{m}"), Tensor::uniform(emb, c.te_dim, eb, &mut rng))?;
            }
        }
        self.time_factor()?.init(p, &mut rng)?;
        for l in 0..c.layers {
            c.layer_spec(l).init(p, &mut rng)?;
        }
        linear(p, "predictor.hidden", c.hidden_dim, c.hidden_dim, &mut rng)?;
        linear(p, "predictor.out", c.hidden_dim, self.n_labels, &mut rng)?;
        self.params = store;
        Ok(())
    }

    pub fn event_input_dim(&self) -> usize {
        let c = &self.config;
        c.embedding_dim + if c.use_se { 2 * c.se_dim } else { 0 }
    }

    pub fn visit_input_dim(&self) -> usize {
        let c = &self.config;
        c.embedding_dim + if c.use_te { c.te_dim } else { 0 } + if c.use_seq { c.te_dim } else { 0 }
    }

    fn time2vec(&self) -> Result<Time2Vec> {
        Time2Vec::new("time2vec", self.config.time2vec_dims())
    }

    fn time_factor(&self) -> Result<TimeFactor> {
        TimeFactor::new("time_factor", self.config.time_factor_dim)
    }

    fn linear(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, &format!("{name}.w"))?;
        let b = tape.param(&self.params, &format!("{name}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    /// Code embeddings of every event node, in event order.
    fn event_embeddings(&self, tape: &mut Tape, s: &PreparedSample) -> Result<Var> {
        let mut parts = Vec::with_capacity(3);
        for kind in CodeKind::ALL {
            let rows = s.rows_of_kind(kind);
            if rows.is_empty() {
                continue;
            }
            let table = tape.param(&self.params, &embed_name(kind))?;
            parts.push(tape.gather_rows(table, rows)?);
        }
        if parts.is_empty() {
            return Ok(tape.constant(Tensor::zeros(0, self.config.embedding_dim)));
        }
        tape.concat_rows(&parts)
    }

    /// Causal self-attention over per-visit sums of code embeddings.
    fn sequence_block(&self, tape: &mut Tape, s: &PreparedSample, emb: Var) -> Result<Var> {
        let t = s.n_visits();
        let n = s.n_events();
        let summary = if n == 0 {
            tape.constant(Tensor::zeros(t, self.config.embedding_dim))
        } else {
            let mut inc = vec![0.0; t * n];
            for (v, events) in s.graph.visit_events.iter().enumerate() {
                for &e in events {
                    inc[v * n + e] = 1.0;
                }
            }
            let inc = tape.constant(Tensor::matrix(t, n, inc)?);
            tape.matmul(inc, emb)?
        };
        let wq = tape.param(&self.params, "seq.q")?;
        let wk = tape.param(&self.params, "seq.k")?;
        let wv = tape.param(&self.params, "seq.v")?;
        let q = tape.matmul(summary, wq)?;
        let k = tape.matmul(summary, wk)?;
        let v = tape.matmul(summary, wv)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.config.te_dim as f64).sqrt())?;
        let causal: Vec<bool> = (0..t * t).map(|i| i % t <= i / t).collect();
        let p = tape.masked_softmax_rows(scores, Some(&causal))?;
        tape.matmul(p, v)
    }

    /// Full forward pass. `event_mask`, an `n_events × 1` var, scales each
    /// event's projected initial feature and its share of the per-visit
    /// summaries read by the sequence block.
    pub fn forward(
        &self,
        tape: &mut Tape,
        s: &PreparedSample,
        mut dropout: Option<&mut Dropout>,
        event_mask: Option<Var>,
    ) -> Result<ForwardOutput> {
        let c = &self.config;
        let t = s.n_visits();
        if t == 0 {
            return Err(Error::Argument(format!("sample {} has no visits", s.patient_id)));
        }
        let emb = self.event_embeddings(tape, s)?;

        let mut event_in = emb;
        if let Some(enc) = &s.spatial {
            let block = tape.constant(enc.as_tensor());
            event_in = tape.concat_cols(&[emb, block])?;
        }
        let mut h_e = self.linear(tape, "event_proj", event_in)?;
        if let Some(d) = dropout.as_deref_mut() {
            h_e = d.apply(tape, h_e)?;
        }
        if let Some(mask) = event_mask {
            h_e = tape.mul_col(h_e, mask)?;
        }

        let roles = tape.param(&self.params, "embed.visit_role")?;
        let role_rows: Vec<usize> = (0..t).map(|v| if v + 1 == t { ROLE_TARGET } else { ROLE_HISTORY }).collect();
        let mut visit_parts = vec![tape.gather_rows(roles, &role_rows)?];
        if c.use_te {
            let times = tape.constant(Tensor::col(s.normalized_times.clone()));
            visit_parts.push(self.time2vec()?.forward(tape, &self.params, times)?);
        }
        if c.use_seq {
            let seq_in = match event_mask {
                Some(mask) if s.n_events() > 0 => tape.mul_col(emb, mask)?,
                _ => emb,
            };
            visit_parts.push(self.sequence_block(tape, s, seq_in)?);
        }
        let visit_in = if visit_parts.len() == 1 {
            visit_parts[0]
        } else {
            tape.concat_cols(&visit_parts)?
        };
        let mut h_v = self.linear(tape, "visit_proj", visit_in)?;
        if let Some(d) = dropout.as_deref_mut() {
            h_v = d.apply(tape, h_v)?;
        }

        let indices = tape.constant(Tensor::col((1..=t).map(|i| i as f64).collect()));
        let alpha = self.time_factor()?.forward(tape, &self.params, indices)?;
        for l in 0..c.layers {
            let spec: LayerSpec = c.layer_spec(l);
            (h_v, h_e) = spec.forward(tape, &self.params, &s.layer_graph, h_v, h_e, alpha, dropout.as_deref_mut())?;
        }
        let logits = self.predict_from_visits(tape, h_v)?;
        Ok(ForwardOutput {
            visits: h_v,
            events: h_e,
            logits,
        })
    }

    /// Two-layer predictor applied to the last row of `visits`.
    pub fn predict_from_visits(&self, tape: &mut Tape, visits: Var) -> Result<Var> {
        let t = tape.shape(visits).0;
        let last = tape.slice_rows(visits, t - 1, t)?;
        let hidden = self.linear(tape, "predictor.hidden", last)?;
        let hidden = tape.gelu(hidden)?;
        self.linear(tape, "predictor.out", hidden)
    }

    /// Eval-mode logits.
    pub fn logits(&self, s: &PreparedSample) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen();
        let out = self.forward(&mut tape, s, None, None)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Mean BCE loss and parameter gradients for one sample. `dropout_seed`
    /// seeds the dropout stream; `None` runs without dropout.
    pub fn loss_and_grads(&self, s: &PreparedSample, dropout_seed: Option<u64>) -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let mut dropout = match dropout_seed {
            Some(seed) if self.config.dropout > 0.0 => {
                Some(Dropout::new(self.config.dropout, ChaCha8Rng::seed_from_u64(seed)))
            }
            _ => None,
        };
        let out = self.forward(&mut tape, s, dropout.as_mut(), None)?;
        let loss = loss(&mut tape, out.logits, &s.multi_hot)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, grads.params().clone()))
    }
}

/// Mean binary cross-entropy with logits over label categories.
pub fn loss(tape: &mut Tape, logits: Var, target: &[f64]) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::Argument("empty target".into()));
    }
    tape.bce_with_logits(logits, target)
}
