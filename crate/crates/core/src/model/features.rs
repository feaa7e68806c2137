//! Per-sample preprocessing shared by training, evaluation and explanation.

use std::collections::BTreeSet;

use crate::ehr::{CodeKind, CodeVocabulary, Sample};
use crate::error::Result;
use crate::graph::{build_patient_graph, PatientGraph};
use crate::layer::LayerGraph;
use crate::par::{self, Exec};
use crate::spatial::{encode_graph, MetaPaths, SpatialEncoding};
use crate::temporal::normalize_visit_times;

use super::config::ModelConfig;

/// Everything about a sample that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub patient_id: String,
    pub visit_index: usize,
    pub graph: PatientGraph,
    pub layer_graph: LayerGraph,
    pub spatial: Option<SpatialEncoding>,
    pub normalized_times: Vec<f64>,
    /// Embedding row of each event node within its kind's table.
    pub embedding_rows: Vec<usize>,
    /// Events whose code is missing from the vocabulary.
    pub unknown_codes: usize,
    pub target: BTreeSet<usize>,
    pub multi_hot: Vec<f64>,
}

impl PreparedSample {
    pub fn n_visits(&self) -> usize {
        self.graph.n_visits()
    }

    pub fn n_events(&self) -> usize {
        self.graph.n_events()
    }

    /// Embedding rows of one kind's events, in event order.
    pub fn rows_of_kind(&self, kind: CodeKind) -> &[usize] {
        &self.embedding_rows[self.layer_graph.kind_ranges[kind.index()].clone()]
    }
}

pub fn prepare_sample(
    sample: &Sample,
    vocab: &CodeVocabulary,
    paths: &MetaPaths,
    config: &ModelConfig,
) -> Result<PreparedSample> {
    let graph = build_patient_graph(sample);
    let layer_graph = LayerGraph::new(&graph)?;
    let spatial = if config.use_se {
        Some(encode_graph(&graph, paths, config.se_dim)?)
    } else {
        None
    };
    let times: Vec<f64> = graph.visits.iter().map(|v| v.time).collect();
    let mut unknown_codes = 0;
    let embedding_rows = graph
        .events
        .iter()
        .map(|e| {
            let row = vocab.embedding_index(e.kind, &e.code);
            if row == vocab.unk_index(e.kind) {
                unknown_codes += 1;
            }
            row
        })
        .collect();
    Ok(PreparedSample {
        patient_id: sample.patient_id.clone(),
        visit_index: sample.visit_index,
        normalized_times: normalize_visit_times(&times),
        layer_graph,
        graph,
        spatial,
        embedding_rows,
        unknown_codes,
        target: sample.target.clone(),
        multi_hot: sample.multi_hot(),
    })
}

pub fn prepare_samples(
    exec: Exec,
    samples: &[Sample],
    vocab: &CodeVocabulary,
    config: &ModelConfig,
) -> Result<Vec<PreparedSample>> {
    let paths = config.metapaths()?;
    par::try_map(exec, samples, |s| prepare_sample(s, vocab, &paths, config))
}
