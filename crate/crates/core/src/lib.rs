//! Temporal heterogeneous graph transformer for next-visit diagnosis
//! prediction.
//!
//! A patient's history becomes a graph of visit nodes (a directed
//! chronological chain) and deduplicated medical-event nodes linked to the
//! visits that contain them. Visit nodes carry Time2Vec features, event-visit
//! edges carry a learned time factor, event nodes carry Laplacian and
//! random-walk encodings of medication/diagnosis/procedure meta-path graphs,
//! and stacked typed-attention layers push event information into visit
//! nodes. The last visit node feeds a multi-label predictor.
//!
//! Module map:
//!
//! * [`ehr`]: records, JSONL ingestion, vocabulary, samples, splits, synthetic cohorts
//! * [`graph`]: patient graphs and meta-path adjacencies
//! * [`numeric`]: tensors, reverse-mode tape, AdamW, checkpoints, gradient checks
//! * [`temporal`]: Time2Vec and functional time encoding
//! * [`spatial`]: Laplacian positional and random-walk structural encodings
//! * [`layer`]: the temporal heterogeneous message-passing layer
//! * [`model`]: the full model, training loop and grid search
//! * [`explain`]: node-mask explainer and cohort-level importance
//! * [`metrics`]: visit-level precision@k, code-level accuracy@k, baseline
//! * [`par`]: data-parallel helpers (rayon behind the `parallel` feature)

// Comparisons that must also reject NaN are written as negations.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ehr;
pub mod error;
pub mod explain;
pub mod graph;
pub mod io_util;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod par;
pub mod spatial;
pub mod temporal;

pub use error::{Error, Result};
