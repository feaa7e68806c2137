//! The end-to-end model: configuration, initial features, forward pass,
//! training, grid search and checkpoints.

mod checkpoint;
mod config;
mod features;
mod grid;
mod network;
mod train;

pub use checkpoint::{load_trained, save_trained};
pub use config::ModelConfig;
pub use features::{prepare_sample, prepare_samples, PreparedSample};
pub use grid::{apply_overrides, expand_space, grid_search, GridReport, GridRow};
pub use network::{loss, ForwardOutput, Model};
pub use train::{score_prepared, train, train_prepared, EpochLog, TrainOptions, TrainedModel, SELECTION_K};
