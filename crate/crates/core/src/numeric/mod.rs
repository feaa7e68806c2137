//! Dense tensors, a reverse-mode tape, AdamW and checkpoints.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_params, save_params, CheckpointEntry, CheckpointManifest};
pub use gradcheck::{check_against, finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use optim::{AdamW, AdamWConfig};
pub use params::{accumulate, GradMap, Gradients, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
