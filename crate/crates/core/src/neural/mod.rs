//! Differentiable building blocks with batch size one.
//!
//! [`Graph`] is a tape recorded while the forward pass runs; every model in
//! the crate builds one graph per sentence, calls [`Graph::backward`] on the
//! scalar loss and folds the returned [`Gradients`] into its
//! [`ParamStore`]. All arithmetic is `f64`.

pub mod checkpoint;
pub mod compose;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod stack;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use compose::{Composer, CompositionMode};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{dropout_mask, Graph, NodeId};
pub use loss::{smoothed_cross_entropy, smoothed_targets, SmoothingConfig};
pub use lstm::{bilstm_encode, lstm_step, BiLstm, LstmCellParams, LstmState};
pub use optim::{Adam, AdamConfig, ReduceOnPlateau};
pub use params::{Gradients, Init, ParamId, ParamStore, ParamTensor};
pub use stack::StackLstm;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("pop on an empty stack")]
    EmptyStack,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}
