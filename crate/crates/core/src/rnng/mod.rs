//! Discriminative recurrent neural network grammar.
//!
//! The parser state is summarized by three recurrent structures: a
//! right-to-left LSTM over the unread tokens, a stack-LSTM over the partial
//! tree (completed constituents are collapsed by a [`Composer`]) and an LSTM
//! over the actions taken so far. A linear layer and a softmax restricted to
//! the legal actions score the next transition.
//!
//! [`Composer`]: crate::neural::Composer

pub mod model;
pub mod search;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{max_actions, DecodeConfig, Decoded, Rnng, RnngArch, RnngState, Session, REDUCE, SHIFT};
pub use search::{beam_search, decode_best, greedy, Hypothesis, SearchError, SearchFailure, SearchSpace, TableSpace};
pub use train::{Example, RnngEpochLog, TrainOutcome};

use crate::encoder::{EmbeddingConfig, EncoderError, ProviderMode};
use crate::eval::EvalError;
use crate::neural::{AdamConfig, CompositionMode, NeuralError};
use crate::transition::TransitionError;

#[derive(Debug, Error)]
pub enum RnngError {
    #[error("sentence {sentence}: oracle action {action} at step {step} is not allowed by the transition rules")]
    OracleIllegal {
        sentence: String,
        step: usize,
        action: String,
    },
    #[error("action {0} is not allowed by the transition rules")]
    IllegalAction(String),
    #[error("no legal action in an unfinished state")]
    EmptyMask,
    #[error("label {0} is not in the model's action set")]
    UnknownLabel(String),
    #[error("decoding failed: {0:?}")]
    Search(SearchFailure),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnngConfig {
    pub embedding: EmbeddingConfig,
    /// Per-direction width of the token BiLSTM.
    pub token_hidden: usize,
    /// Width of stack entries: token, label and composed vectors.
    pub stack_input: usize,
    pub stack_hidden: usize,
    pub buffer_hidden: usize,
    pub history_hidden: usize,
    pub action_dim: usize,
    pub summary_dim: usize,
    /// Also feed the next unread token's representation to the summary.
    pub lookahead: bool,
    pub composition: CompositionMode,
    pub compose_hidden: usize,
    pub word_dropout: f64,
    pub dropout: f64,
    /// Label smoothing over the legal actions.
    pub smoothing: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a better dev relation F1.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Learning-rate factor applied when the dev loss stalls.
    pub lr_decay: f64,
    /// Epochs of stalled dev loss before decaying.
    pub lr_patience: usize,
    pub seed: u64,
}

impl Default for RnngConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig {
                mode: ProviderMode::CharNgramHash,
                min_freq: 1,
                ..EmbeddingConfig::default()
            },
            token_hidden: 48,
            stack_input: 32,
            stack_hidden: 64,
            buffer_hidden: 32,
            history_hidden: 24,
            action_dim: 16,
            summary_dim: 64,
            lookahead: true,
            composition: CompositionMode::Bilstm,
            compose_hidden: 24,
            word_dropout: 0.1,
            dropout: 0.3,
            smoothing: 0.05,
            epochs: 30,
            patience: 10,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            lr_decay: 0.5,
            lr_patience: 5,
            seed: 1,
        }
    }
}

impl RnngConfig {
    pub fn validate(&self) -> Result<(), RnngError> {
        let dims = [
            self.token_hidden,
            self.stack_input,
            self.stack_hidden,
            self.buffer_hidden,
            self.history_hidden,
            self.action_dim,
            self.summary_dim,
            self.compose_hidden,
            self.embedding.dim,
        ];
        if dims.contains(&0) {
            return Err(RnngError::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.word_dropout) {
            return Err(RnngError::Config("dropout rates must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(RnngError::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(RnngError::Config("smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
