//! Recurrent neural network grammar (RNNG) parser for extracting medication
//! entities and their relations from tokenized clinical text.
//!
//! Entities, events and relations are represented as one constituency tree
//! per sentence. The parser builds that tree top-down with `OPEN-NT`, `SHIFT`
//! and `REDUCE` actions, scored by a stack-LSTM model and constrained by
//! transition rules induced from the training corpus. A BiLSTM-CRF tagger is
//! provided as the sequence-labelling baseline and as the pre-labeller of the
//! cascaded (`seq-`) configurations.
//!
//! Module map:
//!
//! - [`corpus`]: trees, label schema, bracketed file format, BIO projection,
//!   synthetic corpus generation and undersampling.
//! - [`transition`]: actions, parser state machine, oracle, rule induction.
//! - [`neural`]: reverse-mode autodiff tape, LSTM, stack-LSTM, composition,
//!   label-smoothed loss, Adam, gradient checking, checkpoints.
//! - [`encoder`]: token embeddings and categorical feature channels.
//! - [`terminology`]: token trie gazetteer producing BIO feature sequences.
//! - [`crf`]: linear-chain CRF and the BiLSTM-CRF tagger.
//! - [`rnng`]: the RNNG model, training and (beam) decoding.
//! - [`eval`]: exact-match entity and relation scoring with bootstrap CIs.
//! - [`pipeline`]: run configuration and the end-to-end experiment driver.

pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod eval;
pub mod neural;
pub mod pipeline;
pub mod rnng;
pub mod terminology;
pub mod transition;

pub use corpus::{Corpus, Label, LabelFamily, LabelSchema, Node, Tree};

pub use transition::{Action, ParserState, TransitionRuleSet};
