//! Linear-chain CRF and the BiLSTM-CRF tagger.
//!
//! [`chain`] holds the exact inference routines on plain score tables;
//! [`tagger`] trains BiLSTM emissions with a learned transition matrix in
//! which invalid BIO moves are fixed at `-inf`.

pub mod chain;
pub mod tagger;

use thiserror::Error;

pub use chain::{ChainScores, Marginals};
pub use tagger::{bio_masks, ChannelSpec, CrfTagger, EpochLog, TaggedExample, TaggerArch, TaggerConfig};

use crate::encoder::EncoderError;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("gold sequence has {found} tags, sentence has {expected} tokens")]
    LengthMismatch { expected: usize, found: usize },
    #[error("tag `{0}` is not in the tagger's tagset")]
    UnknownTag(String),
    #[error("invalid tagger configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{0}")]
    Neural(String),
}

/// `log Z` of a chain given as nested vectors.
pub fn crf_log_partition(emissions: &[Vec<f64>], trans: &[f64], start: &[f64], stop: &[f64]) -> f64 {
    let em: Vec<&[f64]> = emissions.iter().map(Vec::as_slice).collect();
    ChainScores {
        emissions: &em,
        trans,
        start,
        stop,
    }
    .log_partition()
}

/// Best tag path; exact ties go to the lowest tag index.
pub fn crf_viterbi(emissions: &[Vec<f64>], trans: &[f64], start: &[f64], stop: &[f64]) -> Vec<usize> {
    let em: Vec<&[f64]> = emissions.iter().map(Vec::as_slice).collect();
    ChainScores {
        emissions: &em,
        trans,
        start,
        stop,
    }
    .viterbi()
    .0
}

/// `log Z - score(gold)`; never negative.
pub fn crf_nll(emissions: &[Vec<f64>], trans: &[f64], start: &[f64], stop: &[f64], gold: &[usize]) -> Result<f64, CrfError> {
    if gold.len() != emissions.len() {
        return Err(CrfError::LengthMismatch {
            expected: emissions.len(),
            found: gold.len(),
        });
    }
    let em: Vec<&[f64]> = emissions.iter().map(Vec::as_slice).collect();
    let c = ChainScores {
        emissions: &em,
        trans,
        start,
        stop,
    };
    Ok(c.log_partition() - c.path_score(gold))
}
