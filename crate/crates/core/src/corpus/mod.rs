//! Sentences, annotation trees and corpora.
//!
//! A sentence is annotated as a constituency tree: tokens are terminals,
//! entities/events/relations are labeled non-terminals, and an implicit
//! `ROOT` spans the whole sentence. Tokens outside any annotation hang
//! directly from `ROOT`.

mod bio;
mod format;
mod generate;
mod sampling;
mod schema;
mod tree;

pub use bio::{
    bio_to_spans, project_tree, spans_to_bio, tree_from_spans, tree_to_bio, BioError, BioSequence,
    BioTag, Span,
};
pub use format::{
    escape_token, parse_corpus, parse_tree, read_corpus, serialize_tree, unescape_token,
    write_corpus, write_trees,
};
pub use generate::{generate_synthetic_corpus, GeneratorConfig, SyntheticCorpus, TemplateWeights};
pub use sampling::{undersample, Ratio};
pub use schema::{Label, LabelFamily, LabelSchema, ROOT};
pub use tree::{Constituent, Node, Tree, TreeError, MAX_LABELED_DEPTH};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while reading or validating corpus files.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invariant violation at line {line}: {rule}")]
    InvariantViolation { line: usize, rule: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Tree>,
}

/// A list of documents, each a list of annotated sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Option<Split>,
    documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate document ids.
    pub fn new(split: Option<Split>, documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateDocument(doc.id.clone()));
            }
        }
        Ok(Self { split, documents })
    }

    /// Wraps loose sentences into a single document.
    pub fn from_sentences(split: Option<Split>, sentences: Vec<Tree>) -> Self {
        Self {
            split,
            documents: vec![Document {
                id: "doc0".to_string(),
                sentences,
            }],
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Tree> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_sentences() == 0
    }

    /// Returns a corpus with the same document layout and every tree mapped.
    pub fn map_trees(&self, mut f: impl FnMut(&Tree) -> Tree) -> Corpus {
        Corpus {
            split: self.split,
            documents: self
                .documents
                .iter()
                .map(|d| Document {
                    id: d.id.clone(),
                    sentences: d.sentences.iter().map(&mut f).collect(),
                })
                .collect(),
        }
    }
}
