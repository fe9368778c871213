//! Token input vectors.
//!
//! Each token is represented by a word vector from an [`EmbeddingProvider`]
//! followed by one 10-dimensional embedding per categorical
//! [`FeatureChannel`] (terminology matches or BIO tags predicted by an
//! upstream tagger).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BioSequence, Label};
use crate::neural::{dropout_mask, Graph, Init, NodeId, ParamId, ParamStore};

pub const FEATURE_DIM: usize = 10;
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("external embedding file not found: {0}")]
    MissingExternalFile(PathBuf),
    #[error("{path}:{line}: {message}")]
    ExternalFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("tag `{tag}` is not in the tagset of channel `{channel}`")]
    TagNotInTagset { channel: String, tag: String },
    #[error("feature sequence has {found} tags, sentence has {expected} tokens")]
    LengthMismatch { expected: usize, found: usize },
    #[error("expected {expected} feature sequences, got {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error("cannot embed an empty sentence")]
    EmptySentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Lookup,
    CharNgramHash,
    ExternalFile,
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lookup" => Ok(Self::Lookup),
            "char_ngram_hash" => Ok(Self::CharNgramHash),
            "external_file" => Ok(Self::ExternalFile),
            other => Err(format!(
                "unknown embedding mode `{other}` (expected lookup, char_ngram_hash or external_file)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub mode: ProviderMode,
    pub dim: usize,
    /// Lookup mode: tokens seen fewer times than this map to UNK.
    pub min_freq: usize,
    pub buckets: usize,
    pub hash_seed: u64,
    pub external_path: Option<PathBuf>,
    pub lowercase: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Lookup,
            dim: 32,
            min_freq: 2,
            buckets: 1 << 14,
            hash_seed: 0,
            external_path: None,
            lowercase: true,
        }
    }
}

/// Token to row index; row 0 is UNK. Serialized as the token list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocab {
            tokens,
            index: HashMap::new(),
        };
        v.rebuild();
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: vec![UNK.to_string()],
            index: HashMap::new(),
        };
        for t in tokens {
            if t != UNK && !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v.rebuild();
        v
    }

    /// Keeps tokens seen at least `min_freq` times, in first-seen order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_freq: usize, lowercase: bool) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order = Vec::new();
        for t in tokens {
            let key = normalize(t, lowercase);
            let c = counts.entry(key.clone()).or_insert(0);
            if *c == 0 {
                order.push(key);
            }
            *c += 1;
        }
        Self::from_tokens(order.into_iter().filter(|t| counts[t] >= min_freq))
    }

    fn rebuild(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Row for a normalized token; 0 when unknown.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token) && token != UNK
    }
}

fn normalize(token: &str, lowercase: bool) -> String {
    if lowercase {
        token.to_lowercase()
    } else {
        token.to_string()
    }
}

/// FNV-1a over the UTF-8 bytes of `s`, with the seed folded into the
/// offset basis.
pub fn fnv1a(s: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Character 3- to 6-grams of `<token>`, plus the bracketed token itself.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = format!("<{token}>").chars().collect();
    let mut out = Vec::new();
    for n in 3..=6 {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    let whole: String = chars.iter().collect();
    if !out.contains(&whole) {
        out.push(whole);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingProvider {
    Lookup {
        vocab: Vocab,
        table: ParamId,
        lowercase: bool,
    },
    /// Rows `0..buckets` are n-gram buckets; row `buckets` is UNK.
    CharNgramHash {
        buckets: usize,
        seed: u64,
        table: ParamId,
        lowercase: bool,
    },
    External {
        vocab: Vocab,
        table: ParamId,
        lowercase: bool,
    },
}

impl EmbeddingProvider {
    /// Builds a provider; `train_tokens` feeds the lookup vocabulary.
    pub fn new<'a>(
        store: &mut ParamStore,
        cfg: &EmbeddingConfig,
        train_tokens: impl IntoIterator<Item = &'a str>,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        Ok(match cfg.mode {
            ProviderMode::Lookup => {
                let vocab = Vocab::build(train_tokens, cfg.min_freq, cfg.lowercase);
                let table = store.add("embed.lookup", &[vocab.len(), cfg.dim], Init::Uniform(0.1), rng);
                EmbeddingProvider::Lookup {
                    vocab,
                    table,
                    lowercase: cfg.lowercase,
                }
            }
            ProviderMode::CharNgramHash => {
                let table = store.add("embed.ngram", &[cfg.buckets + 1, cfg.dim], Init::Uniform(0.1), rng);
                EmbeddingProvider::CharNgramHash {
                    buckets: cfg.buckets,
                    seed: cfg.hash_seed,
                    table,
                    lowercase: cfg.lowercase,
                }
            }
            ProviderMode::ExternalFile => {
                let path = cfg
                    .external_path
                    .as_deref()
                    .ok_or_else(|| EncoderError::MissingExternalFile(PathBuf::from("<unset>")))?;
                let (vocab, dim, rows) = read_vector_file(path, cfg.lowercase)?;
                let table = store.insert("embed.external", &[vocab.len(), dim], rows, false);
                EmbeddingProvider::External {
                    vocab,
                    table,
                    lowercase: cfg.lowercase,
                }
            }
        })
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.get(self.table()).cols()
    }

    pub fn table(&self) -> ParamId {
        match self {
            EmbeddingProvider::Lookup { table, .. }
            | EmbeddingProvider::CharNgramHash { table, .. }
            | EmbeddingProvider::External { table, .. } => *table,
        }
    }

    fn unk(&self, g: &mut Graph<'_>) -> NodeId {
        match self {
            EmbeddingProvider::CharNgramHash { buckets, table, .. } => g.row(*table, *buckets),
            EmbeddingProvider::Lookup { table, .. } | EmbeddingProvider::External { table, .. } => g.row(*table, 0),
        }
    }

    pub fn embed_token(&self, g: &mut Graph<'_>, token: &str) -> NodeId {
        match self {
            EmbeddingProvider::Lookup { vocab, table, lowercase } | EmbeddingProvider::External { vocab, table, lowercase } => {
                g.row(*table, vocab.get(&normalize(token, *lowercase)))
            }
            EmbeddingProvider::CharNgramHash {
                buckets,
                seed,
                table,
                lowercase,
            } => {
                let grams = char_ngrams(&normalize(token, *lowercase));
                let rows: Vec<NodeId> = grams
                    .iter()
                    .map(|s| g.row(*table, (fnv1a(s, *seed) % *buckets as u64) as usize))
                    .collect();
                let sum = g.sum(&rows);
                g.scale(sum, 1.0 / rows.len() as f64)
            }
        }
    }

    /// One vector per token. During training each token is replaced by UNK
    /// with probability `word_dropout`.
    pub fn embed_tokens(
        &self,
        g: &mut Graph<'_>,
        tokens: &[String],
        word_dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<Vec<NodeId>, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySentence);
        }
        let mut out = Vec::with_capacity(tokens.len());
        match word_dropout {
            Some((p, rng)) if p > 0.0 => {
                for t in tokens {
                    if rng.gen::<f64>() < p {
                        out.push(self.unk(g));
                    } else {
                        out.push(self.embed_token(g, t));
                    }
                }
            }
            _ => out.extend(tokens.iter().map(|t| self.embed_token(g, t))),
        }
        Ok(out)
    }
}

/// Reads `token v1 … vd` lines; a leading `n d` header is skipped. Row 0
/// of the returned table is a zero UNK vector.
pub fn read_vector_file(path: &Path, lowercase: bool) -> Result<(Vocab, usize, Vec<f64>), EncoderError> {
    let text = std::fs::read_to_string(path).map_err(|_| EncoderError::MissingExternalFile(path.to_path_buf()))?;
    let err = |line: usize, message: String| EncoderError::ExternalFormat {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = None;
    let mut tokens = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        let d = fields.len() - 1;
        if d == 0 {
            return Err(err(i + 1, "token without a vector".into()));
        }
        match dim {
            None => {
                dim = Some(d);
                rows.extend(std::iter::repeat(0.0).take(d));
            }
            Some(expected) if expected != d => {
                return Err(err(i + 1, format!("vector has {d} values, expected {expected}")));
            }
            _ => {}
        }
        let key = normalize(fields[0], lowercase);
        if tokens.contains(&key) {
            continue;
        }
        for f in &fields[1..] {
            rows.push(f.parse::<f64>().map_err(|e| err(i + 1, format!("bad number `{f}`: {e}")))?);
        }
        tokens.push(key);
    }
    let dim = dim.ok_or_else(|| err(1, "no vectors".into()))?;
    Ok((Vocab::from_tokens(tokens), dim, rows))
}

/// A categorical input channel with a learned 10-dimensional embedding per
/// tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChannel {
    pub name: String,
    pub tagset: Vec<String>,
    pub table: ParamId,
}

impl FeatureChannel {
    pub fn new(store: &mut ParamStore, name: &str, tagset: Vec<String>, rng: &mut impl Rng) -> Self {
        let table = store.add(&format!("feature.{name}"), &[tagset.len(), FEATURE_DIM], Init::Uniform(0.1), rng);
        Self {
            name: name.to_string(),
            tagset,
            table,
        }
    }

    /// Tagset `O, B-l, I-l` for each label.
    pub fn bio_tagset<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Vec<String> {
        let mut tags = vec!["O".to_string()];
        for l in labels {
            tags.push(format!("B-{l}"));
            tags.push(format!("I-{l}"));
        }
        tags
    }

    pub fn tag_index(&self, tag: &str) -> Result<usize, EncoderError> {
        self.tagset
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| EncoderError::TagNotInTagset {
                channel: self.name.clone(),
                tag: tag.to_string(),
            })
    }
}

/// Appends one channel embedding per token and channel.
pub fn concat_features(
    g: &mut Graph<'_>,
    token_vecs: &[NodeId],
    channels: &[(&FeatureChannel, &BioSequence)],
) -> Result<Vec<NodeId>, EncoderError> {
    if channels.is_empty() {
        return Ok(token_vecs.to_vec());
    }
    let mut idx = Vec::with_capacity(channels.len());
    for (ch, seq) in channels {
        if seq.len() != token_vecs.len() {
            return Err(EncoderError::LengthMismatch {
                expected: token_vecs.len(),
                found: seq.len(),
            });
        }
        let rows = seq
            .tags()
            .iter()
            .map(|t| ch.tag_index(&t.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        idx.push(rows);
    }
    Ok(token_vecs
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut parts = vec![v];
            for ((ch, _), rows) in channels.iter().zip(&idx) {
                parts.push(g.row(ch.table, rows[i]));
            }
            g.concat(&parts)
        })
        .collect())
}

/// Word provider plus feature channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub provider: EmbeddingProvider,
    pub channels: Vec<FeatureChannel>,
    pub word_dropout: f64,
}

impl Encoder {
    pub fn output_dim(&self, store: &ParamStore) -> usize {
        self.provider.dim(store) + FEATURE_DIM * self.channels.len()
    }

    /// `features` must list one sequence per channel, in channel order.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        tokens: &[String],
        features: &[BioSequence],
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Vec<NodeId>, EncoderError> {
        if features.len() != self.channels.len() {
            return Err(EncoderError::ChannelCount {
                expected: self.channels.len(),
                found: features.len(),
            });
        }
        let words = self.provider.embed_tokens(g, tokens, rng.map(|r| (self.word_dropout, r)))?;
        let pairs: Vec<(&FeatureChannel, &BioSequence)> = self.channels.iter().zip(features).collect();
        concat_features(g, &words, &pairs)
    }
}

/// Dropout with one mask shared by every position of a sequence.
pub fn locked_dropout(g: &mut Graph<'_>, xs: &[NodeId], p: f64, rng: &mut impl Rng) -> Vec<NodeId> {
    if p <= 0.0 || xs.is_empty() {
        return xs.to_vec();
    }
    let mask: Rc<[f64]> = dropout_mask(g.dim(xs[0]), p, rng);
    xs.iter().map(|&x| g.mask(x, &mask)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{gradcheck, GradcheckOptions};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn lookup(store: &mut ParamStore) -> EmbeddingProvider {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corpus = "aspirine 80 mg aspirine 80 mg rare";
        EmbeddingProvider::new(store, &EmbeddingConfig::default(), corpus.split(' '), &mut rng).unwrap()
    }

    #[test]
    fn lookup_rows_and_unk() {
        let mut store = ParamStore::new();
        let p = lookup(&mut store);
        let EmbeddingProvider::Lookup { vocab, table, .. } = &p else {
            panic!()
        };
        assert!(vocab.contains("aspirine"));
        assert!(!vocab.contains("rare"), "below the frequency threshold");
        let mut g = Graph::new(&store);
        let v = p.embed_tokens(&mut g, &toks("Aspirine rare"), None).unwrap();
        assert_eq!(g.value(v[0]), store.get(*table).row(vocab.get("aspirine")));
        assert_eq!(g.value(v[1]), store.get(*table).row(0));
        assert!(matches!(p.embed_tokens(&mut g, &[], None), Err(EncoderError::EmptySentence)));
    }

    #[test]
    fn word_dropout_all_unk() {
        let mut store = ParamStore::new();
        let p = lookup(&mut store);
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = p.embed_tokens(&mut g, &toks("aspirine mg"), Some((1.0, &mut rng))).unwrap();
        assert_eq!(g.value(v[0]), g.value(v[1]));
    }

    #[test]
    fn hashed_ngrams_are_deterministic() {
        assert_eq!(char_ngrams("a"), vec!["<a>"]);
        assert!(char_ngrams("dose").contains(&"<dose>".to_string()));
        let cfg = EmbeddingConfig {
            mode: ProviderMode::CharNgramHash,
            buckets: 97,
            ..EmbeddingConfig::default()
        };
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let p = EmbeddingProvider::new(&mut store, &cfg, std::iter::empty(), &mut rng).unwrap();
            let mut g = Graph::new(&store);
            let v = p.embed_tokens(&mut g, &toks("paracetamol paracetamol doliprane"), None).unwrap();
            v.iter().map(|n| g.value(*n).to_vec()).collect::<Vec<_>>()
        };
        let a = build();
        assert_eq!(a[0], a[1]);
        assert_ne!(a[0], a[2]);
        assert_eq!(a, build());
    }

    #[test]
    fn external_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "2 3\naspirine 1 2 3\nmg 0.5 0 -1\n").unwrap();
        let cfg = EmbeddingConfig {
            mode: ProviderMode::ExternalFile,
            external_path: Some(path.clone()),
            ..EmbeddingConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EmbeddingProvider::new(&mut store, &cfg, std::iter::empty(), &mut rng).unwrap();
        assert_eq!(p.dim(&store), 3);
        let mut g = Graph::new(&store);
        let v = p.embed_tokens(&mut g, &toks("aspirine inconnu"), None).unwrap();
        assert_eq!(g.value(v[0]), &[1.0, 2.0, 3.0]);
        assert_eq!(g.value(v[1]), &[0.0; 3]);

        std::fs::write(&path, "a 1 2\nb 1\n").unwrap();
        assert!(matches!(
            EmbeddingProvider::new(&mut ParamStore::new(), &cfg, std::iter::empty(), &mut rng),
            Err(EncoderError::ExternalFormat { line: 2, .. })
        ));
        let missing = EmbeddingConfig {
            external_path: Some(dir.path().join("nope.txt")),
            ..cfg
        };
        assert!(matches!(
            EmbeddingProvider::new(&mut ParamStore::new(), &missing, std::iter::empty(), &mut rng),
            Err(EncoderError::MissingExternalFile(_))
        ));
    }

    fn channel(store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng) -> FeatureChannel {
        let labels = [Label::new("Drug_name"), Label::new("Dose")];
        FeatureChannel::new(store, name, FeatureChannel::bio_tagset(&labels), rng)
    }

    #[test]
    fn all_outside_channel_appends_same_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let ch = channel(&mut store, "ent", &mut rng);
        let mut g = Graph::new(&store);
        let a = g.input(vec![1.0, 2.0]);
        let b = g.input(vec![3.0, 4.0]);
        assert_eq!(concat_features(&mut g, &[a, b], &[]).unwrap(), vec![a, b]);
        let bio = BioSequence::all_outside(2);
        let out = concat_features(&mut g, &[a, b], &[(&ch, &bio)]).unwrap();
        assert_eq!(g.dim(out[0]), 12);
        assert_eq!(g.value(out[0])[2..], g.value(out[1])[2..]);
        let wrong: BioSequence = "B-Route".parse().unwrap();
        assert!(matches!(
            concat_features(&mut g, &[a], &[(&ch, &wrong)]),
            Err(EncoderError::TagNotInTagset { .. })
        ));
        assert!(matches!(
            concat_features(&mut g, &[a], &[(&ch, &bio)]),
            Err(EncoderError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn feature_embeddings_receive_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ch = channel(&mut store, "ent", &mut rng);
        let x = store.insert("x", &[2], vec![0.3, -0.2], true);
        let bio: BioSequence = "B-Dose I-Dose O".parse().unwrap();
        let f = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let xs: Vec<NodeId> = (0..3).map(|_| g.param(x)).collect();
            let out = concat_features(&mut g, &xs, &[(&ch, &bio)]).unwrap();
            let sq: Vec<NodeId> = out.iter().map(|&o| g.mul(o, o)).collect();
            let s = g.sum(&sq);
            let loss = g.total(s);
            (g.scalar(loss), g.backward(loss))
        };
        let grads = f(&store).1;
        assert!(grads.get(ch.table).unwrap().iter().any(|v| *v != 0.0));
        let report = gradcheck(&mut store, f, &GradcheckOptions::default());
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    proptest! {
        #[test]
        fn output_dim_grows_by_ten_per_channel(k in 0usize..=3, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut store = ParamStore::new();
            let provider = lookup(&mut store);
            let channels: Vec<FeatureChannel> =
                (0..k).map(|i| channel(&mut store, &format!("c{i}"), &mut rng)).collect();
            let enc = Encoder { provider, channels, word_dropout: 0.0 };
            let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let feats = vec![BioSequence::all_outside(n); k];
            let mut g = Graph::new(&store);
            let out = enc.encode(&mut g, &tokens, &feats, None).unwrap();
            prop_assert_eq!(out.len(), n);
            prop_assert_eq!(enc.output_dim(&store), 32 + 10 * k);
            prop_assert!(out.iter().all(|o| g.dim(*o) == 32 + 10 * k));
        }
    }
}
