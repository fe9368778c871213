//! Token-level gazetteer matching.
//!
//! A [`Terminology`] is a set of case-folded token sequences. [`match_bio`]
//! scans a sentence left to right, takes the longest entry starting at the
//! current position, emits `B`/`I` tags for it and resumes after its end.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{BioSequence, BioTag, Label};

#[derive(Debug, Error)]
pub enum TerminologyError {
    #[error("terminology `{0}` contains an empty entry")]
    EmptyEntry(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid terminology spec `{0}` (expected name=path)")]
    BadSpec(String),
}

fn fold(token: &str) -> String {
    token.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Terminology {
    pub name: String,
    entries: BTreeSet<Vec<String>>,
}

impl Terminology {
    pub fn new<I, E, S>(name: &str, entries: I) -> Result<Self, TerminologyError>
    where
        I: IntoIterator<Item = E>,
        E: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for e in entries {
            let toks: Vec<String> = e.into_iter().map(|t| fold(t.as_ref())).collect();
            if toks.is_empty() || toks.iter().any(|t| t.is_empty()) {
                return Err(TerminologyError::EmptyEntry(name.to_string()));
            }
            set.insert(toks);
        }
        Ok(Self {
            name: name.to_string(),
            entries: set,
        })
    }

    /// One entry per non-blank line, tokens separated by whitespace.
    pub fn parse(name: &str, text: &str) -> Result<Self, TerminologyError> {
        Self::new(
            name,
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split_whitespace()),
        )
    }

    pub fn read(name: &str, path: &Path) -> Result<Self, TerminologyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TerminologyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(name, &text)
    }

    /// Parses a `name=path` command-line spec and reads the file.
    pub fn from_spec(spec: &str) -> Result<Self, TerminologyError> {
        let (name, path) = spec
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| TerminologyError::BadSpec(spec.to_string()))?;
        Self::read(name, Path::new(path))
    }

    pub fn entries(&self) -> impl Iterator<Item = &[String]> {
        self.entries.iter().map(|e| e.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| e.join(" ") + "\n").collect()
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    terminal: bool,
}

/// Result of a membership query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub member: bool,
    /// Some entry strictly extends the query.
    pub extendable: bool,
}

#[derive(Debug, Clone)]
pub struct TokenTrie {
    name: String,
    nodes: Vec<TrieNode>,
}

pub fn build_trie(term: &Terminology) -> TokenTrie {
    let mut nodes = vec![TrieNode::default()];
    for entry in term.entries() {
        let mut cur = 0;
        for tok in entry {
            cur = match nodes[cur].children.get(tok) {
                Some(&n) => n,
                None => {
                    nodes.push(TrieNode::default());
                    let n = nodes.len() - 1;
                    nodes[cur].children.insert(tok.clone(), n);
                    n
                }
            };
        }
        nodes[cur].terminal = true;
    }
    TokenTrie {
        name: term.name.clone(),
        nodes,
    }
}

impl TokenTrie {
    pub fn name(&self) -> &str {
        &self.name
    }

    fn walk<S: AsRef<str>>(&self, tokens: &[S]) -> Option<usize> {
        let mut cur = 0;
        for t in tokens {
            cur = *self.nodes[cur].children.get(&fold(t.as_ref()))?;
        }
        Some(cur)
    }

    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Lookup {
        match self.walk(tokens) {
            Some(n) => Lookup {
                member: self.nodes[n].terminal && !tokens.is_empty(),
                extendable: !self.nodes[n].children.is_empty(),
            },
            None => Lookup {
                member: false,
                extendable: false,
            },
        }
    }

    /// Length of the longest entry that starts at `start`.
    pub fn longest_match<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Option<usize> {
        let mut cur = 0;
        let mut best = None;
        for (k, t) in tokens[start..].iter().enumerate() {
            match self.nodes[cur].children.get(&fold(t.as_ref())) {
                Some(&n) => cur = n,
                None => break,
            }
            if self.nodes[cur].terminal {
                best = Some(k + 1);
            }
        }
        best
    }

    /// Matched spans as `(start, end)` pairs.
    pub fn match_spans<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.longest_match(tokens, i) {
                Some(len) => {
                    out.push((i, i + len));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Tags the sentence with `B-name`/`I-name` over greedy longest matches.
pub fn match_bio<S: AsRef<str>>(trie: &TokenTrie, tokens: &[S]) -> BioSequence {
    let label = Label::new(trie.name());
    let mut tags = vec![BioTag::O; tokens.len()];
    for (s, e) in trie.match_spans(tokens) {
        tags[s] = BioTag::B(label.clone());
        for t in &mut tags[s + 1..e] {
            *t = BioTag::I(label.clone());
        }
    }
    BioSequence::new(tags).expect("matches produce valid BIO")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn term(entries: &[&str]) -> Terminology {
        Terminology::new("drug", entries.iter().map(|e| e.split_whitespace())).unwrap()
    }

    /// Tries every entry at every position, keeps the longest, skips past it.
    fn brute_force(term: &Terminology, sent: &[&str]) -> Vec<String> {
        let folded: Vec<String> = sent.iter().map(|t| t.to_lowercase()).collect();
        let mut tags = vec!["O".to_string(); sent.len()];
        let mut i = 0;
        while i < sent.len() {
            let best = term
                .entries()
                .filter(|e| folded[i..].starts_with(e))
                .map(|e| e.len())
                .max();
            match best {
                Some(l) => {
                    tags[i] = "B-drug".into();
                    for t in &mut tags[i + 1..i + l] {
                        *t = "I-drug".into();
                    }
                    i += l;
                }
                None => i += 1,
            }
        }
        tags
    }

    #[test]
    fn membership_queries() {
        let t = build_trie(&term(&["aspirine", "acide acetylsalicylique"]));
        assert_eq!(t.lookup(&["aspirine"]), Lookup { member: true, extendable: false });
        assert_eq!(t.lookup(&["acide"]), Lookup { member: false, extendable: true });
        assert_eq!(t.lookup(&["ibuprofene"]), Lookup { member: false, extendable: false });
        assert!(t.lookup(&["ASPIRINE"]).member);
    }

    #[test]
    fn longest_match_wins() {
        let t = build_trie(&term(&["acide acetylsalicylique", "acide"]));
        let bio = match_bio(&t, &toks("acide acetylsalicylique 80 mg"));
        assert_eq!(bio.to_string(), "B-drug I-drug O O");
        let none = match_bio(&t, &toks("le patient dort"));
        assert_eq!(none, BioSequence::all_outside(3));
    }

    #[test]
    fn empty_entries_rejected() {
        assert!(matches!(
            Terminology::new("x", vec![Vec::<&str>::new()]),
            Err(TerminologyError::EmptyEntry(_))
        ));
        assert_eq!(Terminology::parse("x", "a b\n\nc\n").unwrap().len(), 2);
        assert!(matches!(Terminology::from_spec("nameonly"), Err(TerminologyError::BadSpec(_))));
    }

    #[test]
    fn agrees_with_brute_force() {
        let alphabet = ["a", "b", "c", "A"];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let n_entries = rng.gen_range(0..=10);
            let entries: Vec<String> = (0..n_entries)
                .map(|_| {
                    let len = rng.gen_range(1..=3);
                    (0..len).map(|_| alphabet[rng.gen_range(0..4)]).collect::<Vec<_>>().join(" ")
                })
                .collect();
            let refs: Vec<&str> = entries.iter().map(String::as_str).collect();
            let t = term(&refs);
            let trie = build_trie(&t);
            let len = rng.gen_range(1..=8);
            let sent: Vec<&str> = (0..len).map(|_| alphabet[rng.gen_range(0..4)]).collect();
            let got: Vec<String> = match_bio(&trie, &sent).tags().iter().map(|t| t.to_string()).collect();
            assert_eq!(got, brute_force(&t, &sent), "{entries:?} / {sent:?}");
        }
    }
}
