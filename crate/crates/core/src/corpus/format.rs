//! Bracketed one-tree-per-line corpus format.
//!
//! ```text
//! # doc_id = note-17
//! (ROOT (DrugAndFields (Drug_name aspirine) (Dose 80 mg) (Frequency par jour)))
//! (ROOT le patient dort)
//! ```
//!
//! Terminals are raw tokens with `(` and `)` escaped as `-LRB-` / `-RRB-`.
//! `# doc_id = X` lines start a new document; other `#` lines and blank lines
//! are ignored. Trees before the first header belong to document `doc0`.

use std::fmt::Write as _;
use std::path::Path;

use super::schema::{Label, LabelSchema, ROOT};
use super::tree::{Node, Tree};
use super::{Corpus, CorpusError, Document, Split};

const DOC_HEADER: &str = "# doc_id = ";

pub fn escape_token(token: &str) -> String {
    token.replace('(', "-LRB-").replace(')', "-RRB-")
}

pub fn unescape_token(token: &str) -> String {
    token.replace("-LRB-", "(").replace("-RRB-", ")")
}

/// Canonical single-space serialization of a tree.
pub fn serialize_tree(tree: &Tree) -> String {
    fn write_node(node: &Node, tokens: &[String], out: &mut String) {
        match node {
            Node::Terminal(i) => out.push_str(&escape_token(&tokens[*i])),
            Node::NonTerminal { label, children } => {
                let _ = write!(out, "({label}");
                for c in children {
                    out.push(' ');
                    write_node(c, tokens, out);
                }
                out.push(')');
            }
        }
    }
    let mut out = String::from("(ROOT");
    for c in tree.children() {
        out.push(' ');
        write_node(c, tree.tokens(), &mut out);
    }
    out.push(')');
    out
}

#[derive(Debug, PartialEq)]
enum Lexeme<'a> {
    Open,
    Close,
    Atom(&'a str),
}

/// Splits a line into lexemes tagged with their 1-based column.
fn lex(line: &str) -> Vec<(usize, Lexeme<'_>)> {
    let mut out = Vec::new();
    let mut atom_start: Option<(usize, usize)> = None; // (byte, col)
    let mut col = 0usize;
    for (byte, ch) in line.char_indices() {
        col += 1;
        let is_delim = ch == '(' || ch == ')' || ch.is_whitespace();
        if is_delim {
            if let Some((b, c)) = atom_start.take() {
                out.push((c, Lexeme::Atom(&line[b..byte])));
            }
            match ch {
                '(' => out.push((col, Lexeme::Open)),
                ')' => out.push((col, Lexeme::Close)),
                _ => {}
            }
        } else if atom_start.is_none() {
            atom_start = Some((byte, col));
        }
    }
    if let Some((b, c)) = atom_start {
        out.push((c, Lexeme::Atom(&line[b..])));
    }
    out
}

struct LineParser<'a> {
    lexemes: Vec<(usize, Lexeme<'a>)>,
    pos: usize,
    end_col: usize,
    line: usize,
    tokens: Vec<String>,
}

impl<'a> LineParser<'a> {
    fn syntax(&self, col: usize, message: impl Into<String>) -> CorpusError {
        CorpusError::Syntax {
            line: self.line,
            col,
            message: message.into(),
        }
    }

    fn col(&self) -> usize {
        self.lexemes
            .get(self.pos)
            .map(|(c, _)| *c)
            .unwrap_or(self.end_col)
    }

    fn next(&mut self) -> Option<&(usize, Lexeme<'a>)> {
        let item = self.lexemes.get(self.pos);
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    /// Parses children up to and including the closing bracket.
    fn children(&mut self) -> Result<Vec<Node>, CorpusError> {
        let mut children = Vec::new();
        loop {
            let col = self.col();
            match self.next() {
                None => return Err(self.syntax(col, "unbalanced brackets: missing `)`")),
                Some((_, Lexeme::Close)) => return Ok(children),
                Some((_, Lexeme::Atom(tok))) => {
                    let tok = unescape_token(tok);
                    children.push(Node::Terminal(self.tokens.len()));
                    self.tokens.push(tok);
                }
                Some((_, Lexeme::Open)) => {
                    let col = self.col();
                    let label = match self.next() {
                        Some((_, Lexeme::Atom(l))) => Label::new(l),
                        _ => return Err(self.syntax(col, "expected a label after `(`")),
                    };
                    if label.is_root() {
                        return Err(CorpusError::InvariantViolation {
                            line: self.line,
                            rule: "ROOT may only appear as the outermost node".into(),
                        });
                    }
                    let grandchildren = self.children()?;
                    children.push(Node::NonTerminal {
                        label,
                        children: grandchildren,
                    });
                }
            }
        }
    }
}

fn parse_line(line: &str, line_no: usize, schema: Option<&LabelSchema>) -> Result<Tree, CorpusError> {
    let mut p = LineParser {
        lexemes: lex(line),
        pos: 0,
        end_col: line.chars().count() + 1,
        line: line_no,
        tokens: Vec::new(),
    };
    let col = p.col();
    if p.next() != Some(&(col, Lexeme::Open)) {
        return Err(p.syntax(col, "expected `(ROOT`"));
    }
    let col = p.col();
    match p.next() {
        Some((_, Lexeme::Atom(l))) if *l == ROOT => {}
        _ => return Err(p.syntax(col, "outermost label must be ROOT")),
    }
    let children = p.children()?;
    if p.pos < p.lexemes.len() {
        let col = p.col();
        return Err(p.syntax(col, "trailing content after the ROOT constituent"));
    }
    let tree = Tree::new(p.tokens, children).map_err(|e| CorpusError::InvariantViolation {
        line: line_no,
        rule: e.to_string(),
    })?;
    if let Some(schema) = schema {
        tree.check_schema(schema)
            .map_err(|e| CorpusError::InvariantViolation {
                line: line_no,
                rule: e.to_string(),
            })?;
    }
    Ok(tree)
}

/// Parses a single bracketed tree.
pub fn parse_tree(line: &str, schema: Option<&LabelSchema>) -> Result<Tree, CorpusError> {
    parse_line(line.trim(), 1, schema)
}

/// Parses a whole corpus file. With a schema, labels and their nesting are
/// validated as well.
pub fn parse_corpus(
    text: &str,
    split: Option<Split>,
    schema: Option<&LabelSchema>,
) -> Result<Corpus, CorpusError> {
    let mut documents: Vec<Document> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(id) = line.strip_prefix(DOC_HEADER) {
            documents.push(Document {
                id: id.trim().to_string(),
                sentences: Vec::new(),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let tree = parse_line(line, i + 1, schema)?;
        if documents.is_empty() {
            documents.push(Document {
                id: "doc0".to_string(),
                sentences: Vec::new(),
            });
        }
        documents.last_mut().expect("non-empty").sentences.push(tree);
    }
    Corpus::new(split, documents)
}

/// Reads a corpus file; the split is inferred from a `train`/`dev`/`test`
/// file stem.
pub fn read_corpus(path: &Path, schema: Option<&LabelSchema>) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let split = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| Split::ALL.into_iter().find(|sp| sp.name() == s));
    parse_corpus(&text, split, schema)
}

fn write_text(path: &Path, text: &str) -> Result<(), CorpusError> {
    std::fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a corpus with document headers.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let mut out = String::new();
    for doc in corpus.documents() {
        let _ = writeln!(out, "{DOC_HEADER}{}", doc.id);
        for tree in &doc.sentences {
            out.push_str(&serialize_tree(tree));
            out.push('\n');
        }
    }
    write_text(path, &out)
}

/// Writes bare trees, one per line, with no headers.
pub fn write_trees<'a>(path: &Path, trees: impl IntoIterator<Item = &'a Tree>) -> Result<(), CorpusError> {
    let mut out = String::new();
    for tree in trees {
        out.push_str(&serialize_tree(tree));
        out.push('\n');
    }
    write_text(path, &out)
}
