//! BIO projections of trees, and lifting flat span layers back into trees.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::schema::{Label, LabelFamily, LabelSchema};
use super::tree::{Node, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BioError {
    #[error("malformed BIO tag `{0}`")]
    BadTag(String),
    #[error("I-{label} at position {position} does not continue a {label} span")]
    DanglingInside { label: Label, position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    O,
    B(Label),
    I(Label),
}

impl BioTag {
    pub fn label(&self) -> Option<&Label> {
        match self {
            BioTag::O => None,
            BioTag::B(l) | BioTag::I(l) => Some(l),
        }
    }

    /// Whether `next` may directly follow `self` in a valid sequence.
    pub fn may_precede(prev: Option<&BioTag>, next: &BioTag) -> bool {
        match next {
            BioTag::I(x) => matches!(prev, Some(BioTag::B(y)) | Some(BioTag::I(y)) if y == x),
            _ => true,
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(l) => write!(f, "B-{l}"),
            BioTag::I(l) => write!(f, "I-{l}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = BioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        match s.split_once('-') {
            Some(("B", l)) if !l.is_empty() => Ok(BioTag::B(Label::new(l))),
            Some(("I", l)) if !l.is_empty() => Ok(BioTag::I(Label::new(l))),
            _ => Err(BioError::BadTag(s.to_string())),
        }
    }
}

/// A structurally valid BIO tag sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BioSequence(Vec<BioTag>);

impl BioSequence {
    pub fn new(tags: Vec<BioTag>) -> Result<Self, BioError> {
        for (i, tag) in tags.iter().enumerate() {
            let prev = if i == 0 { None } else { Some(&tags[i - 1]) };
            if !BioTag::may_precede(prev, tag) {
                return Err(BioError::DanglingInside {
                    label: tag.label().cloned().expect("I tag has a label"),
                    position: i,
                });
            }
        }
        Ok(Self(tags))
    }

    pub fn all_outside(n: usize) -> Self {
        Self(vec![BioTag::O; n])
    }

    pub fn tags(&self) -> &[BioTag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for BioSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for BioSequence {
    type Err = BioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tags = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        BioSequence::new(tags)
    }
}

/// A labeled half-open token span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub label: Label,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: &str, start: usize, end: usize) -> Self {
        Self {
            label: Label::new(label),
            start,
            end,
        }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    fn crosses(&self, other: &Span) -> bool {
        let disjoint = self.end <= other.start || other.end <= self.start;
        !disjoint && !self.contains(other) && !other.contains(self)
    }
}

/// Projects the nodes of one family onto a BIO sequence.
pub fn tree_to_bio(tree: &Tree, schema: &LabelSchema, family: LabelFamily) -> BioSequence {
    let spans: Vec<Span> = tree
        .constituents()
        .into_iter()
        .filter(|c| schema.family(c.label.as_str()) == Some(family))
        .map(|c| Span {
            label: c.label,
            start: c.start,
            end: c.end,
        })
        .collect();
    spans_to_bio(tree.len(), &spans)
}

/// Encodes non-overlapping spans as BIO over `n` tokens.
pub fn spans_to_bio(n: usize, spans: &[Span]) -> BioSequence {
    let mut tags = vec![BioTag::O; n];
    for span in spans {
        tags[span.start] = BioTag::B(span.label.clone());
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = BioTag::I(span.label.clone());
        }
    }
    BioSequence(tags)
}

/// Maximal B-led runs, end exclusive, sorted by start.
pub fn bio_to_spans(bio: &BioSequence) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in bio.tags().iter().enumerate() {
        match tag {
            BioTag::I(_) => {
                if let Some(span) = open.as_mut() {
                    span.end = i + 1;
                }
            }
            BioTag::B(label) => {
                spans.extend(open.take());
                open = Some(Span {
                    label: label.clone(),
                    start: i,
                    end: i + 1,
                });
            }
            BioTag::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

/// Removes labeled nodes whose family is not kept, splicing their children
/// into the parent. Labels unknown to the schema are kept.
pub fn project_tree(tree: &Tree, schema: &LabelSchema, keep: &[LabelFamily]) -> Tree {
    fn project(node: &Node, schema: &LabelSchema, keep: &[LabelFamily], out: &mut Vec<Node>) {
        match node {
            Node::Terminal(i) => out.push(Node::Terminal(*i)),
            Node::NonTerminal { label, children } => {
                let kept = schema
                    .family(label.as_str())
                    .map_or(true, |f| keep.contains(&f));
                if kept {
                    let mut inner = Vec::with_capacity(children.len());
                    for c in children {
                        project(c, schema, keep, &mut inner);
                    }
                    out.push(Node::NonTerminal {
                        label: label.clone(),
                        children: inner,
                    });
                } else {
                    for c in children {
                        project(c, schema, keep, out);
                    }
                }
            }
        }
    }
    let mut children = Vec::with_capacity(tree.children().len());
    for c in tree.children() {
        project(c, schema, keep, &mut children);
    }
    Tree::new(tree.tokens().to_vec(), children).expect("projection preserves tree invariants")
}

fn family_rank(family: Option<LabelFamily>) -> u8 {
    match family {
        Some(LabelFamily::RelationOuter) => 0,
        Some(LabelFamily::RelationInner) => 1,
        _ => 2,
    }
}

/// Builds a tree from possibly conflicting span layers (e.g. the outputs of
/// independent taggers). Spans are inserted outermost first; a span is
/// dropped when it crosses an accepted span or its smallest enclosing
/// accepted span may not parent it under the schema.
pub fn tree_from_spans(tokens: Vec<String>, spans: &[Span], schema: &LabelSchema) -> Tree {
    let mut sorted: Vec<&Span> = spans
        .iter()
        .filter(|s| s.start < s.end && s.end <= tokens.len() && schema.contains(s.label.as_str()))
        .collect();
    sorted.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then(b.end.cmp(&a.end))
            .then(
                family_rank(schema.family(a.label.as_str()))
                    .cmp(&family_rank(schema.family(b.label.as_str()))),
            )
            .then(a.label.cmp(&b.label))
    });
    let mut accepted: Vec<Span> = Vec::new();
    for span in sorted {
        if accepted.iter().any(|a| a.crosses(span) || a == span) {
            continue;
        }
        let family = schema.family(span.label.as_str()).expect("filtered");
        let parent = accepted
            .iter()
            .filter(|a| a.contains(span))
            .min_by_key(|a| a.end - a.start);
        let allowed = match parent {
            Some(p) => schema
                .family(p.label.as_str())
                .is_some_and(|pf| pf.can_parent(family)),
            None => true,
        };
        if allowed {
            accepted.push(span.clone());
        }
    }
    fn build(lo: usize, hi: usize, spans: &[Span], idx: &mut usize) -> Vec<Node> {
        let mut children = Vec::new();
        let mut pos = lo;
        while pos < hi {
            if *idx < spans.len() && spans[*idx].start == pos && spans[*idx].end <= hi {
                let span = &spans[*idx];
                *idx += 1;
                let inner = build(span.start, span.end, spans, idx);
                children.push(Node::NonTerminal {
                    label: span.label.clone(),
                    children: inner,
                });
                pos = span.end;
            } else {
                children.push(Node::Terminal(pos));
                pos += 1;
            }
        }
        children
    }
    let n = tokens.len();
    let mut idx = 0;
    let children = build(0, n, &accepted, &mut idx);
    Tree::new(tokens, children).expect("laminar spans form a valid tree")
}
