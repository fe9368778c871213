use thiserror::Error;

use super::schema::{Label, LabelFamily, LabelSchema};

/// Maximum nesting of labeled nodes: outer relation > inner relation >
/// entity or event.
pub const MAX_LABELED_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("token {0} is empty or contains whitespace")]
    BadToken(usize),
    #[error("constituent `{0}` has no terminals")]
    EmptyConstituent(Label),
    #[error("terminals do not cover tokens 0..{expected} in order (found index {found} at position {position})")]
    Coverage {
        expected: usize,
        found: usize,
        position: usize,
    },
    #[error("terminals cover {found} of {expected} tokens")]
    Incomplete { expected: usize, found: usize },
    #[error("`{label}` nested at depth {depth} (max {MAX_LABELED_DEPTH})")]
    TooDeep { label: Label, depth: usize },
    #[error("`ROOT` may only appear as the outermost node")]
    NestedRoot,
    #[error("label `{0}` is not in the schema")]
    UnknownLabel(Label),
    #[error("`{parent}` ({parent_family}) cannot contain `{child}` ({child_family})")]
    BadNesting {
        parent: Label,
        parent_family: LabelFamily,
        child: Label,
        child_family: LabelFamily,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    /// Index of a token in the sentence.
    Terminal(usize),
    NonTerminal { label: Label, children: Vec<Node> },
}

impl Node {
    pub fn nt(label: &str, children: Vec<Node>) -> Node {
        Node::NonTerminal {
            label: Label::new(label),
            children,
        }
    }

    /// Half-open token range covered by this node. Assumes a non-empty yield.
    pub fn span(&self) -> (usize, usize) {
        (self.first_terminal(), self.last_terminal() + 1)
    }

    fn first_terminal(&self) -> usize {
        match self {
            Node::Terminal(i) => *i,
            Node::NonTerminal { children, .. } => children[0].first_terminal(),
        }
    }

    fn last_terminal(&self) -> usize {
        match self {
            Node::Terminal(i) => *i,
            Node::NonTerminal { children, .. } => children[children.len() - 1].last_terminal(),
        }
    }
}

/// A labeled node flattened to its span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constituent {
    pub label: Label,
    pub start: usize,
    pub end: usize,
    /// Number of labeled ancestors (0 for children of ROOT).
    pub depth: usize,
}

/// An annotated sentence: tokens plus the children of the implicit ROOT.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tree {
    tokens: Vec<String>,
    children: Vec<Node>,
}

impl Tree {
    /// Builds a tree and checks the structural invariants: non-empty
    /// sentence, in-order full coverage of the tokens, no empty constituent,
    /// bounded nesting.
    pub fn new(tokens: Vec<String>, children: Vec<Node>) -> Result<Self, TreeError> {
        let tree = Self { tokens, children };
        tree.check_structure()?;
        Ok(tree)
    }

    /// A sentence with no annotation.
    pub fn unlabeled(tokens: Vec<String>) -> Result<Self, TreeError> {
        let children = (0..tokens.len()).map(Node::Terminal).collect();
        Self::new(tokens, children)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Children of ROOT.
    pub fn children(&self) -> &[Node] {
        &self.children
    }

    /// True if the tree has at least one labeled node.
    pub fn is_labeled(&self) -> bool {
        self.children
            .iter()
            .any(|c| matches!(c, Node::NonTerminal { .. }))
    }

    /// Labeled nodes in pre-order.
    pub fn constituents(&self) -> Vec<Constituent> {
        fn walk(node: &Node, depth: usize, out: &mut Vec<Constituent>) {
            if let Node::NonTerminal { label, children } = node {
                let (start, end) = node.span();
                out.push(Constituent {
                    label: label.clone(),
                    start,
                    end,
                    depth,
                });
                for c in children {
                    walk(c, depth + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        for c in &self.children {
            walk(c, 0, &mut out);
        }
        out
    }

    fn check_structure(&self) -> Result<(), TreeError> {
        if self.tokens.is_empty() {
            return Err(TreeError::EmptySentence);
        }
        if let Some(i) = self
            .tokens
            .iter()
            .position(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(TreeError::BadToken(i));
        }
        let mut next = 0usize;
        fn walk(node: &Node, depth: usize, next: &mut usize, n: usize) -> Result<(), TreeError> {
            match node {
                Node::Terminal(i) => {
                    if *i != *next || *i >= n {
                        return Err(TreeError::Coverage {
                            expected: n,
                            found: *i,
                            position: *next,
                        });
                    }
                    *next += 1;
                }
                Node::NonTerminal { label, children } => {
                    if label.is_root() {
                        return Err(TreeError::NestedRoot);
                    }
                    if depth + 1 > MAX_LABELED_DEPTH {
                        return Err(TreeError::TooDeep {
                            label: label.clone(),
                            depth: depth + 1,
                        });
                    }
                    if children.is_empty() {
                        return Err(TreeError::EmptyConstituent(label.clone()));
                    }
                    for c in children {
                        walk(c, depth + 1, next, n)?;
                    }
                }
            }
            Ok(())
        }
        for c in &self.children {
            walk(c, 0, &mut next, self.tokens.len())?;
        }
        if next != self.tokens.len() {
            return Err(TreeError::Incomplete {
                expected: self.tokens.len(),
                found: next,
            });
        }
        Ok(())
    }

    /// Checks labels and parent/child families against a schema.
    pub fn check_schema(&self, schema: &LabelSchema) -> Result<(), TreeError> {
        fn walk(
            node: &Node,
            parent: Option<(&Label, LabelFamily)>,
            schema: &LabelSchema,
        ) -> Result<(), TreeError> {
            if let Node::NonTerminal { label, children } = node {
                let family = schema
                    .family(label.as_str())
                    .ok_or_else(|| TreeError::UnknownLabel(label.clone()))?;
                if let Some((p, pf)) = parent {
                    if !pf.can_parent(family) {
                        return Err(TreeError::BadNesting {
                            parent: p.clone(),
                            parent_family: pf,
                            child: label.clone(),
                            child_family: family,
                        });
                    }
                }
                for c in children {
                    walk(c, Some((label, family)), schema)?;
                }
            }
            Ok(())
        }
        for c in &self.children {
            walk(c, None, schema)?;
        }
        Ok(())
    }
}
