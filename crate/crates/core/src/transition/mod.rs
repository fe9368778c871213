//! Top-down transition system.
//!
//! A parse is a sequence of `OPEN-NT(label)`, `SHIFT` and `REDUCE` actions
//! applied to a [`ParserState`]. Every run from the initial state that ends
//! with the buffer exhausted and only `ROOT` open corresponds to exactly one
//! tree. [`TransitionRuleSet`] restricts which actions are legal in a state.

mod rules;

pub use rules::{induce_rules, RuleViolation, TransitionRuleSet};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::{Label, Node, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Shift,
    Reduce,
    OpenNt(Label),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift => f.write_str("SHIFT"),
            Action::Reduce => f.write_str("REDUCE"),
            Action::OpenNt(l) => write!(f, "OPEN({l})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: Action, reason: &'static str },
    #[error("parse is not finished")]
    NotFinished,
    #[error("action sequence is for {expected} tokens, sentence has {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// One open constituent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub label: Label,
    /// Labeled children opened so far, per label.
    pub child_counts: BTreeMap<Label, usize>,
    /// Tokens shifted directly under this frame.
    pub shifts: usize,
    children: Vec<Node>,
}

impl Frame {
    fn new(label: Label) -> Self {
        Self {
            label,
            child_counts: BTreeMap::new(),
            shifts: 0,
            children: Vec::new(),
        }
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    pub fn count_of(&self, label: &Label) -> usize {
        self.child_counts.get(label).copied().unwrap_or(0)
    }
}

/// Buffer position, stack of open constituents (bottom is `ROOT`) and the
/// actions taken so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    n: usize,
    buffer_pos: usize,
    frames: Vec<Frame>,
    action_log: Vec<Action>,
}

impl ParserState {
    /// Initial state for a sentence of `n` tokens.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            buffer_pos: 0,
            frames: vec![Frame::new(Label::root())],
            action_log: Vec::new(),
        }
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn buffer_pos(&self) -> usize {
        self.buffer_pos
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn top(&self) -> &Frame {
        self.frames.last().expect("ROOT frame is never popped")
    }

    pub fn action_log(&self) -> &[Action] {
        &self.action_log
    }

    /// Number of open non-ROOT constituents.
    pub fn open_depth(&self) -> usize {
        self.frames.len() - 1
    }

    /// Buffer exhausted and only ROOT remains.
    pub fn is_finished(&self) -> bool {
        self.buffer_pos == self.n && self.frames.len() == 1
    }

    /// Checks the rule-independent preconditions of an action.
    pub fn check(&self, action: &Action) -> Result<(), TransitionError> {
        let illegal = |reason| {
            Err(TransitionError::IllegalAction {
                action: action.clone(),
                reason,
            })
        };
        match action {
            Action::Shift if self.buffer_pos >= self.n => illegal("buffer is empty"),
            Action::OpenNt(_) if self.buffer_pos >= self.n => illegal("buffer is empty"),
            Action::OpenNt(l) if l.is_root() => illegal("ROOT cannot be opened"),
            Action::Reduce if self.frames.len() == 1 => illegal("only ROOT is open"),
            Action::Reduce if self.top().children.is_empty() => illegal("constituent is empty"),
            _ => Ok(()),
        }
    }

    /// Applies an action in place.
    pub fn apply(&mut self, action: &Action) -> Result<(), TransitionError> {
        self.check(action)?;
        match action {
            Action::Shift => {
                let top = self.frames.last_mut().expect("ROOT");
                top.children.push(Node::Terminal(self.buffer_pos));
                top.shifts += 1;
                self.buffer_pos += 1;
            }
            Action::OpenNt(label) => {
                let top = self.frames.last_mut().expect("ROOT");
                *top.child_counts.entry(label.clone()).or_default() += 1;
                self.frames.push(Frame::new(label.clone()));
            }
            Action::Reduce => {
                let frame = self.frames.pop().expect("checked");
                let node = Node::NonTerminal {
                    label: frame.label,
                    children: frame.children,
                };
                self.frames.last_mut().expect("ROOT").children.push(node);
            }
        }
        self.action_log.push(action.clone());
        Ok(())
    }

    /// Pure transition: returns the successor state.
    pub fn apply_action(&self, action: &Action) -> Result<ParserState, TransitionError> {
        let mut next = self.clone();
        next.apply(action)?;
        Ok(next)
    }

    /// The tree built by a finished parse.
    pub fn to_tree(&self, tokens: &[String]) -> Result<Tree, TransitionError> {
        if !self.is_finished() {
            return Err(TransitionError::NotFinished);
        }
        if tokens.len() != self.n {
            return Err(TransitionError::LengthMismatch {
                expected: self.n,
                found: tokens.len(),
            });
        }
        Ok(Tree::new(tokens.to_vec(), self.frames[0].children.clone())
            .expect("finished parses are valid trees"))
    }
}

/// Depth-first pre-order action sequence that builds `tree`.
pub fn oracle_actions(tree: &Tree) -> Vec<Action> {
    fn walk(node: &Node, out: &mut Vec<Action>) {
        match node {
            Node::Terminal(_) => out.push(Action::Shift),
            Node::NonTerminal { label, children } => {
                out.push(Action::OpenNt(label.clone()));
                for c in children {
                    walk(c, out);
                }
                out.push(Action::Reduce);
            }
        }
    }
    let mut out = Vec::new();
    for c in tree.children() {
        walk(c, &mut out);
    }
    out
}

/// Replays actions from the initial state and returns the resulting tree.
pub fn replay(tokens: &[String], actions: &[Action]) -> Result<Tree, TransitionError> {
    let mut state = ParserState::new(tokens.len());
    for a in actions {
        state.apply(a)?;
    }
    state.to_tree(tokens)
}
