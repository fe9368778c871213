//! Shared helpers for the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use rnng::corpus::{LabelFamily, LabelSchema, Node, Tree};
use rnng::transition::{ParserState, TransitionRuleSet};

/// Token pool, including bracket characters that the file format escapes.
pub const TOKENS: &[&str] = &[
    "aspirine", "80", "mg", "par", "jour", "(", ")", "le", "matin", "kardegic", "x", "1", "-", "cp", "É",
];

fn random_nodes(
    rng: &mut impl Rng,
    schema: &LabelSchema,
    lo: usize,
    hi: usize,
    parent: Option<LabelFamily>,
) -> Vec<Node> {
    let families: Vec<LabelFamily> = LabelFamily::ALL
        .into_iter()
        .filter(|f| parent.is_none_or(|p| p.can_parent(*f)))
        .collect();
    let mut out = Vec::new();
    let mut pos = lo;
    while pos < hi {
        if !families.is_empty() && rng.gen_bool(0.45) {
            let family = *families.choose(rng).unwrap();
            let label = schema.labels_of(family).choose(rng).unwrap().clone();
            let len = rng.gen_range(1..=(hi - pos).min(5));
            let children = if family.is_relation() {
                random_nodes(rng, schema, pos, pos + len, Some(family))
            } else {
                (pos..pos + len).map(Node::Terminal).collect()
            };
            out.push(Node::NonTerminal { label, children });
            pos += len;
        } else {
            out.push(Node::Terminal(pos));
            pos += 1;
        }
    }
    out
}

/// A random tree that satisfies the structural and schema invariants.
pub fn random_tree(rng: &mut impl Rng, schema: &LabelSchema, max_len: usize) -> Tree {
    let n = rng.gen_range(1..=max_len);
    let tokens: Vec<String> = (0..n).map(|_| TOKENS.choose(rng).unwrap().to_string()).collect();
    let children = random_nodes(rng, schema, 0, n, None);
    Tree::new(tokens, children).expect("generator builds valid trees")
}

/// Plays uniformly random legal actions until the state is final. Panics
/// when an unfinished state has no legal action.
pub fn random_rollout(rng: &mut impl Rng, rules: &TransitionRuleSet, tokens: &[String]) -> Tree {
    let mut state = ParserState::new(tokens.len());
    let mut steps = 0;
    while !state.is_finished() {
        let legal = rules.legal_actions(&state);
        assert!(!legal.is_empty(), "no legal action after {steps} steps");
        let action = legal.choose(rng).unwrap().clone();
        state.apply(&action).expect("legal actions apply");
        steps += 1;
        assert!(steps <= 16 * tokens.len() + 64, "rollout does not terminate");
    }
    state.to_tree(tokens).expect("final state builds a tree")
}

/// User plus system CPU seconds of this process and of its waited-for
/// children.
pub fn cpu_seconds() -> (f64, f64) {
    fn read(who: libc::c_int) -> f64 {
        let mut u: libc::rusage = unsafe { std::mem::zeroed() };
        unsafe { libc::getrusage(who, &mut u) };
        let t = |v: libc::timeval| v.tv_sec as f64 + v.tv_usec as f64 * 1e-6;
        t(u.ru_utime) + t(u.ru_stime)
    }
    (read(libc::RUSAGE_SELF), read(libc::RUSAGE_CHILDREN))
}
