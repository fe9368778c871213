use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{oracle_actions, Action, ParserState};
use crate::corpus::{Corpus, CorpusError, Label, LabelSchema, Node, Tree};

/// Constraints on the actions available in a parser state.
///
/// - `allowed_children[p]`: labels that may be opened directly under `p`.
/// - `max_child_count[p][c]`: how many `c` children one `p` node may hold.
///   A pair absent from this map is unbounded.
/// - `max_shift[l]`: how many tokens may be shifted directly under `l`; absent
///   means none. For `ROOT` the cap is raised to the sentence length.
///
/// `ROOT` is spelled `"ROOT"` in every map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRuleSet {
    pub allowed_children: BTreeMap<Label, BTreeSet<Label>>,
    pub max_child_count: BTreeMap<Label, BTreeMap<Label, usize>>,
    pub max_shift: BTreeMap<Label, usize>,
}

/// First illegal action found when replaying a tree's oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleViolation {
    pub step: usize,
    pub action: Action,
    pub legal: Vec<Action>,
}

impl std::fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let legal: Vec<String> = self.legal.iter().map(|a| a.to_string()).collect();
        write!(
            f,
            "step {}: {} is not allowed (legal: {})",
            self.step,
            self.action,
            legal.join(", ")
        )
    }
}

impl TransitionRuleSet {
    pub fn shift_cap(&self, label: &Label, sentence_len: usize) -> usize {
        let cap = self.max_shift.get(label).copied().unwrap_or(0);
        if label.is_root() {
            cap.max(sentence_len)
        } else {
            cap
        }
    }

    fn child_cap(&self, parent: &Label, child: &Label) -> usize {
        self.max_child_count
            .get(parent)
            .and_then(|m| m.get(child))
            .copied()
            .unwrap_or(usize::MAX)
    }

    /// All actions allowed in `state`, in the order SHIFT, REDUCE, then
    /// OPEN-NT by label. Empty only for finished states.
    pub fn legal_actions(&self, state: &ParserState) -> Vec<Action> {
        let top = state.top();
        let on_root = state.frames().len() == 1;
        let can_reduce = !on_root && (top.num_children() > 0 || top.shifts > 0);
        if state.buffer_pos() >= state.sentence_len() {
            return if can_reduce { vec![Action::Reduce] } else { Vec::new() };
        }
        let mut out = Vec::new();
        if top.shifts < self.shift_cap(&top.label, state.sentence_len()) {
            out.push(Action::Shift);
        }
        if can_reduce {
            out.push(Action::Reduce);
        }
        if let Some(children) = self.allowed_children.get(&top.label) {
            for child in children {
                if top.count_of(child) < self.child_cap(&top.label, child) {
                    out.push(Action::OpenNt(child.clone()));
                }
            }
        }
        out
    }

    pub fn is_legal(&self, state: &ParserState, action: &Action) -> bool {
        self.legal_actions(state).contains(action)
    }

    /// Replays the oracle of `tree` and reports the first action these rules
    /// forbid.
    pub fn check_tree(&self, tree: &Tree) -> Result<(), RuleViolation> {
        let mut state = ParserState::new(tree.len());
        for (step, action) in oracle_actions(tree).into_iter().enumerate() {
            let legal = self.legal_actions(&state);
            if !legal.contains(&action) {
                return Err(RuleViolation {
                    step,
                    action,
                    legal,
                });
            }
            state.apply(&action).expect("legal actions apply");
        }
        Ok(())
    }

    /// Rejects labels unknown to the schema, counts for unlisted pairs, and
    /// openable labels that could never be filled.
    pub fn validate(&self, schema: &LabelSchema) -> Result<(), CorpusError> {
        let known = |l: &Label| l.is_root() || schema.contains(l.as_str());
        let unknown = |l: &Label| CorpusError::Schema(format!("unknown label `{l}` in rules"));
        for (parent, children) in &self.allowed_children {
            if !known(parent) {
                return Err(unknown(parent));
            }
            if let Some(c) = children.iter().find(|c| c.is_root() || !schema.contains(c.as_str())) {
                return Err(unknown(c));
            }
        }
        for (parent, counts) in &self.max_child_count {
            for (child, n) in counts {
                let listed = self
                    .allowed_children
                    .get(parent)
                    .is_some_and(|s| s.contains(child));
                if !listed {
                    return Err(CorpusError::Schema(format!(
                        "max_child_count given for `{parent}` > `{child}`, which is not an allowed child"
                    )));
                }
                if *n == 0 {
                    return Err(CorpusError::Schema(format!(
                        "max_child_count for `{parent}` > `{child}` must be positive"
                    )));
                }
            }
        }
        for label in self.max_shift.keys() {
            if !known(label) {
                return Err(unknown(label));
            }
        }
        for child in self.allowed_children.values().flatten() {
            let has_children = self.allowed_children.get(child).is_some_and(|s| !s.is_empty());
            if !has_children && self.max_shift.get(child).copied().unwrap_or(0) == 0 {
                return Err(CorpusError::Schema(format!(
                    "`{child}` can be opened but can never receive a child or token"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }

    pub fn from_json(text: &str, schema: &LabelSchema) -> Result<Self, CorpusError> {
        let rules: Self = serde_json::from_str(text)?;
        rules.validate(schema)?;
        Ok(rules)
    }

    pub fn read(path: &Path, schema: &LabelSchema) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, schema)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_string(self).expect("rules serialize").as_bytes(),
        ))
    }

    /// Human-readable listing, one parent per line.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (parent, children) in &self.allowed_children {
            let shift = self.max_shift.get(parent).copied().unwrap_or(0);
            let kids: Vec<String> = children
                .iter()
                .map(|c| {
                    let n = self.child_cap(parent, c);
                    if n == usize::MAX {
                        c.to_string()
                    } else {
                        format!("{c}≤{n}")
                    }
                })
                .collect();
            out.push_str(&format!(
                "{parent}: max_shift={shift} children=[{}]\n",
                kids.join(", ")
            ));
        }
        out
    }
}

fn observe(
    label: &Label,
    children: &[Node],
    rules: &mut TransitionRuleSet,
) {
    let allowed = rules.allowed_children.entry(label.clone()).or_default();
    let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
    let mut shifts = 0;
    for child in children {
        match child {
            Node::Terminal(_) => shifts += 1,
            Node::NonTerminal { label: c, .. } => {
                allowed.insert(c.clone());
                *counts.entry(c).or_default() += 1;
            }
        }
    }
    let caps = rules.max_child_count.entry(label.clone()).or_default();
    for (c, n) in counts {
        let cap = caps.entry(c.clone()).or_default();
        *cap = (*cap).max(n);
    }
    if caps.is_empty() {
        rules.max_child_count.remove(label);
    }
    if shifts > 0 {
        let cap = rules.max_shift.entry(label.clone()).or_default();
        *cap = (*cap).max(shifts);
    }
    for child in children {
        if let Node::NonTerminal { label, children } = child {
            observe(label, children, rules);
        }
    }
}

/// Rules observed in a corpus: every parent/child pair seen, with the
/// maximum per-node child counts and direct token counts.
pub fn induce_rules(corpus: &Corpus) -> TransitionRuleSet {
    let mut rules = TransitionRuleSet::default();
    let root = Label::root();
    rules.allowed_children.entry(root.clone()).or_default();
    for tree in corpus.sentences() {
        observe(&root, tree.children(), &mut rules);
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tree, LabelFamily};

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_sentences(None, lines.iter().map(|l| parse_tree(l, None).unwrap()).collect())
    }

    fn set(labels: &[&str]) -> BTreeSet<Label> {
        labels.iter().map(|l| Label::new(l)).collect()
    }

    fn schema() -> LabelSchema {
        use LabelFamily::*;
        LabelSchema::new(
            vec![
                (Label::new("D"), Entity),
                (Label::new("DO"), Entity),
                (Label::new("F"), Entity),
                (Label::new("EV_STOP"), Event),
                (Label::new("D&F"), RelationInner),
                (Label::new("PRES"), RelationOuter),
            ],
            [Label::new("D")],
        )
        .unwrap()
    }

    const T1: &str = "(ROOT (D&F (D aspirine) (DO 80 mg) (F quotidien)))";
    const T3: &str = "(ROOT (PRES (D&F (D a)) (EV_STOP b)))";

    #[test]
    fn induced_from_two_trees() {
        let rules = induce_rules(&corpus(&[T1, T3]));
        assert_eq!(rules.allowed_children[&Label::new("D&F")], set(&["D", "DO", "F"]));
        assert_eq!(rules.allowed_children[&Label::new("PRES")], set(&["D&F", "EV_STOP"]));
        assert_eq!(rules.max_shift[&Label::new("DO")], 2);
        assert_eq!(rules.max_child_count[&Label::new("D&F")][&Label::new("D")], 1);
        assert_eq!(rules.allowed_children[&Label::root()], set(&["D&F", "PRES"]));
        assert!(rules.allowed_children[&Label::new("D")].is_empty());
    }

    #[test]
    fn induced_from_unlabeled_sentence() {
        let rules = induce_rules(&corpus(&["(ROOT le patient dort)"]));
        assert!(rules.allowed_children[&Label::root()].is_empty());
        assert_eq!(rules.max_shift[&Label::root()], 3);
    }

    #[test]
    fn induced_rules_license_oracles() {
        let c = corpus(&[T1, T3, "(ROOT x (D&F (D y) et (D z) , (F w)) .)"]);
        let rules = induce_rules(&c);
        for t in c.sentences() {
            rules.check_tree(t).unwrap();
        }
    }

    #[test]
    fn exhausted_buffer_forces_reduce() {
        let rules = induce_rules(&corpus(&[T1]));
        let mut s = ParserState::new(1);
        s.apply(&Action::OpenNt(Label::new("D&F"))).unwrap();
        s.apply(&Action::Shift).unwrap();
        assert_eq!(rules.legal_actions(&s), vec![Action::Reduce]);
    }

    #[test]
    fn child_cap_excludes_open() {
        let mut rules = induce_rules(&corpus(&[T1]));
        rules
            .max_child_count
            .get_mut(&Label::new("D&F"))
            .unwrap()
            .insert(Label::new("D"), 10);
        let d = Action::OpenNt(Label::new("D"));
        let mut s = ParserState::new(30);
        s.apply(&Action::OpenNt(Label::new("D&F"))).unwrap();
        for _ in 0..10 {
            assert!(rules.is_legal(&s, &d));
            s.apply(&d).unwrap();
            s.apply(&Action::Shift).unwrap();
            s.apply(&Action::Reduce).unwrap();
        }
        assert!(!rules.is_legal(&s, &d));
        assert!(rules.is_legal(&s, &Action::OpenNt(Label::new("F"))));
    }

    #[test]
    fn entities_never_open_children() {
        let rules = induce_rules(&corpus(&[T1]));
        let mut s = ParserState::new(5);
        s.apply(&Action::OpenNt(Label::new("D&F"))).unwrap();
        s.apply(&Action::OpenNt(Label::new("D"))).unwrap();
        assert_eq!(rules.legal_actions(&s), vec![Action::Shift]);
        s.apply(&Action::Shift).unwrap();
        assert_eq!(rules.legal_actions(&s), vec![Action::Reduce]);
    }

    #[test]
    fn json_round_trip_and_edits() {
        let schema = schema();
        let rules = induce_rules(&corpus(&[T1, T3]));
        let back = TransitionRuleSet::from_json(&rules.to_json(), &schema).unwrap();
        assert_eq!(rules, back);

        let mut edited: serde_json::Value = serde_json::from_str(&rules.to_json()).unwrap();
        edited["max_shift"]["ROOT"] = serde_json::json!(50);
        let edited = TransitionRuleSet::from_json(&edited.to_string(), &schema).unwrap();
        assert_eq!(edited.max_shift[&Label::root()], 50);

        let mut bad: serde_json::Value = serde_json::from_str(&rules.to_json()).unwrap();
        bad["allowed_children"]["D&F"] = serde_json::json!(["D", "NOPE"]);
        assert!(matches!(
            TransitionRuleSet::from_json(&bad.to_string(), &schema),
            Err(CorpusError::Schema(_))
        ));
    }

    #[test]
    fn validate_rejects_unfillable_labels() {
        let mut rules = induce_rules(&corpus(&[T1]));
        rules.max_shift.remove(&Label::new("F"));
        assert!(rules.validate(&schema()).is_err());
    }
}
