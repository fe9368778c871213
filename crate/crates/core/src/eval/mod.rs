//! Exact-match scoring of entities, events and drug relations.
//!
//! An entity instance is a labeled token span; it is a true positive only
//! when a predicted span has exactly the same boundaries and label. A
//! relation instance pairs a drug (or drug class) mention with a field or
//! event mention of the same sentence. Aggregate rows pool counts over
//! labels (micro averaging). Confidence intervals come from resampling
//! scored instances with replacement (see [`bootstrap`]).

pub mod bootstrap;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabelFamily, LabelSchema, Node, Span, Tree};

pub use bootstrap::{bootstrap_ci, nearest_rank, BootstrapConfig, ConfidenceInterval};
pub use report::{evaluate_corpora, format_score, render_text, EvalConfig, EvalReport, MetricRow, Section};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} sentences, predictions have {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold and predicted tokens differ")]
    Alignment { sentence: usize },
    #[error("no instances to resample")]
    EmptyInstances,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntitySource {
    /// Relations are projected onto gold entity spans before pairing.
    #[default]
    Oracle,
    /// Relations are paired from predicted entities as-is.
    Predicted,
}

impl std::str::FromStr for EntitySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "predicted" => Ok(Self::Predicted),
            other => Err(format!("unknown entity source `{other}` (expected oracle or predicted)")),
        }
    }
}

impl fmt::Display for EntitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntitySource::Oracle => "oracle",
            EntitySource::Predicted => "predicted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityInstance {
    pub sentence: usize,
    pub label: Label,
    pub start: usize,
    pub end: usize,
}

impl EntityInstance {
    fn from_span(sentence: usize, s: &Span) -> Self {
        Self {
            sentence,
            label: s.label.clone(),
            start: s.start,
            end: s.end,
        }
    }

    fn inside(&self, start: usize, end: usize) -> bool {
        start <= self.start && self.end <= end
    }
}

/// A drug mention paired with a field or event mention. The relation label
/// (the enclosing relation node) is carried for reporting but is not part
/// of the match key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationInstance {
    pub drug: EntityInstance,
    pub other: EntityInstance,
    pub relation: Label,
}

impl RelationInstance {
    fn key(&self) -> (&EntityInstance, &EntityInstance) {
        (&self.drug, &self.other)
    }
}

impl PartialEq for RelationInstance {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for RelationInstance {}

impl PartialOrd for RelationInstance {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RelationInstance {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// TP/FP/FN counts with the derived ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Tp,
    Fp,
    Fn,
}

/// Matches two instance sets exactly; returns one labeled outcome per
/// distinct instance.
pub fn match_instances<'a, T: Ord>(gold: &'a BTreeSet<T>, pred: &'a BTreeSet<T>) -> Vec<(&'a T, Outcome)> {
    let mut out = Vec::with_capacity(gold.len() + pred.len());
    for g in gold {
        out.push((g, if pred.contains(g) { Outcome::Tp } else { Outcome::Fn }));
    }
    for p in pred.difference(gold) {
        out.push((p, Outcome::Fp));
    }
    out
}

/// Counts of a gold/pred entity comparison.
pub fn score_entities(gold: &BTreeSet<EntityInstance>, pred: &BTreeSet<EntityInstance>) -> Counts {
    let mut c = Counts::default();
    for (_, o) in match_instances(gold, pred) {
        c.add(o);
    }
    c
}

/// Labeled spans of the given families.
pub fn extract_entities(tree: &Tree, schema: &LabelSchema, families: &[LabelFamily], sentence: usize) -> Vec<EntityInstance> {
    tree.constituents()
        .into_iter()
        .filter(|c| schema.family(c.label.as_str()).is_some_and(|f| families.contains(&f)))
        .map(|c| EntityInstance {
            sentence,
            label: c.label,
            start: c.start,
            end: c.end,
        })
        .collect()
}

fn entity_of(node: &Node, sentence: usize) -> Option<EntityInstance> {
    match node {
        Node::NonTerminal { label, .. } => {
            let (start, end) = node.span();
            Some(EntityInstance {
                sentence,
                label: label.clone(),
                start,
                end,
            })
        }
        Node::Terminal(_) => None,
    }
}

fn is_other(schema: &LabelSchema, label: &str) -> bool {
    !schema.is_drug(label) && matches!(schema.family(label), Some(LabelFamily::Entity | LabelFamily::Event))
}

/// Drug/field and drug/event pairs encoded by a tree. Inside an inner
/// relation node every drug child pairs with every field or event child;
/// an outer relation node pairs every drug it contains with its direct
/// field and event children.
pub fn extract_relation_pairs(tree: &Tree, schema: &LabelSchema, sentence: usize) -> BTreeSet<RelationInstance> {
    fn descendants_drugs(node: &Node, schema: &LabelSchema, sentence: usize, out: &mut Vec<EntityInstance>) {
        if let Node::NonTerminal { label, children } = node {
            if schema.is_drug(label.as_str()) {
                out.extend(entity_of(node, sentence));
            }
            for c in children {
                descendants_drugs(c, schema, sentence, out);
            }
        }
    }
    fn walk(node: &Node, schema: &LabelSchema, sentence: usize, out: &mut BTreeSet<RelationInstance>) {
        let Node::NonTerminal { label, children } = node else {
            return;
        };
        let others: Vec<EntityInstance> = children
            .iter()
            .filter(|c| matches!(c, Node::NonTerminal { label, .. } if is_other(schema, label.as_str())))
            .filter_map(|c| entity_of(c, sentence))
            .collect();
        let drugs: Vec<EntityInstance> = match schema.family(label.as_str()) {
            Some(LabelFamily::RelationInner) => children
                .iter()
                .filter(|c| matches!(c, Node::NonTerminal { label, .. } if schema.is_drug(label.as_str())))
                .filter_map(|c| entity_of(c, sentence))
                .collect(),
            Some(LabelFamily::RelationOuter) => {
                let mut d = Vec::new();
                for c in children {
                    descendants_drugs(c, schema, sentence, &mut d);
                }
                d
            }
            _ => Vec::new(),
        };
        for d in &drugs {
            for o in &others {
                out.insert(RelationInstance {
                    drug: d.clone(),
                    other: o.clone(),
                    relation: label.clone(),
                });
            }
        }
        for c in children {
            walk(c, schema, sentence, out);
        }
    }
    let mut out = BTreeSet::new();
    for c in tree.children() {
        walk(c, schema, sentence, &mut out);
    }
    out
}

/// Pairs obtained by laying the predicted relation nodes over gold entity
/// spans. A relation node claims every gold mention that lies entirely
/// inside it; an outer node's direct mentions are the claimed ones not
/// inside any of its inner relation children.
pub fn project_relation_pairs(
    pred: &Tree,
    gold_entities: &[EntityInstance],
    schema: &LabelSchema,
) -> BTreeSet<RelationInstance> {
    let mut out = BTreeSet::new();
    let drugs = |lo: usize, hi: usize| {
        gold_entities
            .iter()
            .filter(move |e| schema.is_drug(e.label.as_str()) && e.inside(lo, hi))
    };
    let others = |lo: usize, hi: usize| {
        gold_entities
            .iter()
            .filter(move |e| is_other(schema, e.label.as_str()) && e.inside(lo, hi))
    };
    fn relation_nodes<'t>(node: &'t Node, schema: &LabelSchema, out: &mut Vec<&'t Node>) {
        if let Node::NonTerminal { label, children } = node {
            if schema.family(label.as_str()).is_some_and(LabelFamily::is_relation) {
                out.push(node);
            }
            for c in children {
                relation_nodes(c, schema, out);
            }
        }
    }
    let mut nodes = Vec::new();
    for c in pred.children() {
        relation_nodes(c, schema, &mut nodes);
    }
    for node in nodes {
        let Node::NonTerminal { label, children } = node else {
            continue;
        };
        let (lo, hi) = node.span();
        match schema.family(label.as_str()) {
            Some(LabelFamily::RelationInner) => {
                for d in drugs(lo, hi) {
                    for o in others(lo, hi) {
                        out.insert(RelationInstance {
                            drug: d.clone(),
                            other: o.clone(),
                            relation: label.clone(),
                        });
                    }
                }
            }
            Some(LabelFamily::RelationOuter) => {
                let inner: Vec<(usize, usize)> = children
                    .iter()
                    .filter(|c| {
                        matches!(c, Node::NonTerminal { label, .. }
                            if schema.family(label.as_str()).is_some_and(LabelFamily::is_relation))
                    })
                    .map(Node::span)
                    .collect();
                for d in drugs(lo, hi) {
                    for o in others(lo, hi).filter(|o| !inner.iter().any(|&(a, b)| o.inside(a, b))) {
                        out.insert(RelationInstance {
                            drug: d.clone(),
                            other: o.clone(),
                            relation: label.clone(),
                        });
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Per-label counts plus outcome lists, for one instance kind.
#[derive(Debug, Clone, Default)]
pub struct Scored {
    pub outcomes: BTreeMap<Label, Vec<Outcome>>,
}

impl Scored {
    pub fn push(&mut self, label: &Label, o: Outcome) {
        self.outcomes.entry(label.clone()).or_default().push(o);
    }

    pub fn counts(&self, label: &Label) -> Counts {
        let mut c = Counts::default();
        for o in self.outcomes.get(label).into_iter().flatten() {
            c.add(*o);
        }
        c
    }

    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for o in self.outcomes.values().flatten() {
            c.add(*o);
        }
        c
    }

    pub fn all_outcomes(&self) -> Vec<Outcome> {
        self.outcomes.values().flatten().copied().collect()
    }
}

/// Scores aligned gold and predicted trees. Entity rows are keyed by
/// entity label; relation rows by the label of the non-drug member.
pub fn score_corpus(
    gold: &[&Tree],
    pred: &[&Tree],
    schema: &LabelSchema,
    source: EntitySource,
) -> Result<(Scored, Scored, Scored), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut entities, mut events, mut relations) = (Scored::default(), Scored::default(), Scored::default());
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tokens() != p.tokens() {
            return Err(EvalError::Alignment { sentence: i });
        }
        for (family, scored) in [(LabelFamily::Entity, &mut entities), (LabelFamily::Event, &mut events)] {
            let gs: BTreeSet<_> = extract_entities(g, schema, &[family], i).into_iter().collect();
            let ps: BTreeSet<_> = extract_entities(p, schema, &[family], i).into_iter().collect();
            for (inst, o) in match_instances(&gs, &ps) {
                scored.push(&inst.label, o);
            }
        }
        let gold_pairs = extract_relation_pairs(g, schema, i);
        let pred_pairs = match source {
            EntitySource::Predicted => extract_relation_pairs(p, schema, i),
            EntitySource::Oracle => {
                let ents = extract_entities(g, schema, &[LabelFamily::Entity, LabelFamily::Event], i);
                project_relation_pairs(p, &ents, schema)
            }
        };
        for (inst, o) in match_instances(&gold_pairs, &pred_pairs) {
            relations.push(&inst.other.label, o);
        }
    }
    Ok((entities, events, relations))
}

/// Entity-level micro F1 between two span lists per sentence.
pub fn span_f1(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Counts {
    let mut c = Counts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let gs: BTreeSet<_> = g.iter().map(|s| EntityInstance::from_span(i, s)).collect();
        let ps: BTreeSet<_> = p.iter().map(|s| EntityInstance::from_span(i, s)).collect();
        c += score_entities(&gs, &ps);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_tree;

    fn ent(label: &str, start: usize, end: usize) -> EntityInstance {
        EntityInstance {
            sentence: 0,
            label: Label::new(label),
            start,
            end,
        }
    }

    fn schema() -> LabelSchema {
        LabelSchema::prescription()
    }

    fn pairs(s: &str) -> Vec<(String, String)> {
        let t = parse_tree(s, None).unwrap();
        extract_relation_pairs(&t, &schema(), 0)
            .into_iter()
            .map(|r| (t.tokens()[r.drug.start].clone(), t.tokens()[r.other.start].clone()))
            .collect()
    }

    #[test]
    fn shared_field_pairs_with_each_drug() {
        let p = pairs("(ROOT (DrugAndFields (Drug_name aspirin) and (Drug_name plavix) , (Frequency daily)))");
        assert_eq!(p, vec![("aspirin".into(), "daily".into()), ("plavix".into(), "daily".into())]);
        let p = pairs("(ROOT (DrugAndFields (Drug_name x) (Dose 1 mg) (Frequency daily)))");
        assert_eq!(p.len(), 2);
        assert!(pairs("(ROOT (Drug_name x) (Dose 1 mg))").is_empty());
    }

    #[test]
    fn outer_node_pairs_contained_drugs_with_direct_fields() {
        let t = "(ROOT (Prescription (DrugAndFields (Drug_name a) (Dose 1)) and (DrugAndFields (Drug_name b)) (Start start) (Duration 3 days)))";
        let p = pairs(t);
        assert_eq!(p.len(), 1 + 2 * 2);
    }

    #[test]
    fn entity_exact_match() {
        let gold: BTreeSet<_> = [ent("Dose", 1, 3)].into();
        let pred: BTreeSet<_> = [ent("Dose", 1, 2)].into();
        assert_eq!(score_entities(&gold, &pred), Counts { tp: 0, fp: 1, fn_: 1 });
        let both: BTreeSet<_> = [ent("Dose", 1, 3), ent("Route", 4, 5)].into();
        let c = score_entities(&both, &both);
        assert_eq!((c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0));
        let a: BTreeSet<_> = [ent("X", 0, 1), ent("X", 1, 2)].into();
        let b: BTreeSet<_> = [ent("X", 0, 1), ent("X", 2, 3)].into();
        let c = score_entities(&a, &b);
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.5, 0.5, 0.5));
        let swapped = score_entities(&b, &a);
        assert_eq!((swapped.precision(), swapped.recall()), (c.recall(), c.precision()));
    }

    #[test]
    fn relation_precision_one_recall_half() {
        let s = schema();
        let gold = parse_tree("(ROOT (DrugAndFields (Drug_name aspirin) and (Drug_name plavix) , (Frequency daily)))", Some(&s)).unwrap();
        let pred = parse_tree("(ROOT (DrugAndFields (Drug_name aspirin) and plavix , (Frequency daily)))", Some(&s)).unwrap();
        let (_, _, rel) = score_corpus(&[&gold], &[&pred], &s, EntitySource::Predicted).unwrap();
        let c = rel.total();
        assert_eq!((c.precision(), c.recall()), (1.0, 0.5));
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_mode_forgives_entity_boundaries() {
        let s = schema();
        let gold = parse_tree("(ROOT (DrugAndFields (Drug_name aspirine) (Dose 80 mg)) le matin)", Some(&s)).unwrap();
        let pred = parse_tree("(ROOT (DrugAndFields (Drug_name aspirine) (Dose 80) mg) le matin)", Some(&s)).unwrap();
        let (_, _, oracle) = score_corpus(&[&gold], &[&pred], &s, EntitySource::Oracle).unwrap();
        assert_eq!(oracle.total(), Counts { tp: 1, fp: 0, fn_: 0 });
        let (ents, _, predicted) = score_corpus(&[&gold], &[&pred], &s, EntitySource::Predicted).unwrap();
        assert_eq!(predicted.total(), Counts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!(ents.total(), Counts { tp: 1, fp: 1, fn_: 1 });
    }

    #[test]
    fn oracle_projection_of_gold_is_identity() {
        let s = schema();
        let gold = parse_tree(
            "(ROOT (Prescription (DrugAndFields (Drug_name a) (Dose 1)) et (DrugAndFields (Drug_class b) (Route po)) (Stop stop) (Duration 3 j)))",
            Some(&s),
        )
        .unwrap();
        let (e, v, r) = score_corpus(&[&gold], &[&gold], &s, EntitySource::Oracle).unwrap();
        for c in [e.total(), v.total(), r.total()] {
            assert_eq!(c.fp + c.fn_, 0);
            assert!(c.tp > 0);
        }
    }

    #[test]
    fn misaligned_corpora_rejected() {
        let a = parse_tree("(ROOT a b)", None).unwrap();
        let b = parse_tree("(ROOT a c)", None).unwrap();
        let s = schema();
        assert_eq!(
            score_corpus(&[&a], &[&b], &s, EntitySource::Oracle).unwrap_err(),
            EvalError::Alignment { sentence: 0 }
        );
        assert!(matches!(
            score_corpus(&[&a], &[], &s, EntitySource::Oracle),
            Err(EvalError::SentenceCount { .. })
        ));
    }
}
