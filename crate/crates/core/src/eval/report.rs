use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapConfig, ConfidenceInterval};
use super::{score_corpus, EntitySource, EvalError, Scored};
use crate::corpus::{Label, LabelFamily, LabelSchema, Tree};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub entity_source: EntitySource,
    pub bootstrap: BootstrapConfig,
}

/// One table row. Ratios are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ci: Option<ConfidenceInterval>,
}

impl MetricRow {
    fn new(label: &str, scored: &Scored, key: Option<&Label>, cfg: &BootstrapConfig) -> Self {
        let (c, outcomes) = match key {
            Some(l) => (scored.counts(l), scored.outcomes.get(l).cloned().unwrap_or_default()),
            None => (scored.total(), scored.all_outcomes()),
        };
        Self {
            label: label.to_string(),
            support: c.support(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: 100.0 * c.precision(),
            recall: 100.0 * c.recall(),
            f1: 100.0 * c.f1(),
            ci: bootstrap_ci(&outcomes, cfg).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Pooled (micro) counts over every label of the section.
    pub aggregate: MetricRow,
    /// Most frequent label first.
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entity_source: EntitySource,
    pub iterations: usize,
    pub seed: u64,
    pub sentences: usize,
    pub sections: Vec<Section>,
}

impl EvalReport {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Aggregate F1 (percent) of a section, 0 when absent.
    pub fn f1(&self, name: &str) -> f64 {
        self.section(name).map_or(0.0, |s| s.aggregate.f1)
    }
}

fn section(name: &str, scored: &Scored, labels: Vec<Label>, cfg: &BootstrapConfig) -> Section {
    let mut rows: Vec<MetricRow> = labels
        .iter()
        .map(|l| MetricRow::new(l.as_str(), scored, Some(l), cfg))
        .collect();
    rows.sort_by(|a, b| b.support.cmp(&a.support).then(a.label.cmp(&b.label)));
    Section {
        name: name.to_string(),
        aggregate: MetricRow::new(name, scored, None, cfg),
        rows,
    }
}

/// Scores aligned gold and predicted trees into Relations, Entities and
/// Events sections.
pub fn evaluate_corpora(gold: &[&Tree], pred: &[&Tree], schema: &LabelSchema, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let (entities, events, relations) = score_corpus(gold, pred, schema, cfg.entity_source)?;
    let entity_labels = schema.labels_of(LabelFamily::Entity);
    let event_labels = schema.labels_of(LabelFamily::Event);
    let relation_labels: Vec<Label> = entity_labels
        .iter()
        .filter(|l| !schema.is_drug(l.as_str()))
        .chain(&event_labels)
        .cloned()
        .collect();
    let b = &cfg.bootstrap;
    Ok(EvalReport {
        entity_source: cfg.entity_source,
        iterations: b.iterations,
        seed: b.seed,
        sentences: gold.len(),
        sections: vec![
            section("Relations", &relations, relation_labels, b),
            section("Entities", &entities, entity_labels, b),
            section("Events", &events, event_labels, b),
        ],
    })
}

/// `88.5 [87.2-89.8]`, or the bare value without an interval.
pub fn format_score(value: f64, ci: Option<&ConfidenceInterval>) -> String {
    match ci {
        Some(ci) => format!("{:.1} [{:.1}-{:.1}]", ci.mean, ci.lo, ci.hi),
        None => format!("{value:.1}"),
    }
}

fn render_row(out: &mut String, row: &MetricRow) {
    if row.support == 0 {
        let _ = writeln!(out, "  {:<16} {:>7} {:>7} {:>7} {:>7} {:>7}  {}", row.label, 0, "-", "-", "-", "-", "-");
        return;
    }
    let _ = writeln!(
        out,
        "  {:<16} {:>7} {:>7} {:>7} {:>7.1} {:>7.1}  {}",
        row.label,
        row.support,
        row.tp,
        row.fp,
        row.precision,
        row.recall,
        format_score(row.f1, row.ci.as_ref())
    );
}

pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} sentences; relations scored on {} entities; F1 as mean [5th-95th percentile] over {} bootstrap samples (seed {})",
        report.sentences, report.entity_source, report.iterations, report.seed
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "  {:<16} {:>7}", "Aggregate", "F1");
    for s in &report.sections {
        let _ = writeln!(out, "  {:<16} {}", s.name, format_score(s.aggregate.f1, s.aggregate.ci.as_ref()));
    }
    for s in &report.sections {
        let _ = writeln!(out);
        let _ = writeln!(out, "{}", s.name);
        let _ = writeln!(
            out,
            "  {:<16} {:>7} {:>7} {:>7} {:>7} {:>7}  {}",
            "label", "support", "tp", "fp", "P", "R", "F1"
        );
        render_row(&mut out, &s.aggregate);
        for r in &s.rows {
            render_row(&mut out, r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_tree;

    fn report(gold: &str, pred: &str) -> EvalReport {
        let s = LabelSchema::prescription();
        let g = parse_tree(gold, Some(&s)).unwrap();
        let p = parse_tree(pred, Some(&s)).unwrap();
        evaluate_corpora(&[&g], &[&p], &s, &EvalConfig::default()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_all_hundred() {
        let t = "(ROOT (DrugAndFields (Drug_name aspirine) (Dose 80 mg) (Frequency 1 par jour)) (Start debut))";
        let r = report(t, t);
        for s in &r.sections {
            assert_eq!(s.aggregate.f1, 100.0, "{}", s.name);
            let ci = s.aggregate.ci.unwrap();
            assert_eq!((ci.mean, ci.lo, ci.hi), (100.0, 100.0, 100.0));
        }
        let text = render_text(&r);
        assert!(text.contains("100.0 [100.0-100.0]"));
        assert!(text.contains("  Route                  0       -"), "{text}");
    }

    #[test]
    fn rows_sorted_by_support_and_json_matches_text() {
        let r = report(
            "(ROOT (Dose 1) (Dose 2) (Route po) x)",
            "(ROOT (Dose 1) (Dose 2) (Route po x))",
        );
        let ents = r.section("Entities").unwrap();
        assert_eq!(ents.rows[0].label, "Dose");
        assert_eq!(ents.rows[1].label, "Route");
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let route = &ents.rows[1];
        let shown = format_score(route.f1, route.ci.as_ref());
        assert!(render_text(&back).contains(&shown));
    }

    #[test]
    fn one_decimal_presentation() {
        let ci = ConfidenceInterval {
            mean: 88.46,
            lo: 87.24,
            hi: 89.81,
        };
        assert_eq!(format_score(0.0, Some(&ci)), "88.5 [87.2-89.8]");
    }
}
