//! Synthetic prescription corpus.
//!
//! Sentences are drawn from a handful of templates over the medication
//! schema: a drug with its fields, several drugs sharing a field, a
//! prescription grouping drug-and-fields relations with shared fields and
//! events, a bare drug mention, and unlabeled filler. Vocabulary pools are
//! configuration data; the defaults are French-flavoured.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::Label;
use super::tree::{Node, Tree};
use super::{Corpus, CorpusError, Document, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateWeights {
    /// One drug (or class) with its fields.
    pub single: f64,
    /// Two drugs sharing a trailing field in one relation.
    pub shared_field: f64,
    /// Outer relation over two drug-and-fields relations plus shared fields/events.
    pub prescription: f64,
    /// A drug mentioned outside any relation.
    pub mention: f64,
    /// Unlabeled sentence.
    pub filler: f64,
}

impl Default for TemplateWeights {
    fn default() -> Self {
        Self {
            single: 0.30,
            shared_field: 0.07,
            prescription: 0.06,
            mention: 0.04,
            filler: 0.53,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub sentences_per_document: usize,
    pub templates: TemplateWeights,
    /// Probability of a drug being a `Drug_class` instead of a `Drug_name`.
    pub drug_class_rate: f64,
    /// Inclusion probability of each field label inside a drug-and-fields relation.
    pub field_rates: BTreeMap<String, f64>,
    /// Probability of each event label preceding a drug (at most one event per drug).
    pub event_rates: BTreeMap<String, f64>,
    /// Phrase pools per label; phrases are space-separated tokens.
    pub vocab: BTreeMap<String, Vec<String>>,
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    pub mention_contexts: Vec<String>,
    pub connectors: Vec<String>,
    pub filler_words: Vec<String>,
    /// Fraction of the drug-name pool written to the toy lexicon.
    pub lexicon_coverage: f64,
    pub seed: Option<u64>,
}

fn pool(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn dose_pool() -> Vec<String> {
    let amounts = ["1", "2", "5", "10", "20", "40", "75", "80", "100", "160", "250", "500", "1000"];
    let units = ["mg", "g", "cp", "µg", "ui", "ml", "gélules"];
    let mut out = Vec::new();
    for (i, a) in amounts.iter().enumerate() {
        for (j, u) in units.iter().enumerate() {
            if (i + j) % 2 == 0 {
                out.push(format!("{a} {u}"));
            }
        }
    }
    out.push("1 / 2 cp".into());
    out.push("1 sachet".into());
    out
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut vocab = BTreeMap::new();
        vocab.insert(
            "Drug_name".into(),
            pool(&[
                "aspirine", "kardegic", "plavix", "paracétamol", "doliprane", "amoxicilline",
                "augmentin", "metformine", "lovenox", "héparine", "furosémide", "lasix",
                "ramipril", "bisoprolol", "amlodipine", "atorvastatine", "oméprazole",
                "inexium", "levothyrox", "tramadol", "morphine", "prednisone", "solupred",
                "lantus", "xarelto", "eliquis", "coversyl", "seresta", "zopiclone",
                "ceftriaxone", "vancomycine", "spasfon",
            ]),
        );
        vocab.insert(
            "Drug_class".into(),
            pool(&[
                "anticoagulants", "antibiotiques", "bêta-bloquants", "ains", "antalgiques",
                "corticoïdes", "ipp", "statines", "diurétiques", "antihypertenseurs",
                "insulines", "benzodiazépines",
            ]),
        );
        vocab.insert("Dose".into(), dose_pool());
        vocab.insert(
            "Frequency".into(),
            pool(&[
                "par jour", "matin et soir", "2 fois par jour", "3 fois par jour", "le matin",
                "le soir", "au coucher", "toutes les 6 heures", "toutes les 8 heures",
                "1 jour sur 2", "par semaine", "quotidien",
            ]),
        );
        vocab.insert(
            "Route".into(),
            pool(&[
                "per os", "iv", "sc", "en intraveineux", "en sous-cutané", "par voie orale",
                "im", "inhalé",
            ]),
        );
        vocab.insert(
            "Duration".into(),
            pool(&[
                "pendant 5 jours", "pendant 7 jours", "pendant 10 jours", "pendant 1 mois",
                "pendant 3 mois", "pour 15 jours", "durant 6 semaines",
            ]),
        );
        vocab.insert(
            "Condition".into(),
            pool(&[
                "si douleur", "en cas de fièvre", "si besoin", "si tension > 14",
                "en cas de nausées", "si glycémie > 2 g",
            ]),
        );
        vocab.insert(
            "Start".into(),
            pool(&["introduction de", "début de", "mise sous", "initiation de"]),
        );
        vocab.insert(
            "Start_stop".into(),
            pool(&["cure courte de", "traitement transitoire par", "relais temporaire par"]),
        );
        vocab.insert(
            "Stop".into(),
            pool(&["arrêt de", "arrêt du", "suspension de", "on arrête"]),
        );
        vocab.insert(
            "Continue".into(),
            pool(&["poursuite de", "maintien de", "on continue", "poursuivre"]),
        );
        vocab.insert(
            "Switch".into(),
            pool(&["switch vers", "remplacé par", "changement pour"]),
        );
        vocab.insert(
            "Decrease".into(),
            pool(&["diminution de", "baisse de", "réduction de"]),
        );
        vocab.insert("Increase".into(), pool(&["augmentation de", "majoration de"]));

        let field_rates = [
            ("Dose", 0.6),
            ("Route", 0.08),
            ("Frequency", 0.45),
            ("Duration", 0.07),
            ("Condition", 0.06),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let event_rates = [
            ("Start", 0.12),
            ("Start_stop", 0.07),
            ("Stop", 0.06),
            ("Continue", 0.06),
            ("Switch", 0.025),
            ("Decrease", 0.02),
            ("Increase", 0.015),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();

        Self {
            train: 300,
            dev: 60,
            test: 120,
            sentences_per_document: 6,
            templates: TemplateWeights::default(),
            drug_class_rate: 0.15,
            field_rates,
            event_rates,
            vocab,
            prefixes: pool(&[
                "", "", "traitement :", "sous", "on prescrit", "ordonnance :", "il reçoit",
                "elle prend", "traitement de sortie :", "à domicile", "prescription de",
            ]),
            suffixes: pool(&["", "", ".", "à poursuivre .", "jusqu' à nouvel ordre", "selon tolérance"]),
            mention_contexts: pool(&[
                "allergie à la", "antécédent de traitement par", "pas de", "intolérance au",
                "le patient ne prend plus de", "contre-indication à",
            ]),
            connectors: pool(&[",", "-", ","]),
            filler_words: pool(&[
                "le", "la", "les", "patient", "patiente", "est", "hospitalisé", "pour", "une",
                "pneumopathie", "douleur", "thoracique", "examen", "clinique", "normal",
                "abdomen", "souple", "pas", "de", "fièvre", "bilan", "biologique", "sans",
                "particularité", "scanner", "retrouve", "lésion", "pulmonaire", "avis",
                "cardiologique", "demandé", "sortie", "prévue", "demain", "consultation",
                "dans", "mois", "antécédents", "hta", "diabète", "type", "chute", "domicile",
                "bonne", "évolution", "contrôle", "radiographique", "à", "prévoir", "il",
                "elle", "vit", "seul", "seule", "avec", "son", "épouse", "marche", "canne",
                "tabac", "sevré", "ecg", "rythme", "sinusal", "auscultation", "claire",
            ]),
            lexicon_coverage: 0.8,
            seed: None,
        }
    }
}

const REQUIRED_POOLS: [&str; 14] = [
    "Drug_name", "Drug_class", "Dose", "Frequency", "Route", "Duration", "Condition", "Start",
    "Start_stop", "Stop", "Continue", "Switch", "Decrease", "Increase",
];

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (split, n) in [("train", self.train), ("dev", self.dev), ("test", self.test)] {
            if n == 0 {
                return Err(CorpusError::Config(format!("{split} sentence count must be positive")));
            }
        }
        if self.sentences_per_document == 0 {
            return Err(CorpusError::Config("sentences_per_document must be positive".into()));
        }
        for label in REQUIRED_POOLS {
            let empty = self
                .vocab
                .get(label)
                .is_none_or(|p| p.iter().all(|s| s.split_whitespace().next().is_none()));
            if empty {
                return Err(CorpusError::Config(format!("empty vocabulary pool for `{label}`")));
            }
        }
        for (name, p) in [
            ("filler_words", &self.filler_words),
            ("mention_contexts", &self.mention_contexts),
            ("connectors", &self.connectors),
        ] {
            if p.iter().all(|s| s.split_whitespace().next().is_none()) {
                return Err(CorpusError::Config(format!("empty pool `{name}`")));
            }
        }
        let t = &self.templates;
        let weights = [t.single, t.shared_field, t.prescription, t.mention, t.filler];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(CorpusError::Config("template weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The three generated splits plus the toy drug lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub lexicon: Vec<String>,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

struct SentenceBuilder<'a> {
    cfg: &'a GeneratorConfig,
    rng: &'a mut ChaCha8Rng,
    tokens: Vec<String>,
}

impl<'a> SentenceBuilder<'a> {
    fn words(&mut self, phrase: &str, out: &mut Vec<Node>) {
        for w in phrase.split_whitespace() {
            out.push(Node::Terminal(self.tokens.len()));
            self.tokens.push(w.to_string());
        }
    }

    fn pick(&mut self, items: &'a [String]) -> &'a str {
        items.choose(self.rng).map(String::as_str).unwrap_or("")
    }

    fn entity(&mut self, label: &str) -> Node {
        let cfg = self.cfg;
        let phrase = self.pick(&cfg.vocab[label]).to_string();
        let mut children = Vec::new();
        self.words(&phrase, &mut children);
        Node::NonTerminal {
            label: Label::new(label),
            children,
        }
    }

    fn drug(&mut self) -> Node {
        let label = if self.rng.gen_bool(self.cfg.drug_class_rate.clamp(0.0, 1.0)) {
            "Drug_class"
        } else {
            "Drug_name"
        };
        self.entity(label)
    }

    fn maybe_event(&mut self) -> Option<Node> {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (label, rate) in &self.cfg.event_rates {
            acc += rate;
            if u < acc {
                let label = label.clone();
                return Some(self.entity(&label));
            }
        }
        None
    }

    fn connector(&mut self, out: &mut Vec<Node>) {
        let cfg = self.cfg;
        if self.rng.gen_bool(0.3) {
            let c = self.pick(&cfg.connectors).to_string();
            self.words(&c, out);
        }
    }

    fn fields(&mut self, labels: &[&str], force_one: bool, out: &mut Vec<Node>) {
        let mut chosen: Vec<&str> = labels
            .iter()
            .copied()
            .filter(|l| {
                let rate = self.cfg.field_rates.get(*l).copied().unwrap_or(0.0);
                self.rng.gen_bool(rate.clamp(0.0, 1.0))
            })
            .collect();
        if chosen.is_empty() && force_one {
            chosen.push("Dose");
        }
        for label in chosen {
            self.connector(out);
            let node = self.entity(label);
            out.push(node);
        }
    }

    /// `[event] drug fields...` as the children of a drug-and-fields node.
    fn drug_and_fields(&mut self, force_field: bool) -> Node {
        let mut children = Vec::new();
        if let Some(ev) = self.maybe_event() {
            children.push(ev);
        }
        let has_event = !children.is_empty();
        let drug = self.drug();
        children.push(drug);
        self.fields(
            &["Dose", "Route", "Frequency", "Duration", "Condition"],
            force_field && !has_event,
            &mut children,
        );
        Node::NonTerminal {
            label: Label::new("DrugAndFields"),
            children,
        }
    }

    fn prefix(&mut self, out: &mut Vec<Node>) {
        let cfg = self.cfg;
        let p = self.pick(&cfg.prefixes).to_string();
        self.words(&p, out);
    }

    fn suffix(&mut self, out: &mut Vec<Node>) {
        let cfg = self.cfg;
        let s = self.pick(&cfg.suffixes).to_string();
        self.words(&s, out);
    }

    fn single(&mut self) -> Vec<Node> {
        let mut root = Vec::new();
        self.prefix(&mut root);
        let df = self.drug_and_fields(true);
        root.push(df);
        self.suffix(&mut root);
        root
    }

    fn shared_field(&mut self) -> Vec<Node> {
        let mut root = Vec::new();
        self.prefix(&mut root);
        let mut children = Vec::new();
        let a = self.drug();
        children.push(a);
        if self.rng.gen_bool(0.3) {
            let d = self.entity("Dose");
            children.push(d);
        }
        let conj = if self.rng.gen_bool(0.7) { "et" } else { "+" };
        self.words(conj, &mut children);
        let b = self.drug();
        children.push(b);
        self.words(",", &mut children);
        let shared = if self.rng.gen_bool(0.8) { "Frequency" } else { "Duration" };
        let f = self.entity(shared);
        children.push(f);
        root.push(Node::NonTerminal {
            label: Label::new("DrugAndFields"),
            children,
        });
        self.suffix(&mut root);
        root
    }

    fn prescription(&mut self) -> Vec<Node> {
        let mut root = Vec::new();
        self.prefix(&mut root);
        let mut children = Vec::new();
        if self.rng.gen_bool(0.4) {
            let label = if self.rng.gen_bool(0.5) { "Stop" } else { "Switch" };
            let ev = self.entity(label);
            children.push(ev);
        }
        let first = self.drug_and_fields(false);
        children.push(first);
        self.words("et", &mut children);
        let second = self.drug_and_fields(false);
        children.push(second);
        self.words(",", &mut children);
        let shared = if self.rng.gen_bool(0.6) { "Frequency" } else { "Duration" };
        let f = self.entity(shared);
        children.push(f);
        root.push(Node::NonTerminal {
            label: Label::new("Prescription"),
            children,
        });
        self.suffix(&mut root);
        root
    }

    fn mention(&mut self) -> Vec<Node> {
        let cfg = self.cfg;
        let mut root = Vec::new();
        let ctx = self.pick(&cfg.mention_contexts).to_string();
        self.words(&ctx, &mut root);
        let d = self.entity("Drug_name");
        root.push(d);
        if self.rng.gen_bool(0.5) {
            self.words(".", &mut root);
        }
        root
    }

    fn filler(&mut self) -> Vec<Node> {
        let cfg = self.cfg;
        let mut root = Vec::new();
        let len = self.rng.gen_range(4..=12);
        for _ in 0..len {
            let w = self.pick(&cfg.filler_words).to_string();
            self.words(&w, &mut root);
        }
        root
    }
}

fn generate_split(cfg: &GeneratorConfig, split: Split, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64 + 1);
    let t = &cfg.templates;
    let weights = [t.single, t.shared_field, t.prescription, t.mention, t.filler];
    let total: f64 = weights.iter().sum();
    let mut documents = Vec::new();
    let mut current = Vec::new();
    for _ in 0..n {
        let mut u = rng.gen::<f64>() * total;
        let mut template = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                template = i;
                break;
            }
            u -= w;
        }
        let mut b = SentenceBuilder {
            cfg,
            rng: &mut rng,
            tokens: Vec::new(),
        };
        let children = match template {
            0 => b.single(),
            1 => b.shared_field(),
            2 => b.prescription(),
            3 => b.mention(),
            _ => b.filler(),
        };
        let tokens = std::mem::take(&mut b.tokens);
        current.push(Tree::new(tokens, children).expect("templates build valid trees"));
        if current.len() == cfg.sentences_per_document {
            documents.push(Document {
                id: format!("{split}-{:03}", documents.len()),
                sentences: std::mem::take(&mut current),
            });
        }
    }
    if !current.is_empty() {
        documents.push(Document {
            id: format!("{split}-{:03}", documents.len()),
            sentences: current,
        });
    }
    Corpus::new(Some(split), documents).expect("generated ids are unique")
}

/// Generates train/dev/test splits deterministically from `seed`.
pub fn generate_synthetic_corpus(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut names = cfg.vocab["Drug_name"].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);
    let keep = ((names.len() as f64) * cfg.lexicon_coverage.clamp(0.0, 1.0)).round() as usize;
    let mut lexicon: Vec<String> = names.into_iter().take(keep).collect();
    lexicon.sort();
    Ok(SyntheticCorpus {
        train: generate_split(cfg, Split::Train, cfg.train, seed),
        dev: generate_split(cfg, Split::Dev, cfg.dev, seed),
        test: generate_split(cfg, Split::Test, cfg.test, seed),
        lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schema::LabelSchema;

    fn small(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            train: n,
            dev: 5,
            test: 5,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn shared_field_template_pairs_two_drugs() {
        let cfg = GeneratorConfig {
            templates: TemplateWeights {
                single: 0.0,
                shared_field: 1.0,
                prescription: 0.0,
                mention: 0.0,
                filler: 0.0,
            },
            ..small(1)
        };
        let out = generate_synthetic_corpus(&cfg, 1).unwrap();
        let tree = out.train.sentences().next().unwrap();
        let df = tree
            .children()
            .iter()
            .find_map(|n| match n {
                Node::NonTerminal { label, children } if label.as_str() == "DrugAndFields" => {
                    Some(children)
                }
                _ => None,
            })
            .expect("a drug-and-fields node");
        let labels: Vec<&str> = df
            .iter()
            .filter_map(|n| match n {
                Node::NonTerminal { label, .. } => Some(label.as_str()),
                _ => None,
            })
            .collect();
        let drugs = labels
            .iter()
            .filter(|l| **l == "Drug_name" || **l == "Drug_class")
            .count();
        assert_eq!(drugs, 2);
        assert!(labels.contains(&"Frequency") || labels.contains(&"Duration"));
    }

    #[test]
    fn output_is_valid_and_deterministic() {
        let schema = LabelSchema::prescription();
        let cfg = small(200);
        let a = generate_synthetic_corpus(&cfg, 5).unwrap();
        for split in Split::ALL {
            for tree in a.split(split).sentences() {
                tree.check_schema(&schema).unwrap();
            }
        }
        assert_eq!(a, generate_synthetic_corpus(&cfg, 5).unwrap());
        assert_ne!(a.train, generate_synthetic_corpus(&cfg, 6).unwrap().train);
    }

    #[test]
    fn drug_name_is_most_frequent_label() {
        let out = generate_synthetic_corpus(&small(600), 3).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in out.train.sentences() {
            for c in t.constituents() {
                *counts.entry(c.label.to_string()).or_default() += 1;
            }
        }
        let drug = counts["Drug_name"];
        for (label, n) in &counts {
            if label != "Drug_name" && label != "DrugAndFields" {
                assert!(*n <= drug, "{label} ({n}) outnumbers Drug_name ({drug})");
            }
        }
        assert!(counts.get("Increase").copied().unwrap_or(0) < counts["Start"]);
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(10);
        cfg.vocab.insert("Dose".into(), vec![]);
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 1),
            Err(CorpusError::Config(_))
        ));
        let cfg = GeneratorConfig {
            test: 0,
            ..small(10)
        };
        assert!(generate_synthetic_corpus(&cfg, 1).is_err());
    }
}
