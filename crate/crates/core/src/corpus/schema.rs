use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

/// Name of the implicit outermost constituent.
pub const ROOT: &str = "ROOT";

/// A non-terminal label. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(Arc<str>);

impl Label {
    pub fn new(name: &str) -> Self {
        Label(Arc::from(name))
    }

    pub fn root() -> Self {
        Label::new(ROOT)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        &*self.0 == ROOT
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl std::borrow::Borrow<str> for Label {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Annotation level of a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFamily {
    Entity,
    Event,
    RelationInner,
    RelationOuter,
}

impl LabelFamily {
    pub const ALL: [LabelFamily; 4] = [
        LabelFamily::Entity,
        LabelFamily::Event,
        LabelFamily::RelationInner,
        LabelFamily::RelationOuter,
    ];

    pub fn is_relation(self) -> bool {
        matches!(self, LabelFamily::RelationInner | LabelFamily::RelationOuter)
    }

    /// Whether a node of this family may directly contain a node of `child`.
    pub fn can_parent(self, child: LabelFamily) -> bool {
        match self {
            LabelFamily::RelationOuter => child != LabelFamily::RelationOuter,
            LabelFamily::RelationInner => {
                matches!(child, LabelFamily::Entity | LabelFamily::Event)
            }
            LabelFamily::Entity | LabelFamily::Event => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelFamily::Entity => "entity",
            LabelFamily::Event => "event",
            LabelFamily::RelationInner => "relation_inner",
            LabelFamily::RelationOuter => "relation_outer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        LabelFamily::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for LabelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    labels: Vec<Label>,
    families: BTreeMap<Label, LabelFamily>,
    #[serde(default)]
    drug_labels: Vec<Label>,
}

/// Ordered label inventory with the family of each label.
///
/// `drug_labels` names the entity labels that anchor relation pairs
/// (drug names and drug classes); every other entity or event label is a
/// field of the drug it is related to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    labels: Vec<Label>,
    families: BTreeMap<Label, LabelFamily>,
    drug_labels: BTreeSet<Label>,
}

impl LabelSchema {
    pub fn new(
        entries: Vec<(Label, LabelFamily)>,
        drug_labels: impl IntoIterator<Item = Label>,
    ) -> Result<Self, CorpusError> {
        let mut labels = Vec::with_capacity(entries.len());
        let mut families = BTreeMap::new();
        for (label, family) in entries {
            if label.is_root() {
                return Err(CorpusError::Schema(format!("`{ROOT}` is reserved")));
            }
            if label.as_str().is_empty()
                || label
                    .as_str()
                    .chars()
                    .any(|c| c.is_whitespace() || c == '(' || c == ')')
            {
                return Err(CorpusError::Schema(format!("invalid label name {label:?}")));
            }
            if families.insert(label.clone(), family).is_some() {
                return Err(CorpusError::Schema(format!("duplicate label `{label}`")));
            }
            labels.push(label);
        }
        let drug_labels: BTreeSet<Label> = drug_labels.into_iter().collect();
        for drug in &drug_labels {
            match families.get(drug) {
                Some(LabelFamily::Entity) => {}
                Some(other) => {
                    return Err(CorpusError::Schema(format!(
                        "drug label `{drug}` must be an entity label, found {other}"
                    )))
                }
                None => {
                    return Err(CorpusError::Schema(format!(
                        "drug label `{drug}` is not declared"
                    )))
                }
            }
        }
        Ok(Self {
            labels,
            families,
            drug_labels,
        })
    }

    /// The medication schema: seven entity labels, seven event labels and
    /// the two relation tiers.
    pub fn prescription() -> Self {
        use LabelFamily::*;
        let entries = [
            ("Drug_name", Entity),
            ("Drug_class", Entity),
            ("Dose", Entity),
            ("Frequency", Entity),
            ("Route", Entity),
            ("Duration", Entity),
            ("Condition", Entity),
            ("Start", Event),
            ("Start_stop", Event),
            ("Stop", Event),
            ("Continue", Event),
            ("Switch", Event),
            ("Decrease", Event),
            ("Increase", Event),
            ("DrugAndFields", RelationInner),
            ("Prescription", RelationOuter),
        ];
        Self::new(
            entries
                .iter()
                .map(|&(l, f)| (Label::new(l), f))
                .collect(),
            [Label::new("Drug_name"), Label::new("Drug_class")],
        )
        .expect("built-in schema is valid")
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn family(&self, label: &str) -> Option<LabelFamily> {
        self.families.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.families.contains_key(label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.as_str() == label)
    }

    pub fn is_drug(&self, label: &str) -> bool {
        self.drug_labels.contains(label)
    }

    pub fn drug_labels(&self) -> impl Iterator<Item = &Label> {
        self.drug_labels.iter()
    }

    /// Labels of one family, in schema order.
    pub fn labels_of(&self, family: LabelFamily) -> Vec<Label> {
        self.labels
            .iter()
            .filter(|l| self.families[*l] == family)
            .cloned()
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let file: SchemaFile = serde_json::from_str(text)?;
        let mut entries = Vec::with_capacity(file.labels.len());
        for label in &file.labels {
            let family = file.families.get(label).copied().ok_or_else(|| {
                CorpusError::Schema(format!("label `{label}` has no family"))
            })?;
            entries.push((label.clone(), family));
        }
        if let Some(extra) = file.families.keys().find(|l| !file.labels.contains(l)) {
            return Err(CorpusError::Schema(format!(
                "family given for undeclared label `{extra}`"
            )));
        }
        Self::new(entries, file.drug_labels)
    }

    pub fn to_json(&self) -> String {
        let file = SchemaFile {
            labels: self.labels.clone(),
            families: self.families.clone(),
            drug_labels: self.drug_labels.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// SHA-256 of the canonical JSON form, embedded in checkpoints.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
