//! Run configuration, the trained extraction system and the experiment
//! driver used by the command-line tool.
//!
//! A [`System`] bundles everything needed to annotate raw sentences in one
//! mode: terminology gazetteers, a chain of BiLSTM-CRF taggers (each fed the
//! BIO output of the stages it depends on) and, for parser modes, an RNNG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    generate_synthetic_corpus, project_tree, read_corpus, tree_from_spans, tree_to_bio, undersample, write_corpus,
    BioSequence, Corpus, CorpusError, GeneratorConfig, Label, LabelFamily, LabelSchema, Ratio, Span, Split, Tree,
};
use crate::crf::{ChannelSpec, CrfError, CrfTagger, TaggedExample, TaggerArch, TaggerConfig};
use crate::encoder::FeatureChannel;
use crate::eval::{evaluate_corpora, format_score, nearest_rank, EntitySource, EvalConfig, EvalError, EvalReport, MetricRow};
use crate::neural::{Checkpoint, NeuralError};
use crate::rnng::{DecodeConfig, Example, Rnng, RnngArch, RnngConfig, RnngError};
use crate::terminology::{build_trie, match_bio, Terminology, TerminologyError, TokenTrie};
use crate::transition::{induce_rules, RuleViolation, TransitionRuleSet};

const SYSTEM_FORMAT: &str = "rnng-system";
const SYSTEM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Terminology(#[from] TerminologyError),
    #[error("checkpoint was trained with a different {what}: checkpoint {expected}, current {found}")]
    CheckpointMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] NeuralError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0} sentence(s) violate the transition rules")]
    RuleViolations(usize),
    #[error("tagger: {0}")]
    Tagger(#[from] CrfError),
    #[error("parser: {0}")]
    Rnng(#[from] RnngError),
}

impl PipelineError {
    /// Process exit status: 1 usage/configuration, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Corpus(CorpusError::Config(_)) => 1,
            PipelineError::Tagger(_) | PipelineError::Rnng(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What gets trained and how sentences are annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One RNNG predicting entities, events and relations.
    #[default]
    Joint,
    /// RNNG trained on trees reduced to relation nodes.
    RelationsOnly,
    /// Entity and event taggers whose output feeds the RNNG.
    SeqRnng,
    /// Like `SeqRnng` with a relation-only parser; entities and events come
    /// from the taggers.
    SeqRnngRelationsOnly,
    /// Independent taggers, one per label family.
    TaggerBaseline,
    /// Tagger cascade: relation taggers see the entity and event tags.
    SeqTaggerBaseline,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Joint,
        Mode::RelationsOnly,
        Mode::SeqRnng,
        Mode::SeqRnngRelationsOnly,
        Mode::TaggerBaseline,
        Mode::SeqTaggerBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::RelationsOnly => "relations_only",
            Mode::SeqRnng => "seq_rnng",
            Mode::SeqRnngRelationsOnly => "seq_rnng_relations_only",
            Mode::TaggerBaseline => "tagger_baseline",
            Mode::SeqTaggerBaseline => "seq_tagger_baseline",
        }
    }

    pub fn uses_parser(self) -> bool {
        matches!(
            self,
            Mode::Joint | Mode::RelationsOnly | Mode::SeqRnng | Mode::SeqRnngRelationsOnly
        )
    }

    /// Whether the parser target keeps only relation nodes.
    pub fn relation_target(self) -> bool {
        matches!(self, Mode::RelationsOnly | Mode::SeqRnngRelationsOnly)
    }

    /// Whether the output contains entity annotations.
    pub fn predicts_entities(self) -> bool {
        self != Mode::RelationsOnly
    }

    /// Tagger stages in training order, each with the stages it reads.
    pub fn stages(self) -> Vec<(LabelFamily, Vec<LabelFamily>)> {
        use LabelFamily::*;
        match self {
            Mode::Joint | Mode::RelationsOnly => vec![],
            Mode::SeqRnng | Mode::SeqRnngRelationsOnly => vec![(Entity, vec![]), (Event, vec![])],
            Mode::TaggerBaseline => vec![
                (Entity, vec![]),
                (Event, vec![]),
                (RelationInner, vec![]),
                (RelationOuter, vec![]),
            ],
            Mode::SeqTaggerBaseline => vec![
                (Entity, vec![]),
                (Event, vec![]),
                (RelationInner, vec![Entity, Event]),
                (RelationOuter, vec![Entity, Event, RelationInner]),
            ],
        }
    }

    /// Tagger outputs fed to the parser.
    pub fn parser_inputs(self) -> Vec<LabelFamily> {
        match self {
            Mode::SeqRnng | Mode::SeqRnngRelationsOnly => vec![LabelFamily::Entity, LabelFamily::Event],
            _ => vec![],
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
            format!("unknown mode `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Input and output locations. Corpus files live in `data_dir`, trained
/// artifacts in `run_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs"),
        }
    }
}

impl Paths {
    pub fn split(&self, split: Split) -> PathBuf {
        self.data_dir.join(format!("{split}.txt"))
    }

    pub fn schema(&self) -> PathBuf {
        self.data_dir.join("schema.json")
    }

    pub fn rules(&self) -> PathBuf {
        self.data_dir.join("rules.json")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.data_dir.join("lexicon.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.run_dir.join("model.json")
    }

    pub fn train_log(&self) -> PathBuf {
        self.run_dir.join("train.log.jsonl")
    }

    pub fn predictions(&self) -> PathBuf {
        self.run_dir.join("predictions.txt")
    }

    pub fn report(&self) -> PathBuf {
        self.run_dir.join("report.json")
    }
}

/// Full run configuration. Every field except `seed` may be omitted from a
/// config file. `seed` overrides the seeds of the generator, the models,
/// undersampling and the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// `name=path` gazetteer specs, each becoming a BIO feature channel.
    #[serde(default)]
    pub terminologies: Vec<String>,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default)]
    pub rnng: RnngConfig,
    /// Balance labeled and unlabeled sentences 1:1 before parser training.
    #[serde(default = "yes")]
    pub undersample: bool,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn yes() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: Mode::default(),
            paths: Paths::default(),
            generator: GeneratorConfig::default(),
            terminologies: Vec::new(),
            tagger: TaggerConfig::default(),
            rnng: RnngConfig::default(),
            undersample: true,
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    /// Copies `seed` into every component configuration.
    pub fn propagate_seed(&mut self) {
        self.tagger.seed = self.seed;
        self.rnng.seed = self.seed;
        self.eval.bootstrap.seed = self.seed;
    }

    /// Checks hyperparameters and that every file in `required` exists.
    pub fn validate(&self, required: &[PathBuf]) -> Result<(), PipelineError> {
        self.tagger.validate()?;
        self.rnng.validate()?;
        if self.decode.beam_size == 0 {
            return Err(PipelineError::Config("beam size must be positive".into()));
        }
        for spec in &self.terminologies {
            let (_, path) = spec
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("terminology `{spec}` is not name=path")))?;
            if !Path::new(path).is_file() {
                return Err(PipelineError::Config(format!("terminology file {path} does not exist")));
            }
        }
        for path in required {
            if !path.is_file() {
                return Err(PipelineError::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn load_terminologies(&self) -> Result<Vec<Terminology>, PipelineError> {
        Ok(self
            .terminologies
            .iter()
            .map(|s| Terminology::from_spec(s))
            .collect::<Result<_, _>>()?)
    }
}

/// Schema, rules and the three splits read from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: LabelSchema,
    pub rules: TransitionRuleSet,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Dataset {
    pub fn load(paths: &Paths) -> Result<Self, PipelineError> {
        let schema = LabelSchema::read(&paths.schema())?;
        let rules = TransitionRuleSet::read(&paths.rules(), &schema)?;
        let read = |s| read_corpus(&paths.split(s), Some(&schema));
        Ok(Self {
            train: read(Split::Train)?,
            dev: read(Split::Dev)?,
            test: read(Split::Test)?,
            rules,
            schema,
        })
    }

    /// Generates the synthetic corpus in memory and induces its rules.
    pub fn synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<(Self, Vec<String>), PipelineError> {
        let c = generate_synthetic_corpus(cfg, seed)?;
        let rules = induce_rules(&c.train);
        Ok((
            Self {
                schema: LabelSchema::prescription(),
                rules,
                train: c.train,
                dev: c.dev,
                test: c.test,
            },
            c.lexicon,
        ))
    }
}

/// Writes the synthetic splits, schema and drug lexicon under `paths` and
/// returns the corpus summary.
pub fn generate(cfg: &GeneratorConfig, seed: u64, paths: &Paths) -> Result<String, PipelineError> {
    let c = generate_synthetic_corpus(cfg, seed)?;
    std::fs::create_dir_all(&paths.data_dir).map_err(io_err(&paths.data_dir))?;
    for split in Split::ALL {
        write_corpus(&paths.split(split), c.split(split))?;
    }
    let schema = LabelSchema::prescription();
    schema.write(&paths.schema())?;
    let lexicon = paths.lexicon();
    std::fs::write(&lexicon, c.lexicon.join("\n") + "\n").map_err(io_err(&lexicon))?;
    Ok(corpus_summary(
        &schema,
        &[("train", &c.train), ("dev", &c.dev), ("test", &c.test)],
    ))
}

fn length_stats(mut lengths: Vec<f64>) -> String {
    if lengths.is_empty() {
        return "-".to_string();
    }
    lengths.sort_by(f64::total_cmp);
    format!(
        "{} [{}-{}]",
        nearest_rank(&lengths, 50.0),
        nearest_rank(&lengths, 5.0),
        nearest_rank(&lengths, 95.0)
    )
}

/// Per-split document, sentence and token counts, then per-label supports
/// and span lengths (median with the 5th-95th percentile range, in tokens).
pub fn corpus_summary(schema: &LabelSchema, splits: &[(&str, &Corpus)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>8}", "split", "documents", "sentences", "tokens");
    for (name, c) in splits {
        let tokens: usize = c.sentences().map(Tree::len).sum();
        let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>8}", name, c.documents().len(), c.num_sentences(), tokens);
    }
    out.push('\n');
    let mut header = format!("{:<16} {:<15}", "label", "family");
    for (name, _) in splits {
        let _ = write!(header, " {:>7}", name);
    }
    let _ = writeln!(out, "{header}  length median [90% range]");
    for label in schema.labels() {
        let family = schema.family(label.as_str()).map_or("?", LabelFamily::name);
        let mut row = format!("{:<16} {:<15}", label.as_str(), family);
        let mut lengths = Vec::new();
        for (_, c) in splits {
            let mut n = 0;
            for tree in c.sentences() {
                for con in tree.constituents() {
                    if con.label == *label {
                        n += 1;
                        lengths.push((con.end - con.start) as f64);
                    }
                }
            }
            let _ = write!(row, " {n:>7}");
        }
        let _ = writeln!(out, "{row}  {}", length_stats(lengths));
    }
    out
}

/// A sentence of a linted corpus that breaks the rules.
#[derive(Debug, Clone, PartialEq)]
pub struct LintFinding {
    pub document: String,
    /// Zero-based position within the document.
    pub sentence: usize,
    pub violation: RuleViolation,
}

pub fn lint(corpus: &Corpus, rules: &TransitionRuleSet) -> Vec<LintFinding> {
    let mut out = Vec::new();
    for doc in corpus.documents() {
        for (i, tree) in doc.sentences.iter().enumerate() {
            if let Err(violation) = rules.check_tree(tree) {
                out.push(LintFinding {
                    document: doc.id.clone(),
                    sentence: i,
                    violation,
                });
            }
        }
    }
    out
}

fn relation_families() -> [LabelFamily; 2] {
    [LabelFamily::RelationInner, LabelFamily::RelationOuter]
}

fn tree_spans(tree: &Tree) -> Vec<Span> {
    tree.constituents()
        .into_iter()
        .map(|c| Span {
            label: c.label,
            start: c.start,
            end: c.end,
        })
        .collect()
}

fn channel_for(schema: &LabelSchema, family: LabelFamily) -> ChannelSpec {
    ChannelSpec {
        name: family.name().to_string(),
        tagset: FeatureChannel::bio_tagset(&schema.labels_of(family)),
    }
}

fn terminology_channel(t: &Terminology) -> ChannelSpec {
    ChannelSpec {
        name: format!("term:{}", t.name),
        tagset: vec!["O".into(), format!("B-{}", t.name), format!("I-{}", t.name)],
    }
}

/// One tagger of the cascade.
#[derive(Debug, Clone)]
pub struct Stage {
    pub family: LabelFamily,
    /// Stages whose predicted tags are extra input channels.
    pub inputs: Vec<LabelFamily>,
    pub tagger: CrfTagger,
}

/// Everything needed to annotate new sentences.
#[derive(Debug, Clone)]
pub struct System {
    pub mode: Mode,
    pub schema_hash: String,
    pub rules_hash: String,
    /// Rules the parser decodes under (relation-level rules for
    /// relation-only targets).
    pub parser_rules: TransitionRuleSet,
    pub terminologies: Vec<Terminology>,
    tries: Vec<TokenTrie>,
    pub stages: Vec<Stage>,
    pub rnng: Option<Rnng>,
}

/// Per-sentence intermediate annotations.
#[derive(Debug, Clone, Default)]
pub struct Annotation {
    pub terms: Vec<BioSequence>,
    pub tagged: BTreeMap<LabelFamily, BioSequence>,
}

impl Annotation {
    fn features(&self, inputs: &[LabelFamily]) -> Vec<BioSequence> {
        let mut f = self.terms.clone();
        f.extend(inputs.iter().map(|fam| self.tagged[fam].clone()));
        f
    }
}

#[derive(Serialize, Deserialize)]
struct StageFile {
    family: LabelFamily,
    inputs: Vec<LabelFamily>,
    tagger: Checkpoint<TaggerArch>,
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    format: String,
    version: u32,
    mode: Mode,
    schema_hash: String,
    rules_hash: String,
    parser_rules: TransitionRuleSet,
    /// `(name, entries one per line)`.
    terminologies: Vec<(String, String)>,
    stages: Vec<StageFile>,
    rnng: Option<Checkpoint<RnngArch>>,
}

impl System {
    fn empty(mode: Mode, schema: &LabelSchema, rules: &TransitionRuleSet, terminologies: Vec<Terminology>) -> Self {
        let tries = terminologies.iter().map(build_trie).collect();
        Self {
            mode,
            schema_hash: schema.fingerprint(),
            rules_hash: rules.fingerprint(),
            parser_rules: rules.clone(),
            terminologies,
            tries,
            stages: Vec::new(),
            rnng: None,
        }
    }

    /// Gazetteer matches, then every tagger stage in order.
    pub fn annotate(&self, tokens: &[String]) -> Result<Annotation, PipelineError> {
        let mut a = Annotation {
            terms: self.tries.iter().map(|t| match_bio(t, tokens)).collect(),
            tagged: BTreeMap::new(),
        };
        for stage in &self.stages {
            let tags = stage.tagger.tag(tokens, &a.features(&stage.inputs))?;
            a.tagged.insert(stage.family, tags);
        }
        Ok(a)
    }

    /// Annotates one sentence.
    pub fn predict(&self, schema: &LabelSchema, tokens: &[String], decode: &DecodeConfig) -> Result<Tree, PipelineError> {
        let a = self.annotate(tokens)?;
        let tagged_spans = || -> Vec<Span> {
            a.tagged
                .values()
                .flat_map(crate::corpus::bio_to_spans)
                .collect()
        };
        let Some(rnng) = &self.rnng else {
            return Ok(tree_from_spans(tokens.to_vec(), &tagged_spans(), schema));
        };
        let parsed = rnng
            .decode(&self.parser_rules, tokens, &a.features(&self.mode.parser_inputs()), decode)?
            .tree;
        if self.mode == Mode::SeqRnngRelationsOnly {
            let mut spans = tree_spans(&parsed);
            spans.extend(tagged_spans());
            return Ok(tree_from_spans(tokens.to_vec(), &spans, schema));
        }
        Ok(parsed)
    }

    /// Annotates every sentence, in parallel, preserving order.
    pub fn predict_all(
        &self,
        schema: &LabelSchema,
        sentences: &[&[String]],
        decode: &DecodeConfig,
    ) -> Result<Vec<Tree>, PipelineError> {
        sentences
            .par_iter()
            .map(|tokens| self.predict(schema, tokens, decode))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let file = SystemFile {
            format: SYSTEM_FORMAT.to_string(),
            version: SYSTEM_VERSION,
            mode: self.mode,
            schema_hash: self.schema_hash.clone(),
            rules_hash: self.rules_hash.clone(),
            parser_rules: self.parser_rules.clone(),
            terminologies: self
                .terminologies
                .iter()
                .map(|t| (t.name.clone(), t.to_text()))
                .collect(),
            stages: self
                .stages
                .iter()
                .map(|s| StageFile {
                    family: s.family,
                    inputs: s.inputs.clone(),
                    tagger: s.tagger.to_checkpoint(),
                })
                .collect(),
            rnng: self.rnng.as_ref().map(Rnng::to_checkpoint),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let text = serde_json::to_string(&file).map_err(NeuralError::from)?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    /// Loads a saved system and checks it against the current schema and
    /// rules.
    pub fn load(path: &Path, schema: &LabelSchema, rules: &TransitionRuleSet) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let file: SystemFile = serde_json::from_str(&text).map_err(NeuralError::from)?;
        if file.format != SYSTEM_FORMAT || file.version != SYSTEM_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported system file {} v{}",
                file.format, file.version
            ))
            .into());
        }
        for (what, expected, found) in [
            ("schema", &file.schema_hash, schema.fingerprint()),
            ("rule set", &file.rules_hash, rules.fingerprint()),
        ] {
            if *expected != found {
                return Err(PipelineError::CheckpointMismatch {
                    what,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        let terminologies = file
            .terminologies
            .iter()
            .map(|(name, text)| Terminology::parse(name, text))
            .collect::<Result<Vec<_>, _>>()?;
        let mut system = Self::empty(file.mode, schema, rules, terminologies);
        system.parser_rules = file.parser_rules;
        for mut s in file.stages {
            s.tagger.params.reindex();
            system.stages.push(Stage {
                family: s.family,
                inputs: s.inputs,
                tagger: CrfTagger::from_checkpoint(s.tagger),
            });
        }
        system.rnng = file.rnng.map(|mut ck| {
            ck.params.reindex();
            Rnng::from_checkpoint(ck)
        });
        Ok(system)
    }
}

/// Training progress: one JSON object per epoch.
pub type LogSink<'a> = &'a mut dyn FnMut(&serde_json::Value);

fn sentence_ids(corpus: &Corpus) -> Vec<(String, &Tree)> {
    corpus
        .documents()
        .iter()
        .flat_map(|d| d.sentences.iter().enumerate().map(move |(i, t)| (format!("{}#{i}", d.id), t)))
        .collect()
}

/// Trains every component of `cfg.mode` on `train`, selecting on `dev`.
pub fn train_system(cfg: &RunConfig, data: &Dataset, log: LogSink<'_>) -> Result<System, PipelineError> {
    let schema = &data.schema;
    let mut system = System::empty(cfg.mode, schema, &data.rules, cfg.load_terminologies()?);
    let term_channels: Vec<ChannelSpec> = system.terminologies.iter().map(terminology_channel).collect();
    let train_tokens = |c: &Corpus| -> Vec<String> { c.sentences().flat_map(|t| t.tokens().iter().cloned()).collect() };

    for (family, inputs) in cfg.mode.stages() {
        let tagged = |corpus: &Corpus| -> Result<Vec<TaggedExample>, PipelineError> {
            corpus
                .sentences()
                .map(|t| {
                    Ok(TaggedExample {
                        tokens: t.tokens().to_vec(),
                        features: system.annotate(t.tokens())?.features(&inputs),
                        gold: tree_to_bio(t, schema, family),
                    })
                })
                .collect()
        };
        let train = tagged(&data.train)?;
        let dev = tagged(&data.dev)?;
        let mut channels = term_channels.clone();
        channels.extend(inputs.iter().map(|&f| channel_for(schema, f)));
        let vocab = train_tokens(&data.train);
        let name = format!("tagger:{family}");
        let mut tagger = CrfTagger::new(
            &name,
            &schema.labels_of(family),
            &channels,
            vocab.iter().map(String::as_str),
            &cfg.tagger,
        )?;
        tagger.train(&train, &dev, &cfg.tagger, &mut |e| {
            log(&serde_json::to_value(e).expect("log entries serialize"))
        })?;
        system.stages.push(Stage { family, inputs, tagger });
    }

    if !cfg.mode.uses_parser() {
        return Ok(system);
    }
    let relation_target = cfg.mode.relation_target();
    let target = |t: &Tree| {
        if relation_target {
            project_tree(t, schema, &relation_families())
        } else {
            t.clone()
        }
    };
    if relation_target {
        system.parser_rules = induce_rules(&data.train.map_trees(target));
    }
    let parser_train = if cfg.undersample {
        undersample(&data.train, Ratio::ONE_TO_ONE, cfg.seed)
    } else {
        data.train.clone()
    };
    let inputs = cfg.mode.parser_inputs();
    let examples = |corpus: &Corpus| -> Result<Vec<Example>, PipelineError> {
        sentence_ids(corpus)
            .into_iter()
            .map(|(id, t)| {
                Ok(Example {
                    id,
                    target: target(t),
                    reference: t.clone(),
                    features: system.annotate(t.tokens())?.features(&inputs),
                })
            })
            .collect()
    };
    let train = examples(&parser_train)?;
    let mut dev = examples(&data.dev)?;
    let before = dev.len();
    dev.retain(|ex| system.parser_rules.check_tree(&ex.target).is_ok());
    if dev.len() < before {
        log(&serde_json::json!({ "dev_sentences_outside_rules": before - dev.len() }));
    }
    let labels: Vec<Label> = schema
        .labels()
        .iter()
        .filter(|l| !relation_target || schema.family(l.as_str()).is_some_and(LabelFamily::is_relation))
        .cloned()
        .collect();
    let mut channels: Vec<(String, Vec<String>)> = term_channels.iter().map(|c| (c.name.clone(), c.tagset.clone())).collect();
    channels.extend(inputs.iter().map(|&f| {
        let c = channel_for(schema, f);
        (c.name, c.tagset)
    }));
    let vocab = train_tokens(&parser_train);
    let mut rnng = Rnng::new(labels, &channels, vocab.iter().map(String::as_str), &cfg.rnng)?;
    rnng.train(
        &format!("rnng:{}", cfg.mode),
        &system.parser_rules,
        schema,
        &train,
        &dev,
        &cfg.rnng,
        &mut |e| log(&serde_json::to_value(e).expect("log entries serialize")),
    )?;
    system.rnng = Some(rnng);
    Ok(system)
}

/// Predicts `corpus` and scores it against its own annotations.
pub fn evaluate_system(
    system: &System,
    schema: &LabelSchema,
    corpus: &Corpus,
    decode: &DecodeConfig,
    eval: &EvalConfig,
) -> Result<(Vec<Tree>, EvalReport), PipelineError> {
    let gold: Vec<&Tree> = corpus.sentences().collect();
    let tokens: Vec<&[String]> = gold.iter().map(|t| t.tokens()).collect();
    let pred = system.predict_all(schema, &tokens, decode)?;
    let pred_refs: Vec<&Tree> = pred.iter().collect();
    let report = evaluate_corpora(&gold, &pred_refs, schema, eval)?;
    Ok((pred, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    /// Relation scores with gold entities.
    pub relations: MetricRow,
    /// `None` when the mode does not predict entities.
    pub entities: Option<MetricRow>,
    pub events: Option<MetricRow>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, mode: Mode) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn render(&self) -> String {
        let cell = |r: Option<&MetricRow>| {
            r.map_or("-".to_string(), |m| format_score(m.f1, m.ci.as_ref()))
        };
        let mut out = format!(
            "{:<24} {:>20} {:>20} {:>20} {:>8}\n",
            "mode", "relations", "entities", "events", "train s"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>20} {:>20} {:>20} {:>8.1}",
                r.mode.name(),
                cell(Some(&r.relations)),
                cell(r.entities.as_ref()),
                cell(r.events.as_ref()),
                r.train_seconds
            );
        }
        out
    }
}

/// Trains each mode on `data` and scores it on the test split. Relations
/// are scored against gold entities.
pub fn compare(cfg: &RunConfig, data: &Dataset, modes: &[Mode], log: LogSink<'_>) -> Result<Comparison, PipelineError> {
    let mut rows = Vec::new();
    let eval = EvalConfig {
        entity_source: EntitySource::Oracle,
        ..cfg.eval
    };
    for &mode in modes {
        let run = RunConfig { mode, ..cfg.clone() };
        let started = Instant::now();
        let system = train_system(&run, data, log)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let (_, report) = evaluate_system(&system, &data.schema, &data.test, &cfg.decode, &eval)?;
        let section = |name: &str| report.section(name).map(|s| s.aggregate.clone());
        rows.push(ComparisonRow {
            mode,
            relations: section("Relations").expect("report has a relation section"),
            entities: section("Entities").filter(|_| mode.predicts_entities()),
            events: section("Events").filter(|_| mode.predicts_entities()),
            train_seconds,
        });
    }
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.generator.train = 40;
        cfg.generator.dev = 10;
        cfg.generator.test = 10;
        cfg.tagger.epochs = 2;
        cfg.rnng.epochs = 2;
        cfg.rnng.token_hidden = 8;
        cfg.rnng.stack_hidden = 8;
        cfg.rnng.summary_dim = 8;
        cfg
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("tree".parse::<Mode>().is_err());
    }

    #[test]
    fn seed_is_required_in_config_files() {
        assert!(RunConfig::from_json("{}").is_err());
        let cfg = RunConfig::from_json(r#"{"seed": 9, "mode": "seq_rnng"}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, Mode::SeqRnng);
        assert!(cfg.undersample);
        assert_eq!(cfg.decode.beam_size, 3);
    }

    #[test]
    fn validation_reports_missing_files() {
        let cfg = RunConfig::default();
        let err = cfg.validate(&[PathBuf::from("/nonexistent/train.txt")]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn summary_lists_every_label() {
        let (data, _) = Dataset::synthetic(&tiny_config().generator, 3).unwrap();
        let text = corpus_summary(&data.schema, &[("train", &data.train), ("test", &data.test)]);
        for label in data.schema.labels() {
            assert!(text.lines().any(|l| l.starts_with(label.as_str())), "{label:?} missing");
        }
    }

    #[test]
    fn lint_finds_the_corrupted_sentence() {
        let (data, _) = Dataset::synthetic(&tiny_config().generator, 3).unwrap();
        assert!(lint(&data.train, &data.rules).is_empty());
        let bad = crate::corpus::parse_corpus(
            "# doc_id = x\n(ROOT a)\n(ROOT (Dose (Prescription b)))\n",
            None,
            None,
        )
        .unwrap();
        let found = lint(&bad, &data.rules);
        assert_eq!(found.len(), 1);
        assert_eq!((found[0].document.as_str(), found[0].sentence), ("x", 1));
    }

    #[test]
    fn system_save_load_predicts_identically() {
        let cfg = RunConfig {
            mode: Mode::SeqRnng,
            ..tiny_config()
        };
        let (data, _) = Dataset::synthetic(&cfg.generator, 3).unwrap();
        let system = train_system(&cfg, &data, &mut |_| {}).unwrap();
        assert_eq!(system.stages.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        system.save(&path).unwrap();
        let back = System::load(&path, &data.schema, &data.rules).unwrap();
        let tokens: Vec<&[String]> = data.test.sentences().map(|t| t.tokens()).collect();
        let a = system.predict_all(&data.schema, &tokens, &DecodeConfig::default()).unwrap();
        let b = back.predict_all(&data.schema, &tokens, &DecodeConfig::default()).unwrap();
        assert_eq!(a, b);

        let mut other = data.rules.clone();
        other.max_shift.insert(Label::new("Dose"), 99);
        match System::load(&path, &data.schema, &other) {
            Err(PipelineError::CheckpointMismatch { expected, found, .. }) => {
                assert_eq!(expected, data.rules.fingerprint());
                assert_eq!(found, other.fingerprint());
            }
            r => panic!("expected a mismatch, got {:?}", r.map(|_| ())),
        }
    }

    #[test]
    fn tagger_modes_build_valid_trees() {
        for mode in [Mode::TaggerBaseline, Mode::SeqTaggerBaseline] {
            let cfg = RunConfig { mode, ..tiny_config() };
            let (data, _) = Dataset::synthetic(&cfg.generator, 5).unwrap();
            let system = train_system(&cfg, &data, &mut |_| {}).unwrap();
            assert_eq!(system.stages.len(), 4);
            assert!(system.rnng.is_none());
            let (pred, _) =
                evaluate_system(&system, &data.schema, &data.test, &cfg.decode, &cfg.eval).unwrap();
            for t in &pred {
                t.check_schema(&data.schema).unwrap();
            }
        }
    }

    #[test]
    fn relation_only_parser_uses_relation_rules() {
        let cfg = RunConfig {
            mode: Mode::RelationsOnly,
            ..tiny_config()
        };
        let (data, _) = Dataset::synthetic(&cfg.generator, 5).unwrap();
        let system = train_system(&cfg, &data, &mut |_| {}).unwrap();
        for label in system.parser_rules.allowed_children.keys() {
            assert!(label.is_root() || data.schema.family(label.as_str()).is_some_and(LabelFamily::is_relation));
        }
        let tokens: Vec<&[String]> = data.test.sentences().map(|t| t.tokens()).collect();
        for t in system.predict_all(&data.schema, &tokens, &DecodeConfig::greedy()).unwrap() {
            for c in t.constituents() {
                assert!(data.schema.family(c.label.as_str()).is_some_and(LabelFamily::is_relation));
            }
        }
    }
}
