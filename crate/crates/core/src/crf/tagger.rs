//! BiLSTM-CRF sequence tagger over one label family.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::ChainScores;
use crate::corpus::{bio_to_spans, BioSequence, BioTag, Label};
use crate::encoder::{locked_dropout, EmbeddingConfig, EmbeddingProvider, Encoder, FeatureChannel};
use crate::eval::span_f1;
use crate::neural::{
    Adam, AdamConfig, BiLstm, Checkpoint, Graph, Init, NeuralError, NodeId, ParamId, ParamStore, ReduceOnPlateau,
};

use super::CrfError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub embedding: EmbeddingConfig,
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a better dev F1.
    pub patience: usize,
    pub adam: AdamConfig,
    pub word_dropout: f64,
    pub locked_dropout: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            hidden_dim: 64,
            epochs: 30,
            patience: 6,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            word_dropout: 0.05,
            locked_dropout: 0.2,
            seed: 1,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), CrfError> {
        if self.hidden_dim == 0 || self.embedding.dim == 0 {
            return Err(CrfError::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.word_dropout) || !(0.0..1.0).contains(&self.locked_dropout) {
            return Err(CrfError::Config("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Input channel declaration: name and tag inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub tagset: Vec<String>,
}

/// A training or evaluation sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedExample {
    pub tokens: Vec<String>,
    /// One sequence per input channel, in channel order.
    pub features: Vec<BioSequence>,
    pub gold: BioSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerArch {
    pub name: String,
    pub tags: Vec<String>,
    pub encoder: Encoder,
    pub bilstm: BiLstm,
    pub emit_w: ParamId,
    pub emit_b: ParamId,
    pub trans: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub locked_dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct CrfTagger {
    pub arch: TaggerArch,
    pub params: ParamStore,
    tags: Vec<BioTag>,
    trans_mask: Vec<f64>,
    start_mask: Vec<f64>,
}

/// Additive masks forbidding `I-X` after anything but `B-X`/`I-X`, and at
/// the start of a sentence.
pub fn bio_masks(tags: &[BioTag]) -> (Vec<f64>, Vec<f64>) {
    let t = tags.len();
    let mut trans = vec![0.0; t * t];
    for (i, from) in tags.iter().enumerate() {
        for (j, to) in tags.iter().enumerate() {
            if !BioTag::may_precede(Some(from), to) {
                trans[i * t + j] = f64::NEG_INFINITY;
            }
        }
    }
    let start = tags
        .iter()
        .map(|to| if BioTag::may_precede(None, to) { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    (trans, start)
}

fn parse_tags(tags: &[String]) -> Vec<BioTag> {
    tags.iter().map(|t| t.parse().expect("tagset entries are valid BIO tags")).collect()
}

impl CrfTagger {
    pub fn new<'a>(
        name: &str,
        labels: &[Label],
        channels: &[ChannelSpec],
        train_tokens: impl IntoIterator<Item = &'a str>,
        cfg: &TaggerConfig,
    ) -> Result<Self, CrfError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let provider = EmbeddingProvider::new(&mut params, &cfg.embedding, train_tokens, &mut rng)?;
        let channels = channels
            .iter()
            .map(|c| FeatureChannel::new(&mut params, &c.name, c.tagset.clone(), &mut rng))
            .collect();
        let encoder = Encoder {
            provider,
            channels,
            word_dropout: cfg.word_dropout,
        };
        let tag_strings = FeatureChannel::bio_tagset(labels);
        let t = tag_strings.len();
        let in_dim = encoder.output_dim(&params);
        let bilstm = BiLstm::new(&mut params, "tagger.bilstm", in_dim, cfg.hidden_dim, &mut rng);
        let emit_w = params.add("tagger.emit.w", &[t, bilstm.output_dim()], Init::FanIn, &mut rng);
        let emit_b = params.add("tagger.emit.b", &[t], Init::Zeros, &mut rng);
        let trans = params.add("tagger.trans", &[t, t], Init::Zeros, &mut rng);
        let start = params.add("tagger.start", &[t], Init::Zeros, &mut rng);
        let stop = params.add("tagger.stop", &[t], Init::Zeros, &mut rng);
        let arch = TaggerArch {
            name: name.to_string(),
            tags: tag_strings,
            encoder,
            bilstm,
            emit_w,
            emit_b,
            trans,
            start,
            stop,
            locked_dropout: cfg.locked_dropout,
        };
        Ok(Self::from_parts(arch, params))
    }

    fn from_parts(arch: TaggerArch, params: ParamStore) -> Self {
        let tags = parse_tags(&arch.tags);
        let (trans_mask, start_mask) = bio_masks(&tags);
        Self {
            arch,
            params,
            tags,
            trans_mask,
            start_mask,
        }
    }

    pub fn name(&self) -> &str {
        &self.arch.name
    }

    pub fn tags(&self) -> &[BioTag] {
        &self.tags
    }

    fn tag_index(&self, tag: &BioTag) -> Result<usize, CrfError> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| CrfError::UnknownTag(tag.to_string()))
    }

    /// Per-token tag scores.
    pub fn emissions(
        &self,
        g: &mut Graph<'_>,
        tokens: &[String],
        features: &[BioSequence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<NodeId>, CrfError> {
        let a = &self.arch;
        let (xs, rng) = match rng {
            Some(r) => {
                let xs = a.encoder.encode(g, tokens, features, Some(&mut *r))?;
                (locked_dropout(g, &xs, a.locked_dropout, r), Some(r))
            }
            None => (a.encoder.encode(g, tokens, features, None)?, None),
        };
        let mut hs = a.bilstm.encode(g, &xs)?;
        if let Some(r) = rng {
            hs = locked_dropout(g, &hs, a.locked_dropout, r);
        }
        Ok(hs.iter().map(|&h| g.linear(&[(a.emit_w, h)], Some(a.emit_b))).collect())
    }

    /// CRF negative log-likelihood of the gold tags.
    pub fn loss(&self, g: &mut Graph<'_>, ex: &TaggedExample, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId, CrfError> {
        if ex.gold.len() != ex.tokens.len() {
            return Err(CrfError::LengthMismatch {
                expected: ex.tokens.len(),
                found: ex.gold.len(),
            });
        }
        let gold = ex
            .gold
            .tags()
            .iter()
            .map(|t| self.tag_index(t))
            .collect::<Result<Vec<_>, _>>()?;
        let em = self.emissions(g, &ex.tokens, &ex.features, rng)?;
        let a = &self.arch;
        let tp = g.param(a.trans);
        let tm = g.input(self.trans_mask.clone());
        let trans = g.add(tp, tm);
        let sp = g.param(a.start);
        let sm = g.input(self.start_mask.clone());
        let start = g.add(sp, sm);
        let stop = g.param(a.stop);
        Ok(g.crf_nll(&em, trans, start, stop, &gold))
    }

    /// Viterbi decoding under the BIO constraints.
    pub fn tag(&self, tokens: &[String], features: &[BioSequence]) -> Result<BioSequence, CrfError> {
        let mut g = Graph::new(&self.params);
        let em = self.emissions(&mut g, tokens, features, None)?;
        let em: Vec<&[f64]> = em.iter().map(|e| g.value(*e)).collect();
        let trans: Vec<f64> = self
            .params
            .get(self.arch.trans)
            .value
            .iter()
            .zip(&self.trans_mask)
            .map(|(a, b)| a + b)
            .collect();
        let start: Vec<f64> = self
            .params
            .get(self.arch.start)
            .value
            .iter()
            .zip(&self.start_mask)
            .map(|(a, b)| a + b)
            .collect();
        let scores = ChainScores {
            emissions: &em,
            trans: &trans,
            start: &start,
            stop: &self.params.get(self.arch.stop).value,
        };
        let (path, _) = scores.viterbi();
        Ok(BioSequence::new(path.into_iter().map(|i| self.tags[i].clone()).collect())
            .expect("masked transitions yield valid BIO"))
    }

    /// Span-level F1 (percent) and mean NLL on a dataset.
    pub fn evaluate(&self, data: &[TaggedExample]) -> Result<(f64, f64), CrfError> {
        let mut gold = Vec::with_capacity(data.len());
        let mut pred = Vec::with_capacity(data.len());
        let mut loss = 0.0;
        for ex in data {
            let mut g = Graph::new(&self.params);
            let l = self.loss(&mut g, ex, None)?;
            loss += g.scalar(l);
            gold.push(bio_to_spans(&ex.gold));
            pred.push(bio_to_spans(&self.tag(&ex.tokens, &ex.features)?));
        }
        let counts = span_f1(&gold, &pred);
        let f1 = if counts.tp + counts.fp + counts.fn_ == 0 {
            100.0
        } else {
            100.0 * counts.f1()
        };
        Ok((f1, loss / data.len().max(1) as f64))
    }

    /// Trains with Adam at batch size one and keeps the parameters with the
    /// best dev F1 (training F1 when `dev` is empty).
    pub fn train(
        &mut self,
        train: &[TaggedExample],
        dev: &[TaggedExample],
        cfg: &TaggerConfig,
        log: &mut dyn FnMut(&EpochLog),
    ) -> Result<f64, CrfError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a6);
        let mut adam = Adam::new(cfg.adam);
        let mut sched = ReduceOnPlateau::new(0.5, 3, 1e-5);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let select = if dev.is_empty() { train } else { dev };
        let mut best = (f64::NEG_INFINITY, self.params.clone());
        let mut stale = 0;
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let grads = {
                    let mut g = Graph::new(&self.params);
                    let l = self.loss(&mut g, &train[i], Some(&mut rng))?;
                    total += g.scalar(l);
                    g.backward(l)
                };
                self.params.accumulate(&grads);
                adam.step(&mut self.params);
            }
            let (f1, dev_loss) = self.evaluate(select)?;
            sched.observe(dev_loss, &mut adam);
            log(&EpochLog {
                model: self.arch.name.clone(),
                epoch,
                train_loss: total / train.len().max(1) as f64,
                dev_loss,
                dev_f1: f1,
                lr: adam.config.lr,
            });
            if f1 > best.0 {
                best = (f1, self.params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            if f1 >= 100.0 && !dev.is_empty() {
                break;
            }
        }
        self.params = best.1;
        Ok(best.0.max(0.0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<TaggerArch> {
        Checkpoint::new(self.arch.clone(), self.params.clone())
    }

    pub fn from_checkpoint(ck: Checkpoint<TaggerArch>) -> Self {
        Self::from_parts(ck.meta, ck.params)
    }
}

impl From<NeuralError> for CrfError {
    fn from(e: NeuralError) -> Self {
        CrfError::Neural(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, tree_to_bio, GeneratorConfig, LabelFamily, LabelSchema};
    use crate::neural::{gradcheck, GradcheckOptions};

    fn small_cfg() -> TaggerConfig {
        TaggerConfig {
            embedding: EmbeddingConfig {
                dim: 8,
                min_freq: 1,
                ..EmbeddingConfig::default()
            },
            hidden_dim: 8,
            epochs: 200,
            patience: 200,
            word_dropout: 0.0,
            locked_dropout: 0.0,
            ..TaggerConfig::default()
        }
    }

    #[test]
    fn masks_forbid_dangling_inside() {
        let tags = parse_tags(&FeatureChannel::bio_tagset(&[Label::new("A"), Label::new("B")]));
        let (trans, start) = bio_masks(&tags);
        let t = tags.len();
        // O -> I-A, B-B -> I-A forbidden; B-A -> I-A allowed.
        assert_eq!(trans[2], f64::NEG_INFINITY);
        assert_eq!(trans[3 * t + 2], f64::NEG_INFINITY);
        assert_eq!(trans[t + 2], 0.0);
        assert_eq!(start, vec![0.0, 0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
    }

    fn gradcheck_tagger(freeze_encoder: bool) -> f64 {
        use rand::Rng;
        let cfg = small_cfg();
        let cfg = TaggerConfig {
            hidden_dim: 3,
            embedding: EmbeddingConfig { dim: 3, ..cfg.embedding.clone() },
            ..cfg
        };
        let mut tagger = CrfTagger::new("t", &[Label::new("Dose")], &[], ["a", "b", "c"], &cfg).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for p in tagger.params.iter_mut() {
            let crf_layer = p.name.starts_with("tagger.") && !p.name.contains("bilstm");
            if crf_layer {
                p.value.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
            }
            p.trainable = crf_layer || !freeze_encoder;
        }
        let ex = TaggedExample {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            features: vec![],
            gold: "B-Dose I-Dose O".parse().unwrap(),
        };
        let model = tagger.clone();
        let report = gradcheck(
            &mut tagger.params,
            |s| {
                let mut g = Graph::new(s);
                let l = model.loss(&mut g, &ex, None).unwrap();
                (g.scalar(l), g.backward(l))
            },
            &GradcheckOptions::default(),
        );
        report.max_rel_error
    }

    #[test]
    fn crf_nll_gradcheck() {
        let crf_only = gradcheck_tagger(true);
        assert!(crf_only < 1e-5, "{crf_only}");
        let full = gradcheck_tagger(false);
        assert!(full < 1e-4, "{full}");
    }

    #[test]
    fn single_tag_loss_is_zero() {
        let t = CrfTagger::new("t", &[], &[], ["x"], &small_cfg()).unwrap();
        let ex = TaggedExample {
            tokens: vec!["x".into(), "y".into()],
            features: vec![],
            gold: BioSequence::all_outside(2),
        };
        let mut g = Graph::new(&t.params);
        let l = t.loss(&mut g, &ex, None).unwrap();
        assert!(g.scalar(l).abs() < 1e-12);
        assert_eq!(t.tag(&ex.tokens, &[]).unwrap(), ex.gold);
    }

    #[test]
    fn overfits_twenty_sentences() {
        let schema = LabelSchema::prescription();
        let gen = GeneratorConfig {
            train: 20,
            dev: 1,
            test: 1,
            ..GeneratorConfig::default()
        };
        let corpus = generate_synthetic_corpus(&gen, 3).unwrap();
        let data: Vec<TaggedExample> = corpus
            .train
            .sentences()
            .map(|t| TaggedExample {
                tokens: t.tokens().to_vec(),
                features: vec![],
                gold: tree_to_bio(t, &schema, LabelFamily::Entity),
            })
            .collect();
        let labels = schema.labels_of(LabelFamily::Entity);
        let tokens: Vec<&str> = data.iter().flat_map(|e| e.tokens.iter().map(String::as_str)).collect();
        let cfg = TaggerConfig {
            epochs: 200,
            ..small_cfg()
        };
        let mut tagger = CrfTagger::new("entity", &labels, &[], tokens, &cfg).unwrap();
        let mut losses = Vec::new();
        let f1 = tagger.train(&data, &[], &cfg, &mut |e| losses.push(e.train_loss)).unwrap();
        assert_eq!(f1, 100.0, "losses {losses:?}");
        assert!(losses[1] < losses[0]);
        for ex in &data {
            let pred = tagger.tag(&ex.tokens, &[]).unwrap();
            assert_eq!(pred, ex.gold);
        }
        let back = CrfTagger::from_checkpoint(
            Checkpoint::from_json(&tagger.to_checkpoint().to_json().unwrap()).unwrap(),
        );
        assert_eq!(back.tag(&data[0].tokens, &[]).unwrap(), data[0].gold);
    }
}
