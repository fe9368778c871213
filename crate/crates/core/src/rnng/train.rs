use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{DecodeConfig, Decoded, Rnng, Session};
use super::{RnngConfig, RnngError};
use crate::corpus::{BioSequence, LabelSchema, Tree};
use crate::eval::{score_corpus, EntitySource};
use crate::neural::{Adam, NodeId, ReduceOnPlateau};
use crate::transition::{oracle_actions, ParserState, TransitionRuleSet};

/// A training or evaluation sentence. `target` is the tree the parser
/// learns to build; `reference` is the fully annotated tree used for
/// scoring (they differ for relation-only targets).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub target: Tree,
    pub reference: Tree,
    pub features: Vec<BioSequence>,
}

impl Example {
    pub fn tokens(&self) -> &[String] {
        self.target.tokens()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnngEpochLog {
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_action_accuracy: f64,
    pub dev_loss: f64,
    pub dev_action_accuracy: f64,
    pub dev_f1: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Teacher-forced statistics of one sentence.
struct Forced {
    loss: NodeId,
    steps: usize,
    correct: usize,
}

impl Rnng {
    /// Oracle action indices of `ex.target`, checked against `rules`.
    pub fn oracle(&self, rules: &TransitionRuleSet, ex: &Example) -> Result<Vec<usize>, RnngError> {
        let mut state = ParserState::new(ex.target.len());
        let mut out = Vec::new();
        for (step, action) in oracle_actions(&ex.target).into_iter().enumerate() {
            let illegal = || RnngError::OracleIllegal {
                sentence: ex.id.clone(),
                step,
                action: action.to_string(),
            };
            if !rules.is_legal(&state, &action) {
                return Err(illegal());
            }
            out.push(self.action_index(&action).ok_or_else(illegal)?);
            state.apply(&action)?;
        }
        Ok(out)
    }

    /// Runs the oracle; the loss covers every step, or only step `only`.
    fn teacher_force(
        &self,
        s: &mut Session<'_>,
        oracle: &[usize],
        alpha: f64,
        only: Option<usize>,
    ) -> Result<Forced, RnngError> {
        let mut state = s.initial_state();
        let mut losses = Vec::with_capacity(oracle.len());
        let mut correct = 0;
        for (t, &gold) in oracle.iter().enumerate() {
            if only.is_some_and(|k| k < t) {
                break;
            }
            let legal = s.legal(&state)?;
            let logits = s.logits(&state);
            let z = s.g.value(logits);
            let best = legal
                .iter()
                .copied()
                .fold(None, |b: Option<usize>, k| match b {
                    Some(j) if z[j] >= z[k] => Some(j),
                    _ => Some(k),
                })
                .expect("non-empty legal set");
            correct += usize::from(best == gold);
            if only.is_none_or(|k| k == t) {
                losses.push(s.g.smoothed_xent(logits, gold, &legal, alpha));
            }
            state = s.step(&state, gold)?;
        }
        let loss = if losses.is_empty() {
            s.g.zeros(1)
        } else {
            s.g.sum(&losses)
        };
        Ok(Forced {
            loss,
            steps: oracle.len(),
            correct,
        })
    }

    /// Summed smoothed cross-entropy of the oracle sequence, without
    /// dropout, and its gradient.
    pub fn sentence_loss(
        &self,
        rules: &TransitionRuleSet,
        ex: &Example,
        alpha: f64,
    ) -> Result<(f64, crate::neural::Gradients), RnngError> {
        self.forced_loss(rules, ex, alpha, None)
    }

    /// Loss of oracle step `step` alone, given the teacher-forced prefix.
    pub fn step_loss(
        &self,
        rules: &TransitionRuleSet,
        ex: &Example,
        step: usize,
        alpha: f64,
    ) -> Result<(f64, crate::neural::Gradients), RnngError> {
        self.forced_loss(rules, ex, alpha, Some(step))
    }

    fn forced_loss(
        &self,
        rules: &TransitionRuleSet,
        ex: &Example,
        alpha: f64,
        only: Option<usize>,
    ) -> Result<(f64, crate::neural::Gradients), RnngError> {
        let oracle = self.oracle(rules, ex)?;
        let mut s = self.session(rules, ex.tokens(), &ex.features, None)?;
        let f = self.teacher_force(&mut s, &oracle, alpha, only)?;
        Ok((s.g.scalar(f.loss), s.g.backward(f.loss)))
    }

    /// Mean loss per sentence and next-action accuracy under teacher forcing.
    pub fn forced_metrics(&self, rules: &TransitionRuleSet, data: &[Example], alpha: f64) -> Result<(f64, f64), RnngError> {
        let per: Vec<(f64, usize, usize)> = data
            .par_iter()
            .map(|ex| {
                let oracle = self.oracle(rules, ex)?;
                let mut s = self.session(rules, ex.tokens(), &ex.features, None)?;
                let f = self.teacher_force(&mut s, &oracle, alpha, None)?;
                Ok((s.g.scalar(f.loss), f.steps, f.correct))
            })
            .collect::<Result<_, RnngError>>()?;
        let loss: f64 = per.iter().map(|p| p.0).sum();
        let steps: usize = per.iter().map(|p| p.1).sum();
        let correct: usize = per.iter().map(|p| p.2).sum();
        Ok((loss / data.len().max(1) as f64, correct as f64 / steps.max(1) as f64))
    }

    /// Decodes every example in parallel, preserving order.
    pub fn decode_all(
        &self,
        rules: &TransitionRuleSet,
        data: &[(&[String], &[BioSequence])],
        cfg: &DecodeConfig,
    ) -> Result<Vec<Decoded>, RnngError> {
        data.par_iter()
            .map(|(tokens, features)| self.decode(rules, tokens, features, cfg))
            .collect()
    }

    /// Relation F1 (percent, oracle entities) of greedy decoding on `data`.
    pub fn relation_f1(&self, rules: &TransitionRuleSet, schema: &LabelSchema, data: &[Example]) -> Result<f64, RnngError> {
        let inputs: Vec<(&[String], &[BioSequence])> = data.iter().map(|e| (e.tokens(), e.features.as_slice())).collect();
        let decoded = self.decode_all(rules, &inputs, &DecodeConfig::greedy())?;
        let gold: Vec<&Tree> = data.iter().map(|e| &e.reference).collect();
        let pred: Vec<&Tree> = decoded.iter().map(|d| &d.tree).collect();
        let (_, _, relations) = score_corpus(&gold, &pred, schema, EntitySource::Oracle)?;
        let c = relations.total();
        Ok(if c.tp + c.fp + c.fn_ == 0 { 100.0 } else { 100.0 * c.f1() })
    }

    /// Teacher-forced training with Adam at batch size one. Keeps the
    /// parameters with the best dev relation F1 (ties go to the later epoch
    /// with lower dev loss).
    pub fn train(
        &mut self,
        name: &str,
        rules: &TransitionRuleSet,
        schema: &LabelSchema,
        train: &[Example],
        dev: &[Example],
        cfg: &RnngConfig,
        log: &mut dyn FnMut(&RnngEpochLog),
    ) -> Result<TrainOutcome, RnngError> {
        cfg.validate()?;
        let oracles: Vec<Vec<usize>> = train.iter().map(|ex| self.oracle(rules, ex)).collect::<Result<_, _>>()?;
        for ex in dev {
            self.oracle(rules, ex)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut adam = Adam::new(cfg.adam);
        let mut sched = ReduceOnPlateau::new(cfg.lr_decay, cfg.lr_patience, 1e-5);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let select = if dev.is_empty() { train } else { dev };
        let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, self.params.clone());
        let mut stale = 0;
        let mut epochs_run = 0;
        let started = std::time::Instant::now();
        for epoch in 1..=cfg.epochs {
            epochs_run = epoch;
            order.shuffle(&mut rng);
            let (mut total, mut steps, mut correct) = (0.0, 0, 0);
            for &i in &order {
                let ex = &train[i];
                let grads = {
                    let mut s = self.session(rules, ex.tokens(), &ex.features, Some(&mut rng))?;
                    let f = self.teacher_force(&mut s, &oracles[i], cfg.smoothing, None)?;
                    total += s.g.scalar(f.loss);
                    steps += f.steps;
                    correct += f.correct;
                    s.g.backward(f.loss)
                };
                self.params.accumulate(&grads);
                adam.step(&mut self.params);
            }
            let (dev_loss, dev_acc) = self.forced_metrics(rules, select, cfg.smoothing)?;
            let dev_f1 = self.relation_f1(rules, schema, select)?;
            sched.observe(dev_loss, &mut adam);
            log(&RnngEpochLog {
                model: name.to_string(),
                epoch,
                train_loss: total / train.len().max(1) as f64,
                train_action_accuracy: correct as f64 / steps.max(1) as f64,
                dev_loss,
                dev_action_accuracy: dev_acc,
                dev_f1,
                lr: adam.config.lr,
                seconds: started.elapsed().as_secs_f64(),
            });
            if dev_f1 > best.0 || (dev_f1 == best.0 && dev_loss < best.1) {
                if dev_f1 > best.0 {
                    stale = 0;
                }
                best = (dev_f1, dev_loss, epoch, self.params.clone());
            } else {
                stale += 1;
            }
            if stale >= cfg.patience {
                break;
            }
        }
        self.params = best.3;
        Ok(TrainOutcome {
            epochs_run,
            best_epoch: best.2,
            best_dev_f1: best.0.max(0.0),
        })
    }
}
