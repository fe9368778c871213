use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{decode_best, SearchError, SearchSpace};
use super::{RnngConfig, RnngError};
use crate::corpus::{BioSequence, Label, Tree};
use crate::encoder::{locked_dropout, EmbeddingProvider, Encoder, FeatureChannel};
use crate::neural::loss::log_softmax;
use crate::neural::{
    dropout_mask, lstm_step, BiLstm, Checkpoint, Composer, Graph, Init, LstmCellParams, LstmState, NodeId, ParamId,
    ParamStore, StackLstm,
};
use crate::transition::{Action, ParserState, TransitionRuleSet};

pub const SHIFT: usize = 0;
pub const REDUCE: usize = 1;

/// Parameter layout. Action indices are `SHIFT = 0`, `REDUCE = 1` and
/// `2 + i` for opening `labels[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnngArch {
    pub labels: Vec<Label>,
    pub encoder: Encoder,
    pub token_bilstm: BiLstm,
    pub token_proj_w: ParamId,
    pub token_proj_b: ParamId,
    pub buffer: LstmCellParams,
    pub history: LstmCellParams,
    pub stack: LstmCellParams,
    pub composer: Composer,
    pub label_emb: ParamId,
    pub action_emb: ParamId,
    pub summary_buf: ParamId,
    pub summary_stack: ParamId,
    pub summary_hist: ParamId,
    pub summary_b: ParamId,
    /// Weight on the next token's representation, when enabled.
    #[serde(default)]
    pub summary_next: Option<ParamId>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct Rnng {
    pub arch: RnngArch,
    pub params: ParamStore,
    label_index: HashMap<Label, usize>,
}

/// Result of decoding one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tree: Tree,
    pub actions: Vec<Action>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// 1 means greedy decoding.
    pub beam_size: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 3 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { beam_size: 1 }
    }
}

/// Hard cap on the number of actions for an `n`-token sentence.
pub fn max_actions(n: usize) -> usize {
    8 * n + 32
}

impl Rnng {
    pub fn new<'a>(
        labels: Vec<Label>,
        channels: &[(String, Vec<String>)],
        train_tokens: impl IntoIterator<Item = &'a str>,
        cfg: &RnngConfig,
    ) -> Result<Self, RnngError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::new();
        let provider = EmbeddingProvider::new(&mut p, &cfg.embedding, train_tokens, &mut rng)?;
        let channels = channels
            .iter()
            .map(|(name, tags)| FeatureChannel::new(&mut p, name, tags.clone(), &mut rng))
            .collect();
        let encoder = Encoder {
            provider,
            channels,
            word_dropout: cfg.word_dropout,
        };
        let in_dim = encoder.output_dim(&p);
        let d = cfg.stack_input;
        let token_bilstm = BiLstm::new(&mut p, "rnng.tokens", in_dim, cfg.token_hidden, &mut rng);
        let token_proj_w = p.add("rnng.tokens.proj.w", &[d, token_bilstm.output_dim()], Init::FanIn, &mut rng);
        let token_proj_b = p.add("rnng.tokens.proj.b", &[d], Init::Zeros, &mut rng);
        let buffer = LstmCellParams::new(&mut p, "rnng.buffer", d, cfg.buffer_hidden, &mut rng);
        let history = LstmCellParams::new(&mut p, "rnng.history", cfg.action_dim, cfg.history_hidden, &mut rng);
        let stack = LstmCellParams::new(&mut p, "rnng.stack", d, cfg.stack_hidden, &mut rng);
        let composer = Composer::new(&mut p, "rnng.compose", cfg.composition, d, cfg.compose_hidden, &mut rng);
        let num_actions = 2 + labels.len();
        let label_emb = p.add("rnng.labels", &[labels.len().max(1), d], Init::Uniform(0.1), &mut rng);
        let action_emb = p.add("rnng.actions", &[num_actions, cfg.action_dim], Init::Uniform(0.1), &mut rng);
        let s = cfg.summary_dim;
        let summary_buf = p.add("rnng.summary.buffer", &[s, cfg.buffer_hidden], Init::FanIn, &mut rng);
        let summary_stack = p.add("rnng.summary.stack", &[s, cfg.stack_hidden], Init::FanIn, &mut rng);
        let summary_hist = p.add("rnng.summary.history", &[s, cfg.history_hidden], Init::FanIn, &mut rng);
        let summary_b = p.add("rnng.summary.b", &[s], Init::Zeros, &mut rng);
        let summary_next = cfg
            .lookahead
            .then(|| p.add("rnng.summary.next", &[s, d], Init::FanIn, &mut rng));
        let out_w = p.add("rnng.out.w", &[num_actions, s], Init::FanIn, &mut rng);
        let out_b = p.add("rnng.out.b", &[num_actions], Init::Zeros, &mut rng);
        let arch = RnngArch {
            labels,
            encoder,
            token_bilstm,
            token_proj_w,
            token_proj_b,
            buffer,
            history,
            stack,
            composer,
            label_emb,
            action_emb,
            summary_buf,
            summary_stack,
            summary_hist,
            summary_b,
            summary_next,
            out_w,
            out_b,
            dropout: cfg.dropout,
        };
        Ok(Self::from_parts(arch, p))
    }

    pub fn from_parts(arch: RnngArch, params: ParamStore) -> Self {
        let label_index = arch.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            arch,
            params,
            label_index,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<RnngArch> {
        Checkpoint::new(self.arch.clone(), self.params.clone())
    }

    pub fn from_checkpoint(ck: Checkpoint<RnngArch>) -> Self {
        Self::from_parts(ck.meta, ck.params)
    }

    pub fn num_actions(&self) -> usize {
        2 + self.arch.labels.len()
    }

    pub fn action_index(&self, action: &Action) -> Option<usize> {
        match action {
            Action::Shift => Some(SHIFT),
            Action::Reduce => Some(REDUCE),
            Action::OpenNt(l) => self.label_index.get(l).map(|i| 2 + i),
        }
    }

    pub fn action(&self, index: usize) -> Action {
        match index {
            SHIFT => Action::Shift,
            REDUCE => Action::Reduce,
            i => Action::OpenNt(self.arch.labels[i - 2].clone()),
        }
    }

    /// Starts a graph for one sentence and encodes its tokens. With `rng`
    /// set, dropout is active.
    pub fn session<'m>(
        &'m self,
        rules: &'m TransitionRuleSet,
        tokens: &[String],
        features: &[BioSequence],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Session<'m>, RnngError> {
        let a = &self.arch;
        let mut g = Graph::new(&self.params);
        let mut rng = rng.map(|r| ChaCha8Rng::seed_from_u64(r.gen()));
        let xs = a
            .encoder
            .encode(&mut g, tokens, features, rng.as_mut().map(|r| r as &mut dyn rand::RngCore))?;
        let xs = match rng.as_mut() {
            Some(r) => locked_dropout(&mut g, &xs, a.dropout, r),
            None => xs,
        };
        let hs = a.token_bilstm.encode(&mut g, &xs)?;
        let token_reprs: Vec<NodeId> = hs
            .iter()
            .map(|&h| {
                let y = g.linear(&[(a.token_proj_w, h)], Some(a.token_proj_b));
                g.tanh(y)
            })
            .collect();
        // Right-to-left: buffer[i] has read tokens n-1 down to i.
        let n = tokens.len();
        let empty = LstmState::zeros(&mut g, a.buffer.hidden_dim);
        let mut buffer = vec![empty.h; n + 1];
        let mut state = empty;
        for i in (0..n).rev() {
            state = lstm_step(&mut g, &a.buffer, token_reprs[i], state)?;
            buffer[i] = state.h;
        }
        let summary_mask = rng.as_mut().map(|r| dropout_mask(a.summary_dim(&self.params), a.dropout, r));
        Ok(Session {
            model: self,
            rules,
            g,
            token_reprs,
            buffer,
            summary_mask,
        })
    }

    /// Decodes one sentence under `rules`.
    pub fn decode(
        &self,
        rules: &TransitionRuleSet,
        tokens: &[String],
        features: &[BioSequence],
        cfg: &DecodeConfig,
    ) -> Result<Decoded, RnngError> {
        if tokens.is_empty() {
            return Ok(Decoded {
                tree: Tree::unlabeled(Vec::new()).expect("empty sentence"),
                actions: Vec::new(),
                log_prob: 0.0,
            });
        }
        let mut session = self.session(rules, tokens, features, None)?;
        let hyp = decode_best(&mut session, cfg.beam_size.max(1), max_actions(tokens.len())).map_err(|e| match e {
            SearchError::Space(e) => e,
            SearchError::Failed(f) => RnngError::Search(f),
        })?;
        Ok(Decoded {
            tree: hyp.state.parser.to_tree(tokens)?,
            actions: hyp.actions.iter().map(|&i| self.action(i)).collect(),
            log_prob: hyp.log_prob,
        })
    }
}

impl RnngArch {
    fn summary_dim(&self, store: &ParamStore) -> usize {
        store.get(self.summary_b).len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    repr: NodeId,
    open: bool,
}

/// Parser state plus the recurrent states that summarize it.
#[derive(Debug, Clone)]
pub struct RnngState {
    pub parser: ParserState,
    stack: StackLstm,
    entries: Vec<Entry>,
    history: LstmState,
}

impl RnngState {
    /// Number of entries on the stack (open labels, tokens and composed
    /// constituents).
    pub fn stack_depth(&self) -> usize {
        self.entries.len()
    }

    pub fn stack_pointer(&self) -> usize {
        self.stack.pointer()
    }
}

/// One sentence's computation graph.
pub struct Session<'m> {
    pub model: &'m Rnng,
    pub rules: &'m TransitionRuleSet,
    pub g: Graph<'m>,
    token_reprs: Vec<NodeId>,
    buffer: Vec<NodeId>,
    summary_mask: Option<Rc<[f64]>>,
}

impl<'m> Session<'m> {
    pub fn initial_state(&mut self) -> RnngState {
        let a = &self.model.arch;
        RnngState {
            parser: ParserState::new(self.token_reprs.len()),
            stack: StackLstm::new(&mut self.g, a.stack),
            entries: Vec::new(),
            history: LstmState::zeros(&mut self.g, a.history.hidden_dim),
        }
    }

    /// Buffer representation at the current position.
    pub fn buffer_repr(&self, state: &RnngState) -> NodeId {
        self.buffer[state.parser.buffer_pos()]
    }

    /// `tanh(W [buffer ‖ stack ‖ history] + b)`.
    pub fn representation(&mut self, state: &RnngState) -> NodeId {
        let a = &self.model.arch;
        let buf = self.buffer_repr(state);
        let mut terms = vec![
            (a.summary_buf, buf),
            (a.summary_stack, state.stack.hidden()),
            (a.summary_hist, state.history.h),
        ];
        if let (Some(w), Some(&next)) = (a.summary_next, self.token_reprs.get(state.parser.buffer_pos())) {
            terms.push((w, next));
        }
        let y = self.g.linear(&terms, Some(a.summary_b));
        let u = self.g.tanh(y);
        match &self.summary_mask {
            Some(m) => {
                let m = m.clone();
                self.g.mask(u, &m)
            }
            None => u,
        }
    }

    pub fn logits(&mut self, state: &RnngState) -> NodeId {
        let u = self.representation(state);
        let a = &self.model.arch;
        self.g.linear(&[(a.out_w, u)], Some(a.out_b))
    }

    /// Indices of the legal actions, in the rule set's order.
    pub fn legal(&self, state: &RnngState) -> Result<Vec<usize>, RnngError> {
        let legal = self.rules.legal_actions(&state.parser);
        if legal.is_empty() && !state.parser.is_finished() {
            return Err(RnngError::EmptyMask);
        }
        legal
            .iter()
            .map(|a| {
                self.model
                    .action_index(a)
                    .ok_or_else(|| RnngError::UnknownLabel(a.to_string()))
            })
            .collect()
    }

    /// Log-probabilities of `legal` actions from a logits node.
    pub fn log_probs(&self, logits: NodeId, legal: &[usize]) -> Vec<f64> {
        let z = self.g.value(logits);
        let sub: Vec<f64> = legal.iter().map(|&k| z[k]).collect();
        log_softmax(&sub)
    }

    /// Applies an action and updates the stack, composition and history.
    pub fn step(&mut self, state: &RnngState, action: usize) -> Result<RnngState, RnngError> {
        let a = &self.model.arch;
        let act = self.model.action(action);
        if !self.rules.is_legal(&state.parser, &act) {
            state.parser.check(&act)?;
            return Err(RnngError::IllegalAction(act.to_string()));
        }
        let mut next = state.clone();
        next.parser.apply(&act)?;
        match action {
            SHIFT => {
                let x = self.token_reprs[state.parser.buffer_pos()];
                next.stack.push(&mut self.g, x)?;
                next.entries.push(Entry { repr: x, open: false });
            }
            REDUCE => {
                let open_at = next
                    .entries
                    .iter()
                    .rposition(|e| e.open)
                    .expect("REDUCE is legal only with an open constituent");
                let popped: Vec<Entry> = next.entries.drain(open_at..).collect();
                for _ in &popped {
                    next.stack.pop()?;
                }
                let children: Vec<NodeId> = popped[1..].iter().map(|e| e.repr).collect();
                let composed = a.composer.compose(&mut self.g, &children, popped[0].repr)?;
                next.stack.push(&mut self.g, composed)?;
                next.entries.push(Entry {
                    repr: composed,
                    open: false,
                });
            }
            open => {
                let x = self.g.row(a.label_emb, open - 2);
                next.stack.push(&mut self.g, x)?;
                next.entries.push(Entry { repr: x, open: true });
            }
        }
        let e = self.g.row(a.action_emb, action);
        next.history = lstm_step(&mut self.g, &a.history, e, state.history)?;
        Ok(next)
    }
}

impl SearchSpace for Session<'_> {
    type State = RnngState;
    type Error = RnngError;

    fn initial(&mut self) -> Result<RnngState, RnngError> {
        Ok(self.initial_state())
    }

    fn is_final(&self, state: &RnngState) -> bool {
        state.parser.is_finished()
    }

    fn expand(&mut self, state: &RnngState) -> Result<Vec<(usize, f64)>, RnngError> {
        let legal = self.legal(state)?;
        let logits = self.logits(state);
        let lp = self.log_probs(logits, &legal);
        Ok(legal.into_iter().zip(lp).collect())
    }

    fn advance(&mut self, state: &RnngState, action: usize) -> Result<RnngState, RnngError> {
        self.step(state, action)
    }
}
