//! Define-by-run tape with reverse-mode accumulation.
//!
//! Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and `backward` is a single reverse sweep. A graph
//! borrows the parameter store immutably; gradients come back as a separate
//! [`Gradients`] value, which keeps the store shareable across threads
//! during inference.

use std::rc::Rc;

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::crf::chain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    /// `Σ W_k x_k + b`.
    Linear {
        terms: Vec<(ParamId, NodeId)>,
        bias: Option<ParamId>,
    },
    Add(NodeId, NodeId),
    Sum(Vec<NodeId>),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Sum of all coordinates.
    Total(NodeId),
    Mask(NodeId, Rc<[f64]>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    /// Gate pre-activations `[i f o g]` and the previous cell; value is `[h c]`.
    LstmCell { gates: NodeId, c_prev: NodeId },
    /// Cross-entropy against `target` over the `legal` coordinates.
    SoftTargetXent {
        logits: NodeId,
        legal: Vec<usize>,
        target: Vec<f64>,
    },
    CrfNll {
        emissions: Vec<NodeId>,
        trans: NodeId,
        start: NodeId,
        stop: NodeId,
        gold: Vec<usize>,
    },
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v[0]
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.values[id.0].len()
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn zeros(&mut self, dim: usize) -> NodeId {
        self.input(vec![0.0; dim])
    }

    /// The whole parameter tensor, flattened.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.store.get(id).value.clone();
        self.push(Op::Param(id), v)
    }

    /// Row `r` of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, r: usize) -> NodeId {
        let v = self.store.get(id).row(r).to_vec();
        self.push(Op::Row(id, r), v)
    }

    /// `Σ_k W_k x_k (+ b)`, each `W_k` stored as `out × in_k`.
    pub fn linear(&mut self, terms: &[(ParamId, NodeId)], bias: Option<ParamId>) -> NodeId {
        let out = match (terms.first(), bias) {
            (Some((w, _)), _) => self.store.get(*w).shape[0],
            (None, Some(b)) => self.store.get(b).len(),
            (None, None) => panic!("linear needs at least one term"),
        };
        let mut y = match bias {
            Some(b) => self.store.get(b).value.clone(),
            None => vec![0.0; out],
        };
        assert_eq!(y.len(), out, "bias length");
        for &(w, x) in terms {
            let w = self.store.get(w);
            let x = &self.values[x.0];
            assert_eq!(w.shape, [out, x.len()], "linear term shape mismatch for {}", w.name);
            for (r, yr) in y.iter_mut().enumerate() {
                let row = &w.value[r * x.len()..(r + 1) * x.len()];
                *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(
            Op::Linear {
                terms: terms.to_vec(),
                bias,
            },
            y,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dim(a), self.dim(b), "add dims");
        let v = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "sum of nothing");
        let mut v = vec![0.0; self.dim(xs[0])];
        for x in xs {
            assert_eq!(self.dim(*x), v.len(), "sum dims");
            add_into(&mut v, &self.values[x.0]);
        }
        self.push(Op::Sum(xs.to_vec()), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.dim(a), self.dim(b), "mul dims");
        let v = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let v = self.values[x.0].iter().map(|a| a * k).collect();
        self.push(Op::Scale(x, k), v)
    }

    /// Scalar sum of every coordinate.
    pub fn total(&mut self, x: NodeId) -> NodeId {
        let v = vec![self.values[x.0].iter().sum()];
        self.push(Op::Total(x), v)
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, x: NodeId, mask: &Rc<[f64]>) -> NodeId {
        assert_eq!(self.dim(x), mask.len(), "mask dims");
        let v = self.values[x.0].iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
        self.push(Op::Mask(x, Rc::clone(mask)), v)
    }

    /// Inverted dropout with a fresh mask.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut impl Rng) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let mask = dropout_mask(self.dim(x), p, rng);
        self.mask(x, &mask)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].iter().map(|&a| sigmoid(a)).collect();
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].iter().map(|a| a.tanh()).collect();
        self.push(Op::Tanh(x), v)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut v = Vec::new();
        for x in xs {
            v.extend_from_slice(&self.values[x.0]);
        }
        self.push(Op::Concat(xs.to_vec()), v)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[x.0][start..start + len].to_vec();
        self.push(Op::Slice(x, start), v)
    }

    /// Fused LSTM cell update. `gates` holds the pre-activations of the
    /// input, forget, output and candidate gates, in that order.
    pub fn lstm_cell(&mut self, gates: NodeId, c_prev: NodeId) -> NodeId {
        let h = self.dim(c_prev);
        assert_eq!(self.dim(gates), 4 * h, "lstm gate dims");
        let z = &self.values[gates.0];
        let cp = &self.values[c_prev.0];
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let o = sigmoid(z[2 * h + k]);
            let g = z[3 * h + k].tanh();
            let c = f * cp[k] + i * g;
            out[k] = o * c.tanh();
            out[h + k] = c;
        }
        self.push(Op::LstmCell { gates, c_prev }, out)
    }

    /// Cross-entropy of `softmax(logits[legal])` against a target
    /// distribution over the same coordinates.
    pub fn soft_target_xent(&mut self, logits: NodeId, legal: &[usize], target: Vec<f64>) -> NodeId {
        assert!(!legal.is_empty(), "no legal classes");
        assert_eq!(legal.len(), target.len(), "target length");
        let z = &self.values[logits.0];
        let sub: Vec<f64> = legal.iter().map(|&k| z[k]).collect();
        let logp = super::loss::log_softmax(&sub);
        let loss = -target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>();
        self.push(
            Op::SoftTargetXent {
                logits,
                legal: legal.to_vec(),
                target,
            },
            vec![loss],
        )
    }

    /// Label-smoothed cross-entropy restricted to `legal` classes; `gold`
    /// is a class index and must be legal.
    pub fn smoothed_xent(&mut self, logits: NodeId, gold: usize, legal: &[usize], alpha: f64) -> NodeId {
        let pos = legal
            .iter()
            .position(|&k| k == gold)
            .expect("gold class must be legal");
        let target = super::loss::smoothed_targets(legal.len(), pos, alpha);
        self.soft_target_xent(logits, legal, target)
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF.
    /// `trans` is a flattened `T × T` node (`from * T + to`); `start` and
    /// `stop` have length `T`. Entries may be `-inf` to forbid moves.
    pub fn crf_nll(
        &mut self,
        emissions: &[NodeId],
        trans: NodeId,
        start: NodeId,
        stop: NodeId,
        gold: &[usize],
    ) -> NodeId {
        assert_eq!(emissions.len(), gold.len(), "gold length");
        let em: Vec<&[f64]> = emissions.iter().map(|e| self.value(*e)).collect();
        let scores = chain::ChainScores {
            emissions: &em,
            trans: self.value(trans),
            start: self.value(start),
            stop: self.value(stop),
        };
        let nll = scores.log_partition() - scores.path_score(gold);
        self.push(
            Op::CrfNll {
                emissions: emissions.to_vec(),
                trans,
                start,
                stop,
                gold: gold.to_vec(),
            },
            vec![nll],
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.dim(loss), 1, "backward needs a scalar");
        let mut grads = Gradients::new(self.store.len());
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];

        fn acc<'a>(adj: &'a mut [Vec<f64>], values: &[Vec<f64>], id: NodeId) -> &'a mut Vec<f64> {
            let slot = &mut adj[id.0];
            if slot.is_empty() {
                *slot = vec![0.0; values[id.0].len()];
            }
            slot
        }

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let vals = &self.values;
            match &self.ops[i] {
                Op::Input => {}
                Op::Param(p) => add_into(grads.slot(*p, g.len()), &g),
                Op::Row(p, r) => {
                    let t = self.store.get(*p);
                    let c = t.cols();
                    add_into(&mut grads.slot(*p, t.len())[r * c..(r + 1) * c], &g);
                }
                Op::Linear { terms, bias } => {
                    if let Some(b) = bias {
                        add_into(grads.slot(*b, g.len()), &g);
                    }
                    for &(w, x) in terms {
                        let wt = self.store.get(w);
                        let xv = &vals[x.0];
                        let n = xv.len();
                        let gw = grads.slot(w, wt.len());
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (a, b) in gw[r * n..(r + 1) * n].iter_mut().zip(xv) {
                                *a += gr * b;
                            }
                        }
                        if matches!(self.ops[x.0], Op::Input) {
                            continue;
                        }
                        let gx = acc(&mut adj, vals, x);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (a, b) in gx.iter_mut().zip(&wt.value[r * n..(r + 1) * n]) {
                                *a += gr * b;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, vals, *a), &g);
                    add_into(acc(&mut adj, vals, *b), &g);
                }
                Op::Sum(xs) => {
                    for x in xs {
                        add_into(acc(&mut adj, vals, *x), &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (vals[a.0].clone(), vals[b.0].clone());
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] * bv[k];
                    }
                    for (k, d) in acc(&mut adj, vals, *b).iter_mut().enumerate() {
                        *d += g[k] * av[k];
                    }
                }
                Op::Scale(x, s) => {
                    for (d, gk) in acc(&mut adj, vals, *x).iter_mut().zip(&g) {
                        *d += s * gk;
                    }
                }
                Op::Total(x) => {
                    for d in acc(&mut adj, vals, *x).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mask(x, m) => {
                    for ((d, gk), mk) in acc(&mut adj, vals, *x).iter_mut().zip(&g).zip(m.iter()) {
                        *d += gk * mk;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &vals[i];
                    for ((d, gk), yk) in acc(&mut adj, vals, *x).iter_mut().zip(&g).zip(y) {
                        *d += gk * yk * (1.0 - yk);
                    }
                }
                Op::Tanh(x) => {
                    let y = &vals[i];
                    for ((d, gk), yk) in acc(&mut adj, vals, *x).iter_mut().zip(&g).zip(y) {
                        *d += gk * (1.0 - yk * yk);
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let n = vals[x.0].len();
                        add_into(acc(&mut adj, vals, *x), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let n = g.len();
                    add_into(&mut acc(&mut adj, vals, *x)[*start..start + n], &g);
                }
                Op::LstmCell { gates, c_prev } => {
                    let h = vals[c_prev.0].len();
                    let z = &vals[gates.0];
                    let cp = &vals[c_prev.0];
                    let out = &vals[i];
                    let mut dz = vec![0.0; 4 * h];
                    let mut dcp = vec![0.0; h];
                    for k in 0..h {
                        let ig = sigmoid(z[k]);
                        let fg = sigmoid(z[h + k]);
                        let og = sigmoid(z[2 * h + k]);
                        let cg = z[3 * h + k].tanh();
                        let c = out[h + k];
                        let tc = c.tanh();
                        let dh = g[k];
                        let dc = g[h + k] + dh * og * (1.0 - tc * tc);
                        dz[k] = dc * cg * ig * (1.0 - ig);
                        dz[h + k] = dc * cp[k] * fg * (1.0 - fg);
                        dz[2 * h + k] = dh * tc * og * (1.0 - og);
                        dz[3 * h + k] = dc * ig * (1.0 - cg * cg);
                        dcp[k] = dc * fg;
                    }
                    add_into(acc(&mut adj, vals, *gates), &dz);
                    add_into(acc(&mut adj, vals, *c_prev), &dcp);
                }
                Op::SoftTargetXent {
                    logits,
                    legal,
                    target,
                } => {
                    let z = &vals[logits.0];
                    let sub: Vec<f64> = legal.iter().map(|&k| z[k]).collect();
                    let p = super::loss::softmax(&sub);
                    let d = acc(&mut adj, vals, *logits);
                    for (j, &k) in legal.iter().enumerate() {
                        d[k] += g[0] * (p[j] - target[j]);
                    }
                }
                Op::CrfNll {
                    emissions,
                    trans,
                    start,
                    stop,
                    gold,
                } => {
                    let em: Vec<&[f64]> = emissions.iter().map(|e| vals[e.0].as_slice()).collect();
                    let scores = chain::ChainScores {
                        emissions: &em,
                        trans: &vals[trans.0],
                        start: &vals[start.0],
                        stop: &vals[stop.0],
                    };
                    let m = scores.marginals();
                    let t = scores.num_tags();
                    let mut d_trans = m.transitions;
                    let mut d_start = m.unary[0].clone();
                    let mut d_stop = m.unary[m.unary.len() - 1].clone();
                    let mut d_em = m.unary;
                    for (pos, &y) in gold.iter().enumerate() {
                        d_em[pos][y] -= 1.0;
                        if pos > 0 {
                            d_trans[gold[pos - 1] * t + y] -= 1.0;
                        }
                    }
                    d_start[gold[0]] -= 1.0;
                    d_stop[gold[gold.len() - 1]] -= 1.0;
                    let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= g[0]);
                    for (e, mut d) in emissions.iter().zip(d_em) {
                        scale(&mut d);
                        add_into(acc(&mut adj, vals, *e), &d);
                    }
                    for (node, mut d) in [(*trans, d_trans), (*start, d_start), (*stop, d_stop)] {
                        scale(&mut d);
                        add_into(acc(&mut adj, vals, node), &d);
                    }
                }
            }
        }
        grads
    }
}

/// Inverted-dropout mask: each coordinate is kept with probability `1 - p`
/// and scaled by `1 / (1 - p)`.
pub fn dropout_mask(dim: usize, p: f64, rng: &mut impl Rng) -> Rc<[f64]> {
    let keep = 1.0 - p;
    (0..dim)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}
