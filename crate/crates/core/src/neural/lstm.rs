use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{Init, ParamId, ParamStore};
use super::NeuralError;

/// Gate weights for one LSTM cell. Rows of `wx`, `wh` and `b` are grouped
/// as input, forget, output and candidate gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmCellParams {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let h = hidden_dim;
        let wx = store.add(&format!("{name}.wx"), &[4 * h, input_dim], Init::FanIn, rng);
        let wh = store.add(&format!("{name}.wh"), &[4 * h, h], Init::FanIn, rng);
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(1.0);
        let b = store.insert(&format!("{name}.b"), &[4 * h], bias, true);
        Self {
            input_dim,
            hidden_dim,
            wx,
            wh,
            b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    pub fn zeros(g: &mut Graph<'_>, hidden_dim: usize) -> Self {
        let z = g.zeros(hidden_dim);
        Self { h: z, c: z }
    }
}

pub fn lstm_step(g: &mut Graph<'_>, cell: &LstmCellParams, x: NodeId, prev: LstmState) -> Result<LstmState, NeuralError> {
    if g.dim(x) != cell.input_dim {
        return Err(NeuralError::DimMismatch {
            expected: cell.input_dim,
            found: g.dim(x),
        });
    }
    if g.dim(prev.h) != cell.hidden_dim || g.dim(prev.c) != cell.hidden_dim {
        return Err(NeuralError::DimMismatch {
            expected: cell.hidden_dim,
            found: g.dim(prev.h),
        });
    }
    let gates = g.linear(&[(cell.wx, x), (cell.wh, prev.h)], Some(cell.b));
    let hc = g.lstm_cell(gates, prev.c);
    let h = g.slice(hc, 0, cell.hidden_dim);
    let c = g.slice(hc, cell.hidden_dim, cell.hidden_dim);
    Ok(LstmState { h, c })
}

/// Runs a cell over a sequence from the zero state; returns every state.
pub fn lstm_run(g: &mut Graph<'_>, cell: &LstmCellParams, xs: &[NodeId]) -> Result<Vec<LstmState>, NeuralError> {
    let mut state = LstmState::zeros(g, cell.hidden_dim);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        state = lstm_step(g, cell, x, state)?;
        out.push(state);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            fwd: LstmCellParams::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng),
            bwd: LstmCellParams::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }

    pub fn encode(&self, g: &mut Graph<'_>, xs: &[NodeId]) -> Result<Vec<NodeId>, NeuralError> {
        bilstm_encode(g, &self.fwd, &self.bwd, xs)
    }
}

/// Per-position `forward ‖ backward` hidden states.
pub fn bilstm_encode(
    g: &mut Graph<'_>,
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    xs: &[NodeId],
) -> Result<Vec<NodeId>, NeuralError> {
    let (f, b) = bilstm_states(g, fwd, bwd, xs)?;
    Ok(f.iter().zip(&b).map(|(f, b)| g.concat(&[f.h, b.h])).collect())
}

/// Forward states in reading order and backward states aligned to the same
/// positions (so `b[0]` has read the whole sequence).
pub fn bilstm_states(
    g: &mut Graph<'_>,
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    xs: &[NodeId],
) -> Result<(Vec<LstmState>, Vec<LstmState>), NeuralError> {
    if xs.is_empty() {
        return Err(NeuralError::EmptySequence);
    }
    let f = lstm_run(g, fwd, xs)?;
    let rev: Vec<NodeId> = xs.iter().rev().copied().collect();
    let mut b = lstm_run(g, bwd, &rev)?;
    b.reverse();
    Ok((f, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{gradcheck, GradcheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = LstmCellParams::new(&mut store, "l", 3, 4, &mut rng);
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, -2.0, 3.0]);
        let s0 = LstmState::zeros(&mut g, 4);
        let s = lstm_step(&mut g, &cell, x, s0).unwrap();
        assert_eq!(g.value(s.h), &[0.0; 4]);
    }

    #[test]
    fn deterministic_and_dim_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = LstmCellParams::new(&mut store, "l", 3, 4, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(vec![0.1, 0.2, 0.3]);
        let s0 = LstmState::zeros(&mut g, 4);
        let a = lstm_step(&mut g, &cell, x, s0).unwrap();
        let b = lstm_step(&mut g, &cell, x, s0).unwrap();
        assert_eq!(g.value(a.h), g.value(b.h));
        let bad = g.input(vec![0.0; 2]);
        assert!(matches!(
            lstm_step(&mut g, &cell, bad, s0),
            Err(NeuralError::DimMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(bilstm_encode(&mut g, &cell, &cell, &[]), Err(NeuralError::EmptySequence)));
    }

    #[test]
    fn lstm_cell_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = LstmCellParams::new(&mut store, "l", 3, 4, &mut rng);
        let x = store.insert("x", &[3], rand_vec(&mut rng, 3), true);
        let h0 = store.insert("h0", &[4], rand_vec(&mut rng, 4), true);
        let c0 = store.insert("c0", &[4], rand_vec(&mut rng, 4), true);
        let probe = rand_vec(&mut rng, 8);
        let report = gradcheck(
            &mut store,
            |s| {
                let mut g = Graph::new(s);
                let (x, h, c) = (g.param(x), g.param(h0), g.param(c0));
                let st = lstm_step(&mut g, &cell, x, LstmState { h, c }).unwrap();
                let hc = g.concat(&[st.h, st.c]);
                let w = g.input(probe.clone());
                let prod = g.mul(hc, w);
                let loss = g.total(prod);
                (g.scalar(loss), g.backward(loss))
            },
            &GradcheckOptions::default(),
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn bilstm_gradcheck_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "bi", 3, 2, &mut rng);
        let xs: Vec<ParamId> = (0..3)
            .map(|i| store.insert(&format!("x{i}"), &[3], rand_vec(&mut rng, 3), true))
            .collect();
        let probe = rand_vec(&mut rng, 12);
        let report = gradcheck(
            &mut store,
            |s| {
                let mut g = Graph::new(s);
                let inputs: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
                let out = bi.encode(&mut g, &inputs).unwrap();
                let cat = g.concat(&out);
                let w = g.input(probe.clone());
                let prod = g.mul(cat, w);
                let loss = g.total(prod);
                (g.scalar(loss), g.backward(loss))
            },
            &GradcheckOptions::default(),
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        // Length one: forward and backward each read the single token.
        let mut g = Graph::new(&store);
        let x = g.param(xs[0]);
        let out = bi.encode(&mut g, &[x]).unwrap();
        let s0 = LstmState::zeros(&mut g, 2);
        let f = lstm_step(&mut g, &bi.fwd, x, s0).unwrap();
        let b = lstm_step(&mut g, &bi.bwd, x, s0).unwrap();
        let expect: Vec<f64> = g.value(f.h).iter().chain(g.value(b.h)).copied().collect();
        assert_eq!(g.value(out[0]), expect.as_slice());

        // Swapping the cells and reversing the input mirrors the outputs.
        let inputs: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
        let rev: Vec<NodeId> = inputs.iter().rev().copied().collect();
        let a = bilstm_encode(&mut g, &bi.fwd, &bi.bwd, &inputs).unwrap();
        let r = bilstm_encode(&mut g, &bi.bwd, &bi.fwd, &rev).unwrap();
        for i in 0..3 {
            let (av, rv) = (g.value(a[i]), g.value(r[2 - i]));
            assert_eq!(&av[..2], &rv[2..]);
            assert_eq!(&av[2..], &rv[..2]);
        }
    }
}
