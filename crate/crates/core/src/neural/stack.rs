use super::graph::{Graph, NodeId};
use super::lstm::{lstm_step, LstmCellParams, LstmState};
use super::NeuralError;

/// An LSTM over a stack. States are never discarded: `pop` only moves the
/// pointer back to the predecessor of the exposed state.
#[derive(Debug, Clone)]
pub struct StackLstm {
    cell: LstmCellParams,
    states: Vec<LstmState>,
    prev: Vec<usize>,
    pointer: usize,
}

impl StackLstm {
    /// A fresh stack whose initial state is all zeros.
    pub fn new(g: &mut Graph<'_>, cell: LstmCellParams) -> Self {
        Self {
            cell,
            states: vec![LstmState::zeros(g, cell.hidden_dim)],
            prev: vec![0],
            pointer: 0,
        }
    }

    pub fn push(&mut self, g: &mut Graph<'_>, x: NodeId) -> Result<(), NeuralError> {
        let next = lstm_step(g, &self.cell, x, self.states[self.pointer])?;
        self.states.push(next);
        self.prev.push(self.pointer);
        self.pointer = self.states.len() - 1;
        Ok(())
    }

    pub fn pop(&mut self) -> Result<(), NeuralError> {
        if self.pointer == 0 {
            return Err(NeuralError::EmptyStack);
        }
        self.pointer = self.prev[self.pointer];
        Ok(())
    }

    /// Hidden state at the pointer.
    pub fn hidden(&self) -> NodeId {
        self.states[self.pointer].h
    }

    pub fn pointer(&self) -> usize {
        self.pointer
    }

    /// Index of the state the exposed one was computed from.
    pub fn predecessor(&self) -> usize {
        self.prev[self.pointer]
    }

    /// Every state computed so far, including popped ones.
    pub fn history_len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pointer == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{gradcheck, GradcheckOptions};
    use crate::neural::params::{ParamId, ParamStore};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, n_inputs: usize) -> (ParamStore, LstmCellParams, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCellParams::new(&mut store, "stack", 2, 3, &mut rng);
        let xs = (0..n_inputs)
            .map(|i| {
                let v = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                store.insert(&format!("x{i}"), &[2], v, true)
            })
            .collect();
        (store, cell, xs)
    }

    #[test]
    fn pop_exposes_earlier_hidden() {
        let (store, cell, xs) = setup(0, 3);
        let mut g = Graph::new(&store);
        let x: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
        let mut s = StackLstm::new(&mut g, cell);
        s.push(&mut g, x[0]).unwrap();
        s.push(&mut g, x[1]).unwrap();
        let after_ab = g.value(s.hidden()).to_vec();
        s.push(&mut g, x[2]).unwrap();
        s.pop().unwrap();
        assert_eq!(g.value(s.hidden()), after_ab.as_slice());
        assert_eq!(s.history_len(), 4);
    }

    #[test]
    fn push_after_pop_starts_from_initial_state() {
        let (store, cell, xs) = setup(1, 2);
        let mut g = Graph::new(&store);
        let x: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
        let mut s = StackLstm::new(&mut g, cell);
        assert!(matches!(s.pop(), Err(NeuralError::EmptyStack)));
        s.push(&mut g, x[0]).unwrap();
        s.pop().unwrap();
        s.push(&mut g, x[1]).unwrap();
        assert_eq!(s.predecessor(), 0);
    }

    #[test]
    fn stack_gradcheck() {
        let (mut store, cell, xs) = setup(2, 3);
        let report = gradcheck(
            &mut store,
            |st| {
                let mut g = Graph::new(st);
                let x: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
                let mut s = StackLstm::new(&mut g, cell);
                s.push(&mut g, x[0]).unwrap();
                s.push(&mut g, x[1]).unwrap();
                s.pop().unwrap();
                s.push(&mut g, x[2]).unwrap();
                let a = g.total(s.hidden());
                s.pop().unwrap();
                let b = g.total(s.hidden());
                let b = g.scale(b, 0.5);
                let loss = g.add(a, b);
                (g.scalar(loss), g.backward(loss))
            },
            &GradcheckOptions::default(),
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    proptest! {
        #[test]
        fn exposed_hidden_matches_replay(ops in proptest::collection::vec(any::<bool>(), 0..24)) {
            let (store, cell, xs) = setup(3, 24);
            let mut g = Graph::new(&store);
            let x: Vec<NodeId> = xs.iter().map(|&p| g.param(p)).collect();
            let mut s = StackLstm::new(&mut g, cell);
            let mut surviving: Vec<usize> = Vec::new();
            for (i, push) in ops.iter().enumerate() {
                if *push || surviving.is_empty() {
                    s.push(&mut g, x[i]).unwrap();
                    surviving.push(i);
                } else {
                    s.pop().unwrap();
                    surviving.pop();
                }
            }
            let mut fresh = StackLstm::new(&mut g, cell);
            for &i in &surviving {
                fresh.push(&mut g, x[i]).unwrap();
            }
            prop_assert_eq!(g.value(s.hidden()), g.value(fresh.hidden()));
        }
    }
}
