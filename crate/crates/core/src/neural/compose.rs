use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::lstm::{bilstm_states, BiLstm};
use super::params::{Init, ParamId, ParamStore};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    Sum,
    #[default]
    Bilstm,
}

impl std::str::FromStr for CompositionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Self::Sum),
            "bilstm" => Ok(Self::Bilstm),
            other => Err(format!("unknown composition mode `{other}` (expected sum or bilstm)")),
        }
    }
}

/// Collapses a finished constituent (label embedding plus children) into a
/// single vector of the same dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composer {
    pub mode: CompositionMode,
    pub dim: usize,
    bilstm: Option<BiLstm>,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl Composer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        mode: CompositionMode,
        dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (bilstm, agg_dim) = match mode {
            CompositionMode::Sum => (None, dim),
            CompositionMode::Bilstm => (
                Some(BiLstm::new(store, &format!("{name}.bilstm"), dim, hidden_dim, rng)),
                2 * hidden_dim,
            ),
        };
        let proj_w = store.add(&format!("{name}.proj.w"), &[dim, agg_dim], Init::FanIn, rng);
        let proj_b = store.add(&format!("{name}.proj.b"), &[dim], Init::Zeros, rng);
        Self {
            mode,
            dim,
            bilstm,
            proj_w,
            proj_b,
        }
    }

    /// The constituent vector before projection.
    pub fn aggregate(&self, g: &mut Graph<'_>, children: &[NodeId], label: NodeId) -> Result<NodeId, NeuralError> {
        if children.is_empty() {
            return Err(NeuralError::EmptySequence);
        }
        match self.bilstm {
            None => {
                let mut all = Vec::with_capacity(children.len() + 1);
                all.push(label);
                all.extend_from_slice(children);
                Ok(g.sum(&all))
            }
            Some(bi) => {
                let mut seq = Vec::with_capacity(children.len() + 2);
                seq.push(label);
                seq.extend_from_slice(children);
                seq.push(label);
                let (f, b) = bilstm_states(g, &bi.fwd, &bi.bwd, &seq)?;
                let last = f.last().expect("non-empty").h;
                Ok(g.concat(&[last, b[0].h]))
            }
        }
    }

    pub fn compose(&self, g: &mut Graph<'_>, children: &[NodeId], label: NodeId) -> Result<NodeId, NeuralError> {
        let agg = self.aggregate(g, children, label)?;
        let y = g.linear(&[(self.proj_w, agg)], Some(self.proj_b));
        Ok(g.tanh(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{gradcheck, GradcheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(mode: CompositionMode) -> (ParamStore, Composer, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let comp = Composer::new(&mut store, "comp", mode, 3, 2, &mut rng);
        let vs = (0..4)
            .map(|i| {
                let v = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                store.insert(&format!("v{i}"), &[3], v, true)
            })
            .collect();
        (store, comp, vs)
    }

    #[test]
    fn sum_of_zeros_is_zero() {
        let (store, comp, _) = setup(CompositionMode::Sum);
        let mut g = Graph::new(&store);
        let z = g.zeros(3);
        let l = g.zeros(3);
        let agg = comp.aggregate(&mut g, &[z], l).unwrap();
        assert_eq!(g.value(agg), &[0.0; 3]);
        assert!(matches!(comp.compose(&mut g, &[], l), Err(NeuralError::EmptySequence)));
    }

    #[test]
    fn order_sensitivity() {
        for (mode, invariant) in [(CompositionMode::Sum, true), (CompositionMode::Bilstm, false)] {
            let (store, comp, v) = setup(mode);
            let mut g = Graph::new(&store);
            let (l, a, b) = (g.param(v[0]), g.param(v[1]), g.param(v[2]));
            let ab = comp.compose(&mut g, &[a, b], l).unwrap();
            let ba = comp.compose(&mut g, &[b, a], l).unwrap();
            let same = g.value(ab).iter().zip(g.value(ba)).all(|(x, y)| (x - y).abs() < 1e-12);
            assert_eq!(same, invariant, "{mode:?}");
        }
    }

    #[test]
    fn composition_gradcheck() {
        for mode in [CompositionMode::Sum, CompositionMode::Bilstm] {
            let (mut store, comp, v) = setup(mode);
            let report = gradcheck(
                &mut store,
                |s| {
                    let mut g = Graph::new(s);
                    let n: Vec<NodeId> = v.iter().map(|&p| g.param(p)).collect();
                    let y = comp.compose(&mut g, &n[1..], n[0]).unwrap();
                    let w = g.input(vec![0.7, -1.3, 0.4]);
                    let p = g.mul(y, w);
                    let loss = g.total(p);
                    (g.scalar(loss), g.backward(loss))
                },
                &GradcheckOptions::default(),
            );
            assert!(report.max_rel_error < 1e-4, "{mode:?}: {report:?}");
        }
    }
}
