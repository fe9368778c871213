//! Greedy and beam search over any scored transition space.

use std::cmp::Ordering;

/// A left-to-right decision process with log-probabilities over the
/// available actions of each state.
pub trait SearchSpace {
    type State: Clone;
    type Error;

    fn initial(&mut self) -> Result<Self::State, Self::Error>;
    fn is_final(&self, state: &Self::State) -> bool;
    /// `(action, log-prob)` for every available action, in a fixed order.
    /// Must not be empty for non-final states.
    fn expand(&mut self, state: &Self::State) -> Result<Vec<(usize, f64)>, Self::Error>;
    fn advance(&mut self, state: &Self::State, action: usize) -> Result<Self::State, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    pub state: S,
    pub actions: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchFailure {
    /// No hypothesis finished within the step budget.
    StepLimit(usize),
    /// A non-final state offered no action.
    DeadEnd,
}

#[derive(Debug)]
pub enum SearchError<E> {
    Space(E),
    Failed(SearchFailure),
}

impl<E> From<SearchFailure> for SearchError<E> {
    fn from(f: SearchFailure) -> Self {
        SearchError::Failed(f)
    }
}

/// Lowest index among the maxima.
fn argmax(scored: &[(usize, f64)]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(a, s) in scored {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((a, s));
        }
    }
    best
}

/// Takes the most probable action at every step.
pub fn greedy<S: SearchSpace>(space: &mut S, max_steps: usize) -> Result<Hypothesis<S::State>, SearchError<S::Error>> {
    let mut hyp = Hypothesis {
        state: space.initial().map_err(SearchError::Space)?,
        actions: Vec::new(),
        log_prob: 0.0,
    };
    while !space.is_final(&hyp.state) {
        if hyp.actions.len() >= max_steps {
            return Err(SearchFailure::StepLimit(max_steps).into());
        }
        let scored = space.expand(&hyp.state).map_err(SearchError::Space)?;
        let (a, lp) = argmax(&scored).ok_or(SearchFailure::DeadEnd)?;
        hyp.state = space.advance(&hyp.state, a).map_err(SearchError::Space)?;
        hyp.actions.push(a);
        hyp.log_prob += lp;
    }
    Ok(hyp)
}

/// Beam search on summed log-probabilities. Each round expands every
/// active hypothesis, keeps the `beam_size` best extensions and moves those
/// that are final to the finished pool. Search stops once no active
/// hypothesis can beat the best finished one. Ties keep the earlier
/// hypothesis and the earlier action, so `beam_size == 1` follows
/// [`greedy`] exactly.
pub fn beam_search<S: SearchSpace>(
    space: &mut S,
    beam_size: usize,
    max_steps: usize,
) -> Result<Hypothesis<S::State>, SearchError<S::Error>> {
    assert!(beam_size >= 1, "beam size must be positive");
    let init = space.initial().map_err(SearchError::Space)?;
    let mut finished: Vec<Hypothesis<S::State>> = Vec::new();
    let mut beam = vec![Hypothesis {
        state: init,
        actions: Vec::new(),
        log_prob: 0.0,
    }];
    if space.is_final(&beam[0].state) {
        return Ok(beam.remove(0));
    }
    for _ in 0..max_steps {
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (h, hyp) in beam.iter().enumerate() {
            let scored = space.expand(&hyp.state).map_err(SearchError::Space)?;
            if scored.is_empty() {
                return Err(SearchFailure::DeadEnd.into());
            }
            candidates.extend(scored.into_iter().map(|(a, lp)| (h, a, hyp.log_prob + lp)));
        }
        candidates.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap_or(Ordering::Equal));
        candidates.truncate(beam_size);
        let mut next = Vec::with_capacity(candidates.len());
        for (h, a, score) in candidates {
            let parent = &beam[h];
            let state = space.advance(&parent.state, a).map_err(SearchError::Space)?;
            let mut actions = parent.actions.clone();
            actions.push(a);
            let hyp = Hypothesis {
                state,
                actions,
                log_prob: score,
            };
            if space.is_final(&hyp.state) {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        beam = next;
        let best_finished = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_active = beam.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if beam.is_empty() || best_finished >= best_active {
            break;
        }
    }
    let mut best: Option<Hypothesis<S::State>> = None;
    for h in finished {
        if best.as_ref().is_none_or(|b| h.log_prob > b.log_prob) {
            best = Some(h);
        }
    }
    best.ok_or(SearchFailure::StepLimit(max_steps).into())
}

/// Beam search that never does worse than greedy: returns whichever of the
/// two outputs has the higher total log-probability (the beam output on
/// ties).
pub fn decode_best<S: SearchSpace>(
    space: &mut S,
    beam_size: usize,
    max_steps: usize,
) -> Result<Hypothesis<S::State>, SearchError<S::Error>> {
    if beam_size <= 1 {
        return greedy(space, max_steps);
    }
    let beam = beam_search(space, beam_size, max_steps)?;
    let greedy = greedy(space, max_steps)?;
    Ok(if greedy.log_prob > beam.log_prob { greedy } else { beam })
}

/// A search space given as an explicit table: the state is the action
/// prefix, and `table` maps each non-final prefix to its scored actions.
#[derive(Debug, Clone)]
pub struct TableSpace {
    pub table: std::collections::BTreeMap<Vec<usize>, Vec<(usize, f64)>>,
}

impl TableSpace {
    /// A two-step space where greedy's first choice leads to a worse total.
    ///
    /// ```text
    /// step 1: a0 = 0.6, a1 = 0.4
    /// after a0: 0.5 / 0.5        totals 0.30, 0.30
    /// after a1: 0.9 / 0.1        totals 0.36, 0.04
    /// ```
    pub fn greedy_trap() -> Self {
        let ln = f64::ln;
        let mut table = std::collections::BTreeMap::new();
        table.insert(vec![], vec![(0, ln(0.6)), (1, ln(0.4))]);
        table.insert(vec![0], vec![(0, ln(0.5)), (1, ln(0.5))]);
        table.insert(vec![1], vec![(0, ln(0.9)), (1, ln(0.1))]);
        Self { table }
    }

    /// Every complete action sequence with its total log-probability.
    pub fn enumerate(&self) -> Vec<(Vec<usize>, f64)> {
        fn walk(t: &TableSpace, prefix: Vec<usize>, score: f64, out: &mut Vec<(Vec<usize>, f64)>) {
            match t.table.get(&prefix) {
                None => out.push((prefix, score)),
                Some(options) => {
                    for &(a, lp) in options {
                        let mut p = prefix.clone();
                        p.push(a);
                        walk(t, p, score + lp, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(self, Vec::new(), 0.0, &mut out);
        out
    }
}

impl SearchSpace for TableSpace {
    type State = Vec<usize>;
    type Error = std::convert::Infallible;

    fn initial(&mut self) -> Result<Vec<usize>, Self::Error> {
        Ok(Vec::new())
    }

    fn is_final(&self, state: &Vec<usize>) -> bool {
        !self.table.contains_key(state)
    }

    fn expand(&mut self, state: &Vec<usize>) -> Result<Vec<(usize, f64)>, Self::Error> {
        Ok(self.table.get(state).cloned().unwrap_or_default())
    }

    fn advance(&mut self, state: &Vec<usize>, action: usize) -> Result<Vec<usize>, Self::Error> {
        let mut s = state.clone();
        s.push(action);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(rng: &mut ChaCha8Rng, depth: usize, branching: usize) -> TableSpace {
        let mut table = std::collections::BTreeMap::new();
        let mut frontier = vec![Vec::new()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for prefix in frontier {
                let k = rng.gen_range(1..=branching);
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let logp = crate::neural::loss::log_softmax(&raw);
                table.insert(prefix.clone(), logp.iter().copied().enumerate().collect());
                for a in 0..k {
                    let mut p = prefix.clone();
                    p.push(a);
                    if rng.gen_bool(0.8) {
                        next.push(p);
                    }
                }
            }
            frontier = next;
        }
        TableSpace { table }
    }

    #[test]
    fn greedy_trap_enumeration() {
        let mut space = TableSpace::greedy_trap();
        let all = space.enumerate();
        assert_eq!(all.len(), 4);
        let best = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(best.0, vec![1, 0]);
        let g = greedy(&mut space, 10).unwrap();
        assert_eq!(g.actions, vec![0, 0]);
        let b = beam_search(&mut space, 2, 10).unwrap();
        assert_eq!(b.actions, vec![1, 0]);
        assert!((b.log_prob - 0.36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_one_is_greedy_and_wide_beam_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut space = random_table(&mut rng, 4, 3);
            let g = greedy(&mut space, 50).unwrap();
            let b1 = beam_search(&mut space, 1, 50).unwrap();
            assert_eq!(g.actions, b1.actions);
            let best = space.enumerate().into_iter().map(|(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
            let wide = beam_search(&mut space, 1000, 50).unwrap();
            assert!((wide.log_prob - best).abs() < 1e-12);
            for k in 1..4 {
                assert!(decode_best(&mut space, k, 50).unwrap().log_prob >= g.log_prob);
            }
        }
    }

    #[test]
    fn step_limit_is_reported() {
        let mut space = TableSpace::greedy_trap();
        assert!(matches!(
            greedy(&mut space, 1),
            Err(SearchError::Failed(SearchFailure::StepLimit(1)))
        ));
        assert!(matches!(
            beam_search(&mut space, 2, 1),
            Err(SearchError::Failed(SearchFailure::StepLimit(1)))
        ));
    }
}
