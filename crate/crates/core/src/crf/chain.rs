//! Linear-chain scoring: forward algorithm, Viterbi and marginals.
//!
//! A path `y` scores `start[y0] + Σ emissions[t][yt] + Σ trans[y(t-1) * T + yt]
//! + stop[y(n-1)]`. Scores may be `-inf`, which removes paths entirely.

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy)]
pub struct ChainScores<'a> {
    pub emissions: &'a [&'a [f64]],
    /// Row-major `from × to`.
    pub trans: &'a [f64],
    pub start: &'a [f64],
    pub stop: &'a [f64],
}

/// Posterior marginals of a chain.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `unary[t][j] = P(y_t = j)`.
    pub unary: Vec<Vec<f64>>,
    /// Expected transition counts, row-major `from × to`.
    pub transitions: Vec<f64>,
}

impl<'a> ChainScores<'a> {
    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn t(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.num_tags() + to]
    }

    fn check(&self) {
        let t = self.num_tags();
        assert!(!self.emissions.is_empty(), "empty chain");
        assert_eq!(self.trans.len(), t * t, "transition matrix shape");
        assert_eq!(self.stop.len(), t, "stop scores");
        assert!(self.emissions.iter().all(|e| e.len() == t), "emission width");
    }

    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.emissions.len(), "path length");
        let mut s = self.start[path[0]] + self.stop[path[path.len() - 1]];
        for (i, &y) in path.iter().enumerate() {
            s += self.emissions[i][y];
            if i > 0 {
                s += self.t(path[i - 1], y);
            }
        }
        s
    }

    fn forward(&self) -> Vec<Vec<f64>> {
        self.check();
        let nt = self.num_tags();
        let mut alpha = Vec::with_capacity(self.emissions.len());
        alpha.push((0..nt).map(|j| self.start[j] + self.emissions[0][j]).collect::<Vec<_>>());
        for e in &self.emissions[1..] {
            let prev = alpha.last().expect("non-empty");
            let next = (0..nt)
                .map(|j| e[j] + log_sum_exp((0..nt).map(|i| prev[i] + self.t(i, j))))
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn backward(&self) -> Vec<Vec<f64>> {
        let nt = self.num_tags();
        let n = self.emissions.len();
        let mut beta = vec![Vec::new(); n];
        beta[n - 1] = self.stop.to_vec();
        for t in (0..n - 1).rev() {
            let (e, b) = (self.emissions[t + 1], &beta[t + 1]);
            beta[t] = (0..nt)
                .map(|i| log_sum_exp((0..nt).map(|j| self.t(i, j) + e[j] + b[j])))
                .collect();
        }
        beta
    }

    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let last = alpha.last().expect("non-empty");
        log_sum_exp(last.iter().zip(self.stop).map(|(a, s)| a + s))
    }

    /// Best path and its score; exact ties resolve to the lowest tag index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        self.check();
        let nt = self.num_tags();
        let n = self.emissions.len();
        let mut delta: Vec<f64> = (0..nt).map(|j| self.start[j] + self.emissions[0][j]).collect();
        let mut back = vec![vec![0usize; nt]; n];
        for t in 1..n {
            let mut next = vec![f64::NEG_INFINITY; nt];
            for j in 0..nt {
                let mut best = (f64::NEG_INFINITY, 0);
                for (i, d) in delta.iter().enumerate() {
                    let s = d + self.t(i, j);
                    if s > best.0 {
                        best = (s, i);
                    }
                }
                next[j] = best.0 + self.emissions[t][j];
                back[t][j] = best.1;
            }
            delta = next;
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (j, d) in delta.iter().enumerate() {
            let s = d + self.stop[j];
            if s > best.0 {
                best = (s, j);
            }
        }
        let mut path = vec![best.1; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t][path[t]];
        }
        (path, best.0)
    }

    pub fn marginals(&self) -> Marginals {
        let alpha = self.forward();
        let beta = self.backward();
        let nt = self.num_tags();
        let n = self.emissions.len();
        let log_z = log_sum_exp(alpha[n - 1].iter().zip(self.stop).map(|(a, s)| a + s));
        let unary = (0..n)
            .map(|t| (0..nt).map(|j| (alpha[t][j] + beta[t][j] - log_z).exp()).collect())
            .collect();
        let mut transitions = vec![0.0; nt * nt];
        for t in 0..n - 1 {
            for i in 0..nt {
                for j in 0..nt {
                    let s = alpha[t][i] + self.t(i, j) + self.emissions[t + 1][j] + beta[t + 1][j] - log_z;
                    transitions[i * nt + j] += s.exp();
                }
            }
        }
        Marginals {
            log_z,
            unary,
            transitions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        em: Vec<Vec<f64>>,
        trans: Vec<f64>,
        start: Vec<f64>,
        stop: Vec<f64>,
    }

    impl Owned {
        fn random(n: usize, t: usize, rng: &mut impl Rng) -> Self {
            let mut r = |k: usize| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            Owned {
                em: (0..n).map(|_| r(t)).collect(),
                trans: r(t * t),
                start: r(t),
                stop: r(t),
            }
        }

        fn with<R>(&self, f: impl FnOnce(ChainScores<'_>) -> R) -> R {
            let em: Vec<&[f64]> = self.em.iter().map(|e| e.as_slice()).collect();
            f(ChainScores {
                emissions: &em,
                trans: &self.trans,
                start: &self.start,
                stop: &self.stop,
            })
        }
    }

    fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..t).map(move |j| {
                        let mut q = p.clone();
                        q.push(j);
                        q
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn zero_scores_count_paths() {
        for (n, expect) in [(2, 4.0f64), (3, 8.0)] {
            let o = Owned {
                em: vec![vec![0.0; 2]; n],
                trans: vec![0.0; 4],
                start: vec![0.0; 2],
                stop: vec![0.0; 2],
            };
            let z = o.with(|c| c.log_partition());
            assert!((z - expect.ln()).abs() < 1e-12);
            assert_eq!(o.with(|c| c.viterbi().0), vec![0; n], "ties go to tag 0");
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let t = rng.gen_range(1..=4);
            let o = Owned::random(n, t, &mut rng);
            o.with(|c| {
                let scores: Vec<f64> = all_paths(n, t).iter().map(|p| c.path_score(p)).collect();
                let brute = log_sum_exp(scores.iter().copied());
                assert!((c.log_partition() - brute).abs() < 1e-8);
                let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (path, s) = c.viterbi();
                assert!((s - best).abs() < 1e-8);
                assert!((c.path_score(&path) - best).abs() < 1e-8);
                let m = c.marginals();
                for u in &m.unary {
                    assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            });
        }
    }

    #[test]
    fn forbidden_moves_are_never_taken() {
        let o = Owned {
            em: vec![vec![0.0, 5.0], vec![0.0, 5.0]],
            trans: vec![0.0, 0.0, 0.0, f64::NEG_INFINITY],
            start: vec![0.0, 0.0],
            stop: vec![0.0, 0.0],
        };
        let (path, _) = o.with(|c| c.viterbi());
        assert_ne!(path, vec![1, 1]);
        let m = o.with(|c| c.marginals());
        assert_eq!(m.transitions[3], 0.0);
        assert!(m.log_z.is_finite());
    }
}
