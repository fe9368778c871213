use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Counts, EvalError, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    /// When false every replicate is the original sample, so the interval
    /// collapses onto the point estimate.
    pub resample: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            seed: 0,
            resample: true,
        }
    }
}

/// Mean and 5th/95th percentiles of the replicate F1 scores, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p / 100 * n)` (1-based, at least 1).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of nothing");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Resamples scored instances with replacement and recomputes F1 for each
/// replicate. Replicate `i` draws from its own ChaCha stream `i` of the
/// master seed, so results do not depend on thread scheduling.
pub fn bootstrap_ci(outcomes: &[Outcome], cfg: &BootstrapConfig) -> Result<ConfidenceInterval, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyInstances);
    }
    let n = outcomes.len();
    let mut scores: Vec<f64> = (0..cfg.iterations.max(1))
        .into_par_iter()
        .map(|i| {
            let mut c = Counts::default();
            if cfg.resample {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                for _ in 0..n {
                    c.add(outcomes[rng.gen_range(0..n)]);
                }
            } else {
                outcomes.iter().for_each(|o| c.add(*o));
            }
            100.0 * c.f1()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        mean,
        lo: nearest_rank(&scores, 5.0),
        hi: nearest_rank(&scores, 95.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_true_positives_is_degenerate() {
        let ci = bootstrap_ci(&[Outcome::Tp; 7], &BootstrapConfig::default()).unwrap();
        assert_eq!(ci, ConfidenceInterval { mean: 100.0, lo: 100.0, hi: 100.0 });
        assert_eq!(bootstrap_ci(&[], &BootstrapConfig::default()), Err(EvalError::EmptyInstances));
    }

    #[test]
    fn seeded_and_point_estimate_without_resampling() {
        let o = [Outcome::Tp, Outcome::Tp, Outcome::Fp, Outcome::Fn, Outcome::Tp];
        let cfg = BootstrapConfig {
            seed: 42,
            ..BootstrapConfig::default()
        };
        assert_eq!(bootstrap_ci(&o, &cfg).unwrap(), bootstrap_ci(&o, &cfg).unwrap());
        let point = BootstrapConfig {
            iterations: 1,
            resample: false,
            ..cfg
        };
        let ci = bootstrap_ci(&o, &point).unwrap();
        assert_eq!(ci.mean, 75.0);
        assert_eq!((ci.lo, ci.hi), (75.0, 75.0));
    }

    #[test]
    fn nearest_rank_matches_definition() {
        // Independent routine: smallest value with at least p% of the data at or below it.
        fn by_count(sorted: &[f64], p: f64) -> f64 {
            let n = sorted.len() as f64;
            *sorted
                .iter()
                .enumerate()
                .find(|(i, _)| (*i as f64 + 1.0) / n * 100.0 >= p - 1e-9)
                .unwrap()
                .1
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..60 {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            v.sort_by(f64::total_cmp);
            for p in [5.0, 50.0, 95.0] {
                assert_eq!(nearest_rank(&v, p), by_count(&v, p), "n={n} p={p}");
            }
        }
    }
}
