//! Softmax and label-smoothed cross-entropy.

use serde::{Deserialize, Serialize};

/// Label smoothing over `k` classes: `y_smoothed = y (1 - alpha) + alpha / k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub k: usize,
}

impl SmoothingConfig {
    pub fn new(alpha: f64, k: usize) -> Self {
        assert!((0.0..1.0).contains(&alpha), "alpha must be in [0, 1)");
        assert!(k > 0, "need at least one class");
        Self { alpha, k }
    }

    pub fn targets(&self, gold: usize) -> Vec<f64> {
        smoothed_targets(self.k, gold, self.alpha)
    }
}

pub fn smoothed_targets(k: usize, gold: usize, alpha: f64) -> Vec<f64> {
    assert!(gold < k, "gold class out of range");
    let off = alpha / k as f64;
    let mut t = vec![off; k];
    t[gold] = (1.0 - alpha) + off;
    t
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = crate::crf::chain::log_sum_exp(x.iter().copied());
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-Σ_k y_smoothed[k] log softmax(logits)[k]`. Coordinates equal to `-inf`
/// are masked: they are dropped from the softmax and from `K`.
pub fn smoothed_cross_entropy(logits: &[f64], gold: usize, alpha: f64) -> f64 {
    let legal: Vec<usize> = (0..logits.len()).filter(|&k| logits[k] > f64::NEG_INFINITY).collect();
    let pos = legal
        .iter()
        .position(|&k| k == gold)
        .expect("gold class is masked");
    let sub: Vec<f64> = legal.iter().map(|&k| logits[k]).collect();
    let target = smoothed_targets(legal.len(), pos, alpha);
    -log_softmax(&sub)
        .iter()
        .zip(&target)
        .map(|(l, t)| l * t)
        .sum::<f64>()
}
