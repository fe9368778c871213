//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor (all of them when smaller).
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_tensor: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Tensor name and coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the gradients returned by `f` against central differences of
/// its loss. `f` must be deterministic in the store contents.
pub fn gradcheck<F>(store: &mut ParamStore, f: F, opts: &GradcheckOptions) -> GradcheckReport
where
    F: Fn(&ParamStore) -> (f64, Gradients),
{
    let (_, analytic) = f(store);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
        worst_values: None,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.len())).collect();
    for (id, len) in ids {
        let coords: Vec<usize> = if len <= opts.max_coords_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, opts.max_coords_per_tensor).into_vec()
        };
        for i in coords {
            let orig = store.get(id).value[i];
            store.get_mut(id).value[i] = orig + opts.eps;
            let plus = f(store).0;
            store.get_mut(id).value[i] = orig - opts.eps;
            let minus = f(store).0;
            store.get_mut(id).value[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.coord(id, i);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    report
}
