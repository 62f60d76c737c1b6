//! Helpers shared by unit tests. The finite-difference gradients here are
//! the independent oracle every hand-written backward pass is checked
//! against; they must never call into the code under test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central-difference gradient of a scalar function at `x`.
pub fn fd_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let hi = f(&probe);
        probe[i] = x[i] - h;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * h));
    }
    grad
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Relative-error assertion with an absolute floor: values whose difference
/// is below `abs_floor` count as equal regardless of magnitude (finite
/// differences bottom out in rounding noise there).
pub struct RelErr;

impl RelErr {
    pub fn check(label: &str, analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) {
        let diff = (analytic - numeric).abs();
        if diff <= abs_floor {
            return;
        }
        let denom = analytic.abs().max(numeric.abs());
        assert!(
            diff / denom <= rel_tol,
            "{label}: analytic {analytic} vs numeric {numeric} (rel err {})",
            diff / denom
        );
    }
}
