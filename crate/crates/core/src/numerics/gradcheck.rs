use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Largest relative discrepancy between `analytic` and central differences
/// of `f` at `point`, over the coordinates in `coords`.
///
/// Relative error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    epsilon: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be positive"));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape("analytic gradient length differs from point"));
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        if i >= x.len() {
            return Err(Error::Index(format!("coordinate {i} of {}", x.len())));
        }
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x)?;
        x[i] = orig - epsilon;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective perturbing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// `count` distinct coordinates out of `n` (all of them when `count ≥ n`).
pub fn sample_coords<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, count).into_vec();
    v.sort_unstable();
    v
}
