//! Random variates that stay finite for the tiny shape parameters the vague
//! hyperpriors produce.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Log of a `Gamma(shape, 1)` variate.
///
/// Shapes below one use `X = Y * U^(1/shape)` with `Y ~ Gamma(shape + 1)`,
/// evaluated in log space so `X` may be far below the smallest `f64`.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("positive shape")
            .sample(rng)
            .ln()
    } else {
        let y = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        let u = 1.0 - rng.random::<f64>();
        y.ln() + u.ln() / shape
    }
}

/// `Beta(a, b)` variate built from two log-gamma variates.
pub fn beta_variate<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let lx = ln_gamma_variate(a, rng);
    let ly = ln_gamma_variate(b, rng);
    let d = ly - lx;
    if d.is_nan() {
        // both -inf: tie at the boundary, pick a side by the shapes' ratio
        return if rng.random::<f64>() < a / (a + b) {
            1.0
        } else {
            0.0
        };
    }
    1.0 / (1.0 + d.exp())
}

/// Sample mean and its batch-means standard error.
#[cfg(test)]
pub(crate) fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks(size)
        .take(batches)
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (
        xs.iter().sum::<f64>() / xs.len() as f64,
        (var / batches as f64).sqrt(),
    )
}
