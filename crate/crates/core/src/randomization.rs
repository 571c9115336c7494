//! Adaptive randomization among the open phase II arms.
//!
//! [`mar_probabilities`] spends the unit of randomization probability
//! sequentially. Each round compares every arm still in the comparison set
//! with the per-draw mean of that set, gives the arm least likely to beat it
//! its share of what is left, and removes it. [`far_probabilities`] compares
//! every arm with one fixed reference arm instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::efficacy::EffPosteriorChain;
use crate::error::{ModelError, Result};

/// Randomization probabilities over all arms of a chain. Arms outside the
/// active set get zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandProbs {
    pub probs: Vec<f64>,
    /// Arms in the order their probabilities were fixed.
    pub order: Vec<usize>,
}

impl RandProbs {
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ModelError::domain(
                "randomization probabilities must be non-negative",
            ));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::domain(format!(
                "randomization probabilities sum to {total}"
            )));
        }
        Ok(())
    }
}

fn check_active(chain: &EffPosteriorChain, active: &[usize]) -> Result<Vec<usize>> {
    if active.is_empty() {
        return Err(ModelError::domain("no active arms to randomize"));
    }
    if chain.is_empty() {
        return Err(ModelError::domain("empty efficacy chain"));
    }
    let mut set = active.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() != active.len() || set.last().is_some_and(|&k| k >= chain.arms()) {
        return Err(ModelError::domain(
            "active arms must be distinct arms of the chain",
        ));
    }
    Ok(set)
}

/// Moving-reference adaptive randomization.
pub fn mar_probabilities(chain: &EffPosteriorChain, active: &[usize]) -> Result<RandProbs> {
    mar_with_trace(chain, active, |_, _| {})
}

/// [`mar_probabilities`], calling `trace(assigned, remaining)` after each round.
pub fn mar_with_trace(
    chain: &EffPosteriorChain,
    active: &[usize],
    mut trace: impl FnMut(f64, f64),
) -> Result<RandProbs> {
    let mut set = check_active(chain, active)?;
    let mut probs = vec![0.0; chain.arms()];
    let mut order = Vec::with_capacity(set.len());
    let mut assigned = 0.0;
    let mut remaining = 1.0;
    let draws = chain.len();
    let mut wins = vec![0usize; set.len()];

    while !set.is_empty() {
        if set.len() == 1 {
            probs[set[0]] = remaining;
            order.push(set[0]);
            assigned += remaining;
            remaining = 0.0;
            trace(assigned, remaining);
            break;
        }
        wins.truncate(set.len());
        wins.iter_mut().for_each(|w| *w = 0);
        let inv = 1.0 / set.len() as f64;
        for d in 0..draws {
            let row = chain.rates(d);
            let pbar = set.iter().map(|&k| row[k]).sum::<f64>() * inv;
            for (w, &k) in wins.iter_mut().zip(&set) {
                if row[k] > pbar {
                    *w += 1;
                }
            }
        }
        let total: usize = wins.iter().sum();
        if total == 0 {
            let share = remaining * inv;
            for &k in &set {
                probs[k] = share;
                order.push(k);
            }
            assigned += remaining;
            remaining = 0.0;
            trace(assigned, remaining);
            break;
        }
        // lowest R, ties to the lowest arm index (set is sorted)
        let (pos, &w_min) = wins
            .iter()
            .enumerate()
            .min_by_key(|&(i, w)| (*w, i))
            .unwrap();
        let share = remaining * w_min as f64 / total as f64;
        let arm = set.remove(pos);
        probs[arm] = share;
        order.push(arm);
        assigned += share;
        remaining -= share;
        trace(assigned, remaining);
    }
    Ok(RandProbs { probs, order })
}

/// Fixed-reference adaptive randomization: `R_ref = 0.5` and
/// `R_k = pr(p_k > p_ref)` otherwise, normalized.
pub fn far_probabilities(
    chain: &EffPosteriorChain,
    active: &[usize],
    reference: usize,
) -> Result<RandProbs> {
    let set = check_active(chain, active)?;
    if !set.contains(&reference) {
        return Err(ModelError::domain("reference arm must be active"));
    }
    let draws = chain.len();
    let r: Vec<f64> = set
        .iter()
        .map(|&k| {
            if k == reference {
                0.5
            } else {
                (0..draws)
                    .filter(|&d| chain.rate(d, k) > chain.rate(d, reference))
                    .count() as f64
                    / draws as f64
            }
        })
        .collect();
    let total: f64 = r.iter().sum();
    let mut probs = vec![0.0; chain.arms()];
    for (&k, rk) in set.iter().zip(&r) {
        probs[k] = rk / total;
    }
    Ok(RandProbs { probs, order: set })
}

/// Categorical draw from `probs`. Zero-probability arms are never returned.
pub fn draw_assignment<R: Rng + ?Sized>(probs: &RandProbs, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}
