//! Posterior sampling for the toxicity model.
//!
//! Component-wise random-walk Metropolis on `(ln alpha, ln beta, ln gamma)`.
//! Step sizes adapt (Robbins-Monro, target acceptance 0.44) during burn-in
//! only, so the retained draws come from a fixed-kernel chain. The chain starts
//! at `(1, 1, 1)` and is rebuilt from scratch at every decision point.

pub mod quadrature;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dose_models::{joint_log_terms, DoseGrid, ToxicityCounts, ToxicityPriors, PROB_GUARD};
use crate::error::{ModelError, Result};
use crate::seeds;

/// Acceptance rate the burn-in adaptation steers each component toward.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_keep: usize,
    pub n_burn: usize,
    pub adapt: bool,
    /// Initial proposal standard deviation on the log scale, per parameter.
    pub initial_step: [f64; 3],
    /// Initial proposal standard deviation for the efficacy hyperparameters.
    pub hyper_step: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_keep: 2000,
            n_burn: 100,
            adapt: true,
            initial_step: [1.0, 1.0, 1.5],
            hyper_step: 1.0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_keep == 0 {
            return Err(ModelError::domain("mcmc.n_keep must be positive"));
        }
        if self
            .initial_step
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(ModelError::domain(
                "mcmc.initial_step entries must be positive",
            ));
        }
        if !(self.hyper_step.is_finite() && self.hyper_step > 0.0) {
            return Err(ModelError::domain("mcmc.hyper_step must be positive"));
        }
        Ok(())
    }
}

/// Retained draws of `(alpha, beta, gamma)` and the toxicity surface each one
/// implies.
#[derive(Debug, Clone, PartialEq)]
pub struct ToxPosteriorChain {
    cells: usize,
    cols: usize,
    draws: Vec<[f64; 3]>,
    /// Row-major per draw: `surfaces[d * cells + k]`.
    surfaces: Vec<f64>,
    acceptance: [f64; 3],
    steps: [f64; 3],
}

impl ToxPosteriorChain {
    /// Chain made of explicit surfaces, one `Vec` per draw (parameters unset).
    /// Used for degenerate posteriors in tests and for replay tooling.
    pub fn from_surfaces(grid: &DoseGrid, surfaces: Vec<Vec<f64>>) -> Result<Self> {
        let cells = grid.cells();
        if surfaces.is_empty() || surfaces.iter().any(|s| s.len() != cells) {
            return Err(ModelError::domain(
                "every surface must cover the whole grid",
            ));
        }
        if surfaces.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ModelError::domain("surface entries must lie in [0, 1]"));
        }
        Ok(ToxPosteriorChain {
            cells,
            cols: grid.cols(),
            draws: vec![[f64::NAN; 3]; surfaces.len()],
            surfaces: surfaces.concat(),
            acceptance: [f64::NAN; 3],
            steps: [f64::NAN; 3],
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[[f64; 3]] {
        &self.draws
    }

    /// Toxicity probability of cell `cell` (row-major index) under each draw.
    pub fn cell(&self, cell: usize) -> impl Iterator<Item = f64> + '_ {
        self.surfaces.iter().skip(cell).step_by(self.cells).copied()
    }

    pub fn surface(&self, draw: usize) -> &[f64] {
        &self.surfaces[draw * self.cells..(draw + 1) * self.cells]
    }

    /// Per-component acceptance rate over the retained draws.
    pub fn acceptance(&self) -> [f64; 3] {
        self.acceptance
    }

    /// Proposal step sizes in effect after burn-in.
    pub fn steps(&self) -> [f64; 3] {
        self.steps
    }

    /// Posterior mean of every cell's toxicity probability.
    pub fn mean_surface(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.cells)
            .map(|k| self.cell(k).sum::<f64>() / n)
            .collect()
    }

    /// Posterior standard deviation of every cell's toxicity probability.
    pub fn sd_surface(&self) -> Vec<f64> {
        let means = self.mean_surface();
        let n = self.len() as f64;
        (0..self.cells)
            .map(|k| {
                (self.cell(k).map(|v| (v - means[k]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
                    .sqrt()
            })
            .collect()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.cells
    }
}

/// `pr(pi_cell < phi_t | data)`: fraction of draws strictly below `phi_t`.
pub fn prob_below(chain: &ToxPosteriorChain, cell: usize, phi_t: f64) -> f64 {
    let below = chain.cell(cell).filter(|&v| v < phi_t).count();
    below as f64 / chain.len() as f64
}

/// Precomputed log-skeleton of the grid plus the observed cells.
struct ToxTarget<'a> {
    ln_a: Vec<f64>,
    ln_b: Vec<f64>,
    cols: usize,
    observed: Vec<(usize, f64, f64)>,
    priors: &'a ToxicityPriors,
}

impl<'a> ToxTarget<'a> {
    fn new(grid: &DoseGrid, counts: &ToxicityCounts, priors: &'a ToxicityPriors) -> Self {
        let observed = counts
            .n()
            .iter()
            .zip(counts.x())
            .enumerate()
            .filter(|(_, (&n, _))| n > 0)
            .map(|(k, (&n, &x))| (k, f64::from(x), f64::from(n - x)))
            .collect();
        ToxTarget {
            ln_a: grid.a().iter().map(|a| a.ln()).collect(),
            ln_b: grid.b().iter().map(|b| b.ln()).collect(),
            cols: grid.cols(),
            observed,
            priors,
        }
    }

    #[inline]
    fn single(ln_p: f64, e: f64) -> f64 {
        (-(e * ln_p).exp()).ln_1p()
    }

    /// Guarded log likelihood plus log prior on the log scale.
    fn ln_density(&self, u: &[f64; 3]) -> f64 {
        let (alpha, beta, gamma) = (u[0].exp(), u[1].exp(), u[2].exp());
        if !(alpha > 0.0
            && beta > 0.0
            && gamma > 0.0
            && alpha.is_finite()
            && beta.is_finite()
            && gamma.is_finite())
        {
            return f64::NEG_INFINITY;
        }
        let floor = PROB_GUARD.ln();
        let mut ll = 0.0;
        for &(k, x, nx) in &self.observed {
            let la = Self::single(self.ln_a[k / self.cols], alpha);
            let lb = Self::single(self.ln_b[k % self.cols], beta);
            let (ln_pi, ln_surv) = joint_log_terms(la, lb, gamma);
            ll += x * ln_pi.max(floor) + nx * ln_surv.max(floor);
        }
        ll + self.priors.alpha.ln_pdf_log_scale(u[0])
            + self.priors.beta.ln_pdf_log_scale(u[1])
            + self.priors.gamma.ln_pdf_log_scale(u[2])
    }

    fn surface_into(&self, u: &[f64; 3], out: &mut Vec<f64>) {
        let (alpha, beta, gamma) = (u[0].exp(), u[1].exp(), u[2].exp());
        let lb: Vec<f64> = self.ln_b.iter().map(|&l| Self::single(l, beta)).collect();
        for &ln_a in &self.ln_a {
            let la = Self::single(ln_a, alpha);
            for &lbj in &lb {
                let (_, ln_surv) = joint_log_terms(la, lbj, gamma);
                out.push((-ln_surv.exp_m1()).clamp(0.0, 1.0));
            }
        }
    }
}

/// Draws from the posterior of `(alpha, beta, gamma)` given toxicity data.
pub fn sample_toxicity_posterior(
    counts: &ToxicityCounts,
    grid: &DoseGrid,
    priors: &ToxicityPriors,
    config: &McmcConfig,
    seed: u64,
) -> Result<ToxPosteriorChain> {
    counts.conforms(grid)?;
    priors.validate()?;
    config.validate()?;
    let target = ToxTarget::new(grid, counts, priors);
    let mut rng = seeds::rng(seed);

    let mut u = [0.0f64; 3];
    let mut current = target.ln_density(&u);
    if !current.is_finite() {
        return Err(ModelError::Inference(
            "posterior density is not finite at the initial point".into(),
        ));
    }
    let mut log_step = config.initial_step.map(f64::ln);
    let mut accepted = [0usize; 3];
    let mut draws = Vec::with_capacity(config.n_keep);
    let mut surfaces = Vec::with_capacity(config.n_keep * grid.cells());

    for iter in 0..config.n_burn + config.n_keep {
        let burning = iter < config.n_burn;
        for c in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            let mut proposal = u;
            proposal[c] += log_step[c].exp() * z;
            let cand = target.ln_density(&proposal);
            let log_u: f64 = (1.0 - rng.random::<f64>()).ln();
            let accept = cand.is_finite() && log_u < cand - current;
            if accept {
                u = proposal;
                current = cand;
            }
            if burning {
                if config.adapt {
                    let gain = 1.0 / ((iter + 1) as f64).sqrt();
                    let hit = if accept { 1.0 } else { 0.0 };
                    log_step[c] = (log_step[c] + gain * (hit - TARGET_ACCEPTANCE)).clamp(-7.0, 4.0);
                }
            } else if accept {
                accepted[c] += 1;
            }
        }
        if !burning {
            draws.push(u.map(f64::exp));
            target.surface_into(&u, &mut surfaces);
        }
    }

    let kept = config.n_keep as f64;
    Ok(ToxPosteriorChain {
        cells: grid.cells(),
        cols: grid.cols(),
        draws,
        surfaces,
        acceptance: accepted.map(|a| a as f64 / kept),
        steps: log_step.map(f64::exp),
    })
}

/// Exact log density used by tests to cross-check the guarded sampler target.
#[doc(hidden)]
pub fn sampler_log_density(
    grid: &DoseGrid,
    counts: &ToxicityCounts,
    priors: &ToxicityPriors,
    u: [f64; 3],
) -> f64 {
    ToxTarget::new(grid, counts, priors).ln_density(&u)
}
