//! Hierarchical beta-binomial model for the response rates of the phase II
//! arms:
//!
//! ```text
//! y_k | p_k ~ Bin(n_k, p_k),   p_k ~ Beta(zeta, xi),   zeta, xi ~ Ga(0.01, 0.01)
//! ```
//!
//! Each sweep draws the hyperparameters by a joint random-walk Metropolis move
//! on `(ln zeta, ln xi)` against their beta-binomial marginal likelihood (the
//! `p_k` integrated out), then draws every `p_k` exactly from
//! `Beta(zeta + y_k, xi + n_k - y_k)`. The stationary distribution is the full
//! joint posterior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dose_models::GammaPrior;
use crate::error::{ModelError, Result};
use crate::posterior::McmcConfig;
use crate::sampling::beta_variate;
use crate::seeds;

/// Target acceptance rate of the two-dimensional hyperparameter move.
pub const HYPER_TARGET_ACCEPTANCE: f64 = 0.35;
/// Metropolis moves on the hyperparameters per sweep.
const HYPER_MOVES: usize = 2;
/// Support of `ln zeta`, `ln xi` explored by the sampler.
const LOG_HYPER_RANGE: (f64, f64) = (-700.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmTally {
    /// Patients whose efficacy outcome has been observed.
    pub n: u32,
    /// Responders among them.
    pub y: u32,
}

impl ArmTally {
    pub fn new(n: u32, y: u32) -> Self {
        ArmTally { n, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmData {
    pub arms: Vec<ArmTally>,
}

impl ArmData {
    pub fn new(arms: Vec<ArmTally>) -> Result<Self> {
        let d = ArmData { arms };
        d.validate()?;
        Ok(d)
    }

    pub fn from_pairs(pairs: &[(u32, u32)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(n, y)| ArmTally::new(n, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(ModelError::domain("efficacy model needs at least one arm"));
        }
        if let Some(k) = self.arms.iter().position(|a| a.y > a.n) {
            return Err(ModelError::domain(format!(
                "arm {k}: more responders than patients"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub zeta: GammaPrior,
    pub xi: GammaPrior,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            zeta: GammaPrior::mean_one(0.01),
            xi: GammaPrior::mean_one(0.01),
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        self.zeta.validate()?;
        self.xi.validate()
    }
}

/// Retained draws of `(p_1, ..., p_K, zeta, xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffPosteriorChain {
    arms: usize,
    /// Row-major, `arms + 2` values per draw.
    draws: Vec<f64>,
    acceptance: f64,
}

impl EffPosteriorChain {
    /// Chain made of explicit response-rate rows (hyperparameters unset).
    pub fn from_rates(rows: Vec<Vec<f64>>) -> Result<Self> {
        let arms = rows.first().map_or(0, Vec::len);
        if arms == 0 || rows.iter().any(|r| r.len() != arms) {
            return Err(ModelError::domain(
                "every draw must cover the same non-empty set of arms",
            ));
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ModelError::domain("response rates must lie in [0, 1]"));
        }
        let mut draws = Vec::with_capacity(rows.len() * (arms + 2));
        for r in rows {
            draws.extend(r);
            draws.extend([f64::NAN, f64::NAN]);
        }
        Ok(EffPosteriorChain {
            arms,
            draws,
            acceptance: f64::NAN,
        })
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn len(&self) -> usize {
        self.draws.len() / (self.arms + 2)
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Response rates of every arm in draw `d`.
    pub fn rates(&self, d: usize) -> &[f64] {
        let w = self.arms + 2;
        &self.draws[d * w..d * w + self.arms]
    }

    pub fn rate(&self, d: usize, k: usize) -> f64 {
        self.draws[d * (self.arms + 2) + k]
    }

    pub fn arm(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.draws.iter().skip(k).step_by(self.arms + 2).copied()
    }

    /// `(zeta, xi)` of draw `d`.
    pub fn hyper(&self, d: usize) -> (f64, f64) {
        let w = self.arms + 2;
        (
            self.draws[d * w + self.arms],
            self.draws[d * w + self.arms + 1],
        )
    }

    /// Acceptance rate of the hyperparameter moves over the retained sweeps.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }
}

/// `pr(p_k > phi_e | data)`: fraction of draws strictly above `phi_e`.
pub fn prob_exceeds(chain: &EffPosteriorChain, k: usize, phi_e: f64) -> f64 {
    chain.arm(k).filter(|&p| p > phi_e).count() as f64 / chain.len() as f64
}

pub fn posterior_mean(chain: &EffPosteriorChain, k: usize) -> f64 {
    chain.arm(k).sum::<f64>() / chain.len() as f64
}

/// One exact draw of every `p_k` given the hyperparameters.
pub fn draw_rates_given_hyper<R: Rng + ?Sized>(
    arms: &ArmData,
    zeta: f64,
    xi: f64,
    rng: &mut R,
) -> Vec<f64> {
    arms.arms
        .iter()
        .map(|a| beta_variate(zeta + f64::from(a.y), xi + f64::from(a.n - a.y), rng))
        .collect()
}

/// Log marginal posterior of `(ln zeta, ln xi)` with the rates integrated out.
struct HyperTarget<'a> {
    observed: Vec<(f64, f64, f64)>,
    priors: &'a HyperPriors,
}

impl HyperTarget<'_> {
    fn ln_density(&self, v: [f64; 2]) -> f64 {
        if v.iter()
            .any(|x| !(LOG_HYPER_RANGE.0..=LOG_HYPER_RANGE.1).contains(x))
        {
            return f64::NEG_INFINITY;
        }
        let (z, x) = (v[0].exp(), v[1].exp());
        let ln_b0 = ln_gamma(z) + ln_gamma(x) - ln_gamma(z + x);
        let mut ll = 0.0;
        for &(y, f, n) in &self.observed {
            ll += ln_gamma(z + y) + ln_gamma(x + f) - ln_gamma(z + x + n) - ln_b0;
        }
        ll + self.priors.zeta.ln_pdf_log_scale(v[0]) + self.priors.xi.ln_pdf_log_scale(v[1])
    }
}

pub fn sample_efficacy_posterior(
    arms: &ArmData,
    priors: &HyperPriors,
    config: &McmcConfig,
    seed: u64,
) -> Result<EffPosteriorChain> {
    arms.validate()?;
    priors.validate()?;
    config.validate()?;
    let target = HyperTarget {
        observed: arms
            .arms
            .iter()
            .filter(|a| a.n > 0)
            .map(|a| (f64::from(a.y), f64::from(a.n - a.y), f64::from(a.n)))
            .collect(),
        priors,
    };
    let mut rng = seeds::rng(seed);
    let k = arms.len();

    let mut v = [priors.zeta.mean().ln(), priors.xi.mean().ln()];
    let mut current = target.ln_density(v);
    if !current.is_finite() {
        return Err(ModelError::Inference(
            "hyperparameter density is not finite at the prior means".into(),
        ));
    }
    let mut log_step = config.hyper_step.ln();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(config.n_keep * (k + 2));

    for iter in 0..config.n_burn + config.n_keep {
        let burning = iter < config.n_burn;
        for _ in 0..HYPER_MOVES {
            let s = log_step.exp();
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let prop = [v[0] + s * z0, v[1] + s * z1];
            let cand = target.ln_density(prop);
            let accept = cand.is_finite() && (1.0 - rng.random::<f64>()).ln() < cand - current;
            if accept {
                v = prop;
                current = cand;
            }
            if burning {
                if config.adapt {
                    let gain = 1.0 / ((iter + 1) as f64).sqrt();
                    let hit = if accept { 1.0 } else { 0.0 };
                    log_step = (log_step + gain * (hit - HYPER_TARGET_ACCEPTANCE)).clamp(-7.0, 5.0);
                }
            } else if accept {
                accepted += 1;
            }
        }
        if !burning {
            let (zeta, xi) = (v[0].exp(), v[1].exp());
            for a in &arms.arms {
                draws.push(beta_variate(
                    zeta + f64::from(a.y),
                    xi + f64::from(a.n - a.y),
                    &mut rng,
                ));
            }
            draws.push(zeta);
            draws.push(xi);
        }
    }

    Ok(EffPosteriorChain {
        arms: k,
        draws,
        acceptance: accepted as f64 / (config.n_keep * HYPER_MOVES) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, ContinuousCDF};

    fn cfg(n_keep: usize) -> McmcConfig {
        McmcConfig {
            n_keep,
            ..Default::default()
        }
    }

    #[test]
    fn conditional_draws_match_beta_quantiles() {
        // (zeta, xi) = (2, 3) and 4 of 10 responders: Beta(6, 9).
        let arms = ArmData::from_pairs(&[(10, 4)]).unwrap();
        let mut rng = seeds::rng(21);
        let n = 40_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| draw_rates_given_hyper(&arms, 2.0, 3.0, &mut rng)[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let beta = Beta::new(6.0, 9.0).unwrap();
        for q in 1..10 {
            let q = q as f64 / 10.0;
            let emp = xs[(q * n as f64) as usize];
            // 3 standard errors of the empirical CDF at the true quantile
            let cdf = beta.cdf(emp);
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((cdf - q).abs() < 3.0 * se, "q {q}: F(emp) = {cdf}");
        }
    }

    #[test]
    fn empty_arm_matches_prior_predictive() {
        // Importance-sampling oracle: draw (zeta, xi) from the prior, then p.
        let priors = HyperPriors::default();
        let mut rng = seeds::rng(77);
        let n = 1_000_000;
        let zeta_d = rand_distr::Gamma::new(priors.zeta.shape, 1.0 / priors.zeta.rate).unwrap();
        let xi_d = rand_distr::Gamma::new(priors.xi.shape, 1.0 / priors.xi.rate).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            use rand_distr::Distribution;
            let z: f64 = zeta_d.sample(&mut rng);
            let x: f64 = xi_d.sample(&mut rng);
            let p = if z + x > 0.0 {
                beta_variate(z.max(1e-300), x.max(1e-300), &mut rng)
            } else {
                0.5
            };
            sum += p;
            sum2 += p * p;
        }
        let oracle = sum / n as f64;
        let sd = (sum2 / n as f64 - oracle * oracle).sqrt();
        assert!((oracle - 0.5).abs() < 0.005);

        // The chain mixes slowly over this nearly flat prior, so the standard
        // error uses an effective sample size from batch means.
        let arms = ArmData::from_pairs(&[(0, 0)]).unwrap();
        let chain = sample_efficacy_posterior(&arms, &priors, &cfg(40_000), 5).unwrap();
        let xs: Vec<f64> = chain.arm(0).collect();
        let (mean, se) = crate::sampling::batch_mean_se(&xs, 40);
        assert!(
            (mean - oracle).abs() < 3.0 * se.max(sd / (xs.len() as f64).sqrt()),
            "{mean} vs {oracle} (se {se})"
        );
    }

    #[test]
    fn identical_arms_are_exchangeable() {
        let arms = ArmData::from_pairs(&[(12, 5), (12, 5)]).unwrap();
        let chain =
            sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(20_000), 8).unwrap();
        let a: Vec<f64> = chain.arm(0).collect();
        let b: Vec<f64> = chain.arm(1).collect();
        let (ma, sa) = crate::sampling::batch_mean_se(&a, 40);
        let (mb, sb) = crate::sampling::batch_mean_se(&b, 40);
        assert!(
            (ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt(),
            "{ma} vs {mb}"
        );
    }

    #[test]
    fn data_dominate_with_large_arm() {
        let arms = ArmData::from_pairs(&[(200, 70)]).unwrap();
        let chain =
            sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(2000), 3).unwrap();
        assert!((posterior_mean(&chain, 0) - 0.35).abs() <= 0.02);

        let arms = ArmData::from_pairs(&[(10_000, 3000)]).unwrap();
        let chain =
            sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(2000), 3).unwrap();
        assert!((posterior_mean(&chain, 0) - 0.3).abs() <= 0.01);
    }

    #[test]
    fn hierarchical_shrinkage() {
        // Independent Beta(1, 1) fits give 11/22 and 3/22.
        let arms = ArmData::from_pairs(&[(20, 10), (20, 2)]).unwrap();
        let chain =
            sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(20_000), 4).unwrap();
        let (m1, m2) = (posterior_mean(&chain, 0), posterior_mean(&chain, 1));
        assert!(m1 < 11.0 / 22.0 && m2 > 3.0 / 22.0, "{m1} {m2}");
        assert!(m1 > m2);
    }

    #[test]
    fn extra_responder_never_lowers_rank() {
        let base = [(10u32, 3u32), (10, 4), (10, 2)];
        for seed in 0..20 {
            let mut plus = base;
            plus[0].1 += 1;
            let c0 = sample_efficacy_posterior(
                &ArmData::from_pairs(&base).unwrap(),
                &HyperPriors::default(),
                &cfg(2000),
                seed,
            )
            .unwrap();
            let c1 = sample_efficacy_posterior(
                &ArmData::from_pairs(&plus).unwrap(),
                &HyperPriors::default(),
                &cfg(2000),
                seed,
            )
            .unwrap();
            let rank = |c: &EffPosteriorChain| {
                (0..3)
                    .filter(|&k| posterior_mean(c, k) > posterior_mean(c, 0))
                    .count()
            };
            assert!(rank(&c1) <= rank(&c0), "seed {seed}");
        }
    }

    #[test]
    fn queries_on_degenerate_chains() {
        let c = EffPosteriorChain::from_rates(vec![vec![0.5]; 8]).unwrap();
        assert_eq!(prob_exceeds(&c, 0, 0.2), 1.0);
        let c = EffPosteriorChain::from_rates(vec![vec![0.2]; 8]).unwrap();
        assert_eq!(prob_exceeds(&c, 0, 0.2), 0.0);
        let c = EffPosteriorChain::from_rates(
            (0..8)
                .map(|d| vec![if d < 4 { 0.1 } else { 0.3 }])
                .collect(),
        )
        .unwrap();
        assert_eq!(prob_exceeds(&c, 0, 0.2), 0.5);
        let c = EffPosteriorChain::from_rates(vec![vec![0.36]; 5]).unwrap();
        assert!((posterior_mean(&c, 0) - 0.36).abs() < 1e-15);
        let c = EffPosteriorChain::from_rates(vec![vec![0.2], vec![0.4]]).unwrap();
        assert!((posterior_mean(&c, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn seed_determinism_and_errors() {
        let arms = ArmData::from_pairs(&[(5, 1), (6, 3)]).unwrap();
        let a = sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(500), 1).unwrap();
        let b = sample_efficacy_posterior(&arms, &HyperPriors::default(), &cfg(500), 1).unwrap();
        assert_eq!(a, b);
        assert!(ArmData::new(vec![]).is_err());
        assert!(ArmData::from_pairs(&[(2, 3)]).is_err());
    }
}
