//! Times to efficacy for late-onset outcomes.
//!
//! Responders respond within the assessment window; their response time is
//! drawn from the hazard pattern's distribution truncated to `[0, window]`.
//! Non-responders are adjudicated at the end of the window.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Untruncated probability that a responder responds within the window.
pub const WITHIN_WINDOW: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardPattern {
    Increasing,
    Constant,
    Decreasing,
    Hump,
}

impl HazardPattern {
    pub const ALL: [HazardPattern; 4] = [
        HazardPattern::Increasing,
        HazardPattern::Constant,
        HazardPattern::Decreasing,
        HazardPattern::Hump,
    ];

    /// Shape parameter: Weibull for the monotone patterns, log-logistic for
    /// the hump.
    pub fn shape(self) -> f64 {
        match self {
            HazardPattern::Increasing => 2.0,
            HazardPattern::Constant => 1.0,
            HazardPattern::Decreasing => 0.5,
            HazardPattern::Hump => 2.0,
        }
    }

    /// Scale giving `F(window) = WITHIN_WINDOW`.
    pub fn scale(self, window: f64) -> f64 {
        let k = self.shape();
        match self {
            HazardPattern::Hump => window / (WITHIN_WINDOW / (1.0 - WITHIN_WINDOW)).powf(1.0 / k),
            _ => window / (-(1.0 - WITHIN_WINDOW).ln()).powf(1.0 / k),
        }
    }

    pub fn cdf(self, t: f64, window: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (k, lambda) = (self.shape(), self.scale(window));
        let z = (t / lambda).powf(k);
        match self {
            HazardPattern::Hump => z / (1.0 + z),
            _ => -(-z).exp_m1(),
        }
    }

    fn quantile(self, u: f64, window: f64) -> f64 {
        let (k, lambda) = (self.shape(), self.scale(window));
        match self {
            HazardPattern::Hump => lambda * (u / (1.0 - u)).powf(1.0 / k),
            _ => lambda * (-(-u).ln_1p()).powf(1.0 / k),
        }
    }
}

impl std::fmt::Display for HazardPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HazardPattern::Increasing => "increasing",
            HazardPattern::Constant => "constant",
            HazardPattern::Decreasing => "decreasing",
            HazardPattern::Hump => "hump",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for HazardPattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        HazardPattern::ALL
            .into_iter()
            .find(|h| h.to_string() == s)
            .ok_or_else(|| {
                format!("unknown hazard pattern `{s}` (increasing, constant, decreasing, hump)")
            })
    }
}

/// Months from treatment to efficacy adjudication.
pub fn sample_outcome_time<R: Rng + ?Sized>(
    responder: bool,
    pattern: HazardPattern,
    window: f64,
    rng: &mut R,
) -> f64 {
    if !responder {
        return window;
    }
    let u = rng.random::<f64>() * pattern.cdf(window, window);
    pattern.quantile(u, window).clamp(0.0, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn non_responders_wait_the_full_window() {
        let mut rng = seeds::rng(0);
        for h in HazardPattern::ALL {
            assert_eq!(sample_outcome_time(false, h, 3.0, &mut rng), 3.0);
        }
    }

    #[test]
    fn scale_puts_most_responses_inside_window() {
        for h in HazardPattern::ALL {
            assert!((h.cdf(3.0, 3.0) - WITHIN_WINDOW).abs() < 1e-12, "{h}");
        }
    }

    #[test]
    fn responder_times_are_truncated() {
        let mut rng = seeds::rng(1);
        for h in HazardPattern::ALL {
            for _ in 0..10_000 {
                let t = sample_outcome_time(true, h, 3.0, &mut rng);
                assert!((0.0..=3.0).contains(&t));
            }
        }
    }

    #[test]
    fn constant_hazard_gives_truncated_exponential_mean() {
        let w = 3.0;
        let rate = 5f64.ln() / w;
        let analytic = 1.0 / rate - w * (-rate * w).exp() / (1.0 - (-rate * w).exp());
        let mut rng = seeds::rng(2);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_outcome_time(true, HazardPattern::Constant, w, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - analytic).abs() < 0.02, "{mean} vs {analytic}");
    }

    #[test]
    fn hazard_shapes_order_the_timing() {
        // Decreasing hazards front-load responses, increasing ones delay them.
        let mut rng = seeds::rng(3);
        let mean = |h: HazardPattern, rng: &mut rand_chacha::ChaCha8Rng| {
            (0..20_000)
                .map(|_| sample_outcome_time(true, h, 3.0, rng))
                .sum::<f64>()
                / 20_000.0
        };
        let dec = mean(HazardPattern::Decreasing, &mut rng);
        let con = mean(HazardPattern::Constant, &mut rng);
        let inc = mean(HazardPattern::Increasing, &mut rng);
        assert!(dec < con && con < inc, "{dec} {con} {inc}");
    }

    #[test]
    fn names_round_trip() {
        for h in HazardPattern::ALL {
            assert_eq!(h.to_string().parse::<HazardPattern>().unwrap(), h);
        }
        assert!("flat".parse::<HazardPattern>().is_err());
    }
}
