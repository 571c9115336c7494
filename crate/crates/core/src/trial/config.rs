use serde::{Deserialize, Serialize};

use crate::dose_models::{DoseGrid, ToxicityPriors};
use crate::efficacy::HyperPriors;
use crate::error::{ModelError, Result};
use crate::posterior::McmcConfig;

/// Design parameters of one phase I/II trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub grid: DoseGrid,
    /// Highest acceptable toxicity probability.
    pub phi_t: f64,
    /// Lowest acceptable efficacy probability.
    pub phi_e: f64,
    pub n1: u32,
    pub n2: u32,
    pub cohort_size: u32,
    pub c_e: f64,
    pub c_d: f64,
    pub c_a: f64,
    pub c_f: f64,
    /// Phase II outcomes between randomization updates.
    pub group_size: u32,
    /// Months needed to adjudicate efficacy.
    pub assess_window: f64,
    /// Patients per month.
    pub accrual_rate: f64,
    /// Keep at most this many admissible combinations, those with posterior
    /// mean toxicity closest to `phi_t`.
    pub admissible_cap: Option<usize>,
    pub tox_priors: ToxicityPriors,
    pub eff_priors: HyperPriors,
    pub mcmc: McmcConfig,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            grid: DoseGrid::melanoma(),
            phi_t: 0.33,
            phi_e: 0.2,
            n1: 20,
            n2: 60,
            cohort_size: 1,
            c_e: 0.8,
            c_d: 0.45,
            c_a: 0.45,
            c_f: 0.1,
            group_size: 1,
            assess_window: 3.0,
            accrual_rate: 2.0,
            admissible_cap: None,
            tox_priors: ToxicityPriors::default(),
            eff_priors: HyperPriors::default(),
            mcmc: McmcConfig::default(),
        }
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ModelError::domain(format!(
            "{name}: must lie strictly between 0 and 1 (got {v})"
        )))
    }
}

impl DesignConfig {
    pub fn total(&self) -> u32 {
        self.n1 + self.n2
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phi_t", self.phi_t),
            ("phi_e", self.phi_e),
            ("c_e", self.c_e),
            ("c_d", self.c_d),
            ("c_a", self.c_a),
            ("c_f", self.c_f),
        ] {
            open_unit(name, v)?;
        }
        if self.c_d >= self.c_e {
            return Err(ModelError::domain("c_d: must be below c_e"));
        }
        if self.n1 == 0 {
            return Err(ModelError::domain("n1: must be positive"));
        }
        if self.n2 == 0 {
            return Err(ModelError::domain("n2: must be positive"));
        }
        if self.cohort_size == 0 || self.cohort_size > self.n1 {
            return Err(ModelError::domain("cohort_size: must be between 1 and n1"));
        }
        if self.group_size == 0 || self.group_size > self.n2 {
            return Err(ModelError::domain("group_size: must be between 1 and n2"));
        }
        if !(self.assess_window.is_finite() && self.assess_window > 0.0) {
            return Err(ModelError::domain("assess_window: must be positive"));
        }
        if !(self.accrual_rate.is_finite() && self.accrual_rate > 0.0) {
            return Err(ModelError::domain("accrual_rate: must be positive"));
        }
        if self.admissible_cap == Some(0) {
            return Err(ModelError::domain(
                "admissible_cap: must be positive when set",
            ));
        }
        if self.mcmc.n_keep < 100 {
            return Err(ModelError::domain(
                "mcmc.n_keep: decisions need at least 100 draws",
            ));
        }
        self.mcmc.validate()?;
        self.tox_priors
            .validate()
            .map_err(|e| ModelError::domain(format!("tox_priors: {e}")))?;
        self.eff_priors
            .validate()
            .map_err(|e| ModelError::domain(format!("eff_priors: {e}")))?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DesignConfig =
            toml::from_str(text).map_err(|e| ModelError::domain(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = DesignConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total(), 80);
        assert_eq!(c.tox_priors.gamma.shape, 0.1);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c =
            DesignConfig::from_toml("group_size = 6\naccrual_rate = 8.0\n[mcmc]\nn_keep = 500\n")
                .unwrap();
        assert_eq!(c.group_size, 6);
        assert_eq!(c.mcmc.n_keep, 500);
        assert_eq!(c.mcmc.n_burn, 100);
        assert_eq!(c.phi_t, 0.33);
    }

    #[test]
    fn errors_name_the_field() {
        let e = DesignConfig::from_toml("c_d = 0.9\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("c_d"), "{e}");
        let e = DesignConfig::from_toml("group_size = 61\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("group_size"), "{e}");
        let e = DesignConfig::from_toml("phi_tt = 0.3\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("phi_tt"), "{e}");
        let e = DesignConfig::from_toml("[grid]\na = [0.2, 0.1]\nb = [0.1]\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("increasing"), "{e}");
    }
}
