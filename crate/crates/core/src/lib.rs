//! Bayesian phase I/II design for two-drug combination trials.
//!
//! Phase I finds a set of admissible dose combinations with a copula-type
//! toxicity model; phase II randomizes patients among them with
//! moving-reference adaptive randomization driven by a hierarchical
//! beta-binomial efficacy model. [`simulator`] estimates the design's
//! operating characteristics by Monte Carlo.

pub mod dose_models;
pub mod efficacy;
pub mod error;
pub mod posterior;
pub mod randomization;
pub mod sampling;
pub mod seeds;
pub mod simulator;
pub mod trial;

pub use dose_models::{
    Combo, DoseGrid, GammaPrior, ToxicityCounts, ToxicityParams, ToxicityPriors,
};
pub use error::ModelError;
pub use posterior::{prob_below, sample_toxicity_posterior, McmcConfig, ToxPosteriorChain};
