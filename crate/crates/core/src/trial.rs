//! The two-phase trial: design configuration, decision rules, the event log
//! and the engine that drives it.

pub mod config;
pub mod engine;
pub mod events;
pub mod onset;
pub mod rules;
pub mod runner;
pub mod scenario;
pub mod state;

pub use config::DesignConfig;
pub use engine::{EngineError, Enrollment, ReplayError, TrialEngine};
pub use events::{read_events, write_events, Event, LogError, ParsedLog, StopReason};
pub use onset::HazardPattern;
pub use rules::{ArmSummaries, CloseReason, Phase1Action};
pub use runner::{run_trial, simulate_trial};
pub use scenario::Scenario;
pub use state::{Phase, TrialResult, TrialState};
