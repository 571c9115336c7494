//! Simulated conduct of one trial against a known truth. Patients arrive as a
//! Poisson process; toxicity is seen at enrollment and efficacy either at
//! enrollment or after a late-onset delay.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::seeds::{self, tags};
use crate::trial::config::DesignConfig;
use crate::trial::engine::{EngineError, TrialEngine};
use crate::trial::onset::sample_outcome_time;
use crate::trial::scenario::Scenario;
use crate::trial::state::{Phase, TrialResult};

struct Pending {
    time: f64,
    seq: u32,
    patient: u32,
    response: bool,
}

/// Runs one trial to completion and returns the engine with its full log.
pub fn simulate_trial(
    scenario: &Scenario,
    config: &DesignConfig,
    seed: u64,
) -> Result<TrialEngine, EngineError> {
    scenario.check_grid(&config.grid)?;
    let mut engine = TrialEngine::new(config.clone(), seed)?;
    let mut arrivals = seeds::rng(seeds::derive(seed, tags::ARRIVALS, 0));
    let mut outcomes = seeds::rng(seeds::derive(seed, tags::OUTCOMES, 0));
    let gap = Exp::new(config.accrual_rate)
        .map_err(|e| crate::ModelError::domain(format!("accrual_rate: {e}")))?;
    let mut next_arrival = gap.sample(&mut arrivals);
    let mut pending: Vec<Pending> = Vec::new();

    while !engine.is_finished() {
        let clock = engine.state().clock;
        let first_due = (0..pending.len()).min_by(|&a, &b| {
            let (x, y) = (&pending[a], &pending[b]);
            x.time.total_cmp(&y.time).then(x.seq.cmp(&y.seq))
        });
        let t_enroll = next_arrival.max(clock);
        let enroll_now = engine.enrollment_block().is_none()
            && first_due.is_none_or(|k| t_enroll < pending[k].time);
        if enroll_now {
            let e = engine.enroll(t_enroll)?;
            next_arrival += gap.sample(&mut arrivals);
            let cell = config.grid.index(e.combo);
            let dlt = outcomes.random::<f64>() < scenario.toxicity.values[cell];
            let response = outcomes.random::<f64>() < scenario.efficacy.values[cell];
            let delay = scenario
                .hazard
                .map(|h| sample_outcome_time(response, h, config.assess_window, &mut outcomes));
            match delay {
                Some(d) => {
                    pending.push(Pending {
                        time: t_enroll + d,
                        seq: e.patient,
                        patient: e.patient,
                        response,
                    });
                    engine.record_toxicity(e.patient, dlt, t_enroll)?;
                }
                // In phase I the response goes in first so that it is part of
                // the data when phase I ends on this patient's toxicity.
                None if engine.state().phase == Phase::One => {
                    engine.record_efficacy(e.patient, response, t_enroll)?;
                    engine.record_toxicity(e.patient, dlt, t_enroll)?;
                }
                None => {
                    engine.record_toxicity(e.patient, dlt, t_enroll)?;
                    if !engine.is_finished() {
                        engine.record_efficacy(e.patient, response, t_enroll)?;
                    }
                }
            }
        } else if let Some(k) = first_due {
            let p = pending.swap_remove(k);
            engine.record_efficacy(p.patient, p.response, p.time)?;
        } else {
            engine.finalize(clock)?;
        }
    }
    Ok(engine)
}

pub fn run_trial(
    scenario: &Scenario,
    config: &DesignConfig,
    seed: u64,
) -> Result<TrialResult, EngineError> {
    let engine = simulate_trial(scenario, config, seed)?;
    Ok(engine.result().cloned().expect("simulated trial finishes"))
}
