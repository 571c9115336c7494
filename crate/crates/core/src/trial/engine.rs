//! The decision engine. Callers supply enrollments and outcomes; the engine
//! appends them to the log together with every decision they trigger. Each
//! decision draws its random numbers from a seed derived from the trial seed
//! and the log position, so re-running a log reproduces it exactly.

use serde::{Deserialize, Serialize};

use crate::dose_models::Combo;
use crate::efficacy::{sample_efficacy_posterior, EffPosteriorChain};
use crate::error::ModelError;
use crate::posterior::{prob_below, sample_toxicity_posterior, ToxPosteriorChain};
use crate::randomization::{draw_assignment, mar_probabilities, RandProbs};
use crate::seeds::{self, tags};
use crate::trial::config::DesignConfig;
use crate::trial::events::{Event, StopReason, SCHEMA_VERSION};
use crate::trial::rules::{
    closures, final_selection, phase1_decision, select_admissible, summarize_arms, ArmSummaries,
    Phase1Action,
};
use crate::trial::state::{InvariantViolation, Phase, TrialResult, TrialState};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("the trial has finished")]
    Finished,
    #[error("all {0} patients have been enrolled")]
    CapacityReached(u32),
    #[error("waiting for toxicity outcomes of {0} patient(s) in the current cohort")]
    AwaitingToxicity(u32),
    #[error("accrual suspended: {0} phase II patient(s) awaiting efficacy")]
    Suspended(u32),
    #[error("finalization has been requested")]
    Finalizing,
    #[error("unknown patient {0}")]
    UnknownPatient(u32),
    #[error("{kind} outcome already recorded for patient {patient}")]
    DuplicateOutcome { patient: u32, kind: &'static str },
    #[error("time {time} is before the trial clock {clock}")]
    TimeWentBackwards { time: f64, clock: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("event {index}: log has {found}, re-execution produced {expected}")]
    Mismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("event {index}: {source}")]
    Rejected { index: usize, source: EngineError },
    #[error("log must start with a header")]
    MissingHeader,
}

impl ReplayError {
    pub fn index(&self) -> Option<usize> {
        match self {
            ReplayError::Mismatch { index, .. } | ReplayError::Rejected { index, .. } => {
                Some(*index)
            }
            ReplayError::MissingHeader => Some(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub patient: u32,
    pub combo: Combo,
}

#[derive(Debug, Clone)]
pub struct TrialEngine {
    state: TrialState,
    log: Vec<Event>,
}

impl TrialEngine {
    pub fn new(config: DesignConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        let header = Event::Header {
            schema_version: SCHEMA_VERSION,
            seed,
            config: config.clone(),
        };
        Ok(TrialEngine {
            state: TrialState::new(seed, config),
            log: vec![header],
        })
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn config(&self) -> &DesignConfig {
        &self.state.config
    }

    pub fn result(&self) -> Option<&TrialResult> {
        self.state.result.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.phase == Phase::Finished
    }

    fn push(&mut self, e: Event) -> Result<(), EngineError> {
        self.state.apply(&e)?;
        self.log.push(e);
        Ok(())
    }

    fn seed(&self, tag: u64) -> u64 {
        seeds::derive(self.state.seed, tag, self.log.len() as u64)
    }

    fn check_time(&self, time: f64) -> Result<(), EngineError> {
        if !(time.is_finite() && time >= self.state.clock) {
            return Err(EngineError::TimeWentBackwards {
                time,
                clock: self.state.clock,
            });
        }
        Ok(())
    }

    /// Why a new patient cannot be enrolled now, if anything.
    pub fn enrollment_block(&self) -> Option<EngineError> {
        let s = &self.state;
        if s.phase == Phase::Finished {
            return Some(EngineError::Finished);
        }
        if s.finalize_requested {
            return Some(EngineError::Finalizing);
        }
        if s.patients.len() as u32 >= s.config.total() {
            return Some(EngineError::CapacityReached(s.config.total()));
        }
        match s.phase {
            Phase::One if s.phase1_cohort_full() => {
                Some(EngineError::AwaitingToxicity(s.pending_cohort_toxicity()))
            }
            Phase::Two if s.pending_phase2() >= s.config.group_size => {
                Some(EngineError::Suspended(s.pending_phase2()))
            }
            _ => None,
        }
    }

    pub fn enroll(&mut self, time: f64) -> Result<Enrollment, EngineError> {
        if let Some(e) = self.enrollment_block() {
            return Err(e);
        }
        self.check_time(time)?;
        let combo = match self.state.phase {
            Phase::One => self.state.current,
            _ => {
                let probs = self
                    .state
                    .probs
                    .clone()
                    .expect("phase II has probabilities");
                let rp = RandProbs {
                    probs,
                    order: Vec::new(),
                };
                let k = draw_assignment(&rp, &mut seeds::rng(self.seed(tags::ASSIGN)));
                self.state.admissible[k]
            }
        };
        let patient = self.state.patients.len() as u32 + 1;
        self.push(Event::Enrolled {
            patient,
            combo,
            time,
        })?;
        Ok(Enrollment { patient, combo })
    }

    fn patient_index(&self, patient: u32) -> Result<usize, EngineError> {
        patient
            .checked_sub(1)
            .map(|p| p as usize)
            .filter(|&p| p < self.state.patients.len())
            .ok_or(EngineError::UnknownPatient(patient))
    }

    pub fn record_toxicity(
        &mut self,
        patient: u32,
        dlt: bool,
        time: f64,
    ) -> Result<(), EngineError> {
        if self.is_finished() {
            return Err(EngineError::Finished);
        }
        let idx = self.patient_index(patient)?;
        if self.state.patients[idx].toxicity.is_some() {
            return Err(EngineError::DuplicateOutcome {
                patient,
                kind: "toxicity",
            });
        }
        self.check_time(time)?;
        self.push(Event::Toxicity { patient, dlt, time })?;
        let s = &self.state;
        if s.phase == Phase::One
            && !s.finalize_requested
            && s.phase1_cohort_full()
            && s.pending_cohort_toxicity() == 0
        {
            if s.phase1_enrolled() >= s.config.n1 {
                self.end_phase_one()?;
            } else {
                self.phase_one_decision()?;
            }
        }
        Ok(())
    }

    pub fn record_efficacy(
        &mut self,
        patient: u32,
        response: bool,
        time: f64,
    ) -> Result<(), EngineError> {
        if self.is_finished() {
            return Err(EngineError::Finished);
        }
        let idx = self.patient_index(patient)?;
        if self.state.patients[idx].efficacy.is_some() {
            return Err(EngineError::DuplicateOutcome {
                patient,
                kind: "efficacy",
            });
        }
        self.check_time(time)?;
        self.push(Event::Efficacy {
            patient,
            response,
            time,
        })?;
        let s = &self.state;
        // no look once every phase II patient has been randomized
        if s.phase == Phase::Two
            && !s.finalize_requested
            && s.since_look >= s.config.group_size
            && s.phase2_enrolled() < s.config.n2
        {
            self.phase_two_look(None)?;
        }
        Ok(())
    }

    /// Ends the trial: a final analysis in phase II, otherwise no selection.
    pub fn finalize(&mut self, time: f64) -> Result<TrialResult, EngineError> {
        if self.is_finished() {
            return Err(EngineError::Finished);
        }
        if self.state.finalize_requested {
            return Err(EngineError::Finalizing);
        }
        self.check_time(time)?;
        self.push(Event::Finalize { time })?;
        if self.state.phase == Phase::Two {
            self.final_analysis()?;
        } else {
            self.finish(None, StopReason::StoppedInPhaseOne, None)?;
        }
        Ok(self.state.result.clone().expect("finished"))
    }

    fn fit_toxicity(&self) -> Result<ToxPosteriorChain, EngineError> {
        let c = &self.state.config;
        Ok(sample_toxicity_posterior(
            &self.state.counts,
            &c.grid,
            &c.tox_priors,
            &c.mcmc,
            self.seed(tags::TOX_FIT),
        )?)
    }

    fn finish(
        &mut self,
        selected: Option<Combo>,
        reason: StopReason,
        summaries: Option<ArmSummaries>,
    ) -> Result<(), EngineError> {
        let patients = self.state.patients_per_combo();
        let duration = self.state.duration();
        self.push(Event::Finished {
            selected,
            reason,
            patients,
            duration,
            summaries,
        })
    }

    fn phase_one_decision(&mut self) -> Result<(), EngineError> {
        let chain = self.fit_toxicity()?;
        let grid = &self.state.config.grid;
        let (action, _) = phase1_decision(self.state.current, grid, &chain, &self.state.config);
        let prob_below = (0..grid.cells())
            .map(|k| prob_below(&chain, k, self.state.config.phi_t))
            .collect();
        self.push(Event::Decision {
            from: self.state.current,
            action,
            prob_below,
            mean: chain.mean_surface(),
        })?;
        if action == Phase1Action::Terminate {
            self.finish(None, StopReason::Toxicity, None)?;
        }
        Ok(())
    }

    fn end_phase_one(&mut self) -> Result<(), EngineError> {
        let chain = self.fit_toxicity()?;
        let (combos, prob_below) =
            select_admissible(&chain, &self.state.config.grid, &self.state.config);
        let empty = combos.is_empty();
        self.push(Event::Admissible {
            combos,
            prob_below,
            mean: chain.mean_surface(),
        })?;
        if empty {
            return self.finish(None, StopReason::NoAdmissible, None);
        }
        self.phase_two_look(Some(chain))
    }

    /// Refits both models and closes arms. Returns `None` when every arm is
    /// closed, in which case the trial has finished.
    fn monitor(
        &mut self,
        tox: Option<ToxPosteriorChain>,
    ) -> Result<Option<(ArmSummaries, EffPosteriorChain)>, EngineError> {
        let tox = match tox {
            Some(c) => c,
            None => self.fit_toxicity()?,
        };
        let c = &self.state.config;
        let eff = sample_efficacy_posterior(
            &self.state.arm_data(),
            &c.eff_priors,
            &c.mcmc,
            self.seed(tags::EFF_FIT),
        )?;
        let summaries = summarize_arms(&self.state.admissible, &c.grid, &tox, &eff, c);
        for (k, reason, value) in closures(
            &self.state.open,
            &summaries.tox_below,
            &summaries.eff_exceeds,
            c,
        ) {
            let combo = self.state.admissible[k];
            self.push(Event::Closed {
                combo,
                reason,
                value,
            })?;
        }
        if !self.state.open.iter().any(|&o| o) {
            self.finish(None, StopReason::AllArmsClosed, Some(summaries))?;
            return Ok(None);
        }
        Ok(Some((summaries, eff)))
    }

    fn phase_two_look(&mut self, tox: Option<ToxPosteriorChain>) -> Result<(), EngineError> {
        let Some((summaries, eff)) = self.monitor(tox)? else {
            return Ok(());
        };
        let open: Vec<usize> = (0..self.state.open.len())
            .filter(|&k| self.state.open[k])
            .collect();
        let rp = mar_probabilities(&eff, &open)?;
        let order = rp.order.iter().map(|&k| self.state.admissible[k]).collect();
        self.push(Event::Probabilities {
            look: self.state.looks + 1,
            summaries,
            probs: rp.probs,
            order,
        })
    }

    fn final_analysis(&mut self) -> Result<(), EngineError> {
        let Some((summaries, _)) = self.monitor(None)? else {
            return Ok(());
        };
        let k = final_selection(&self.state.open, &summaries.eff_mean);
        let selected = k.map(|k| self.state.admissible[k]);
        self.finish(selected, StopReason::Completed, Some(summaries))
    }

    /// Re-executes a log, checking that every decision and randomization it
    /// records is reproduced exactly. A log cut short inside a request is
    /// completed with the decisions it was missing.
    pub fn replay(events: &[Event]) -> Result<Self, ReplayError> {
        let Some(Event::Header { seed, config, .. }) = events.first() else {
            return Err(ReplayError::MissingHeader);
        };
        let mut engine = TrialEngine::new(config.clone(), *seed)
            .map_err(|source| ReplayError::Rejected { index: 0, source })?;
        if engine.log[0] != events[0] {
            return Err(ReplayError::Mismatch {
                index: 0,
                expected: "a supported header".into(),
                found: "header".into(),
            });
        }
        for (index, e) in events.iter().enumerate().skip(1) {
            if index >= engine.log.len() {
                let rejected = |source| ReplayError::Rejected { index, source };
                match *e {
                    Event::Enrolled { time, .. } => {
                        engine.enroll(time).map(|_| ()).map_err(rejected)?
                    }
                    Event::Toxicity { patient, dlt, time } => engine
                        .record_toxicity(patient, dlt, time)
                        .map_err(rejected)?,
                    Event::Efficacy {
                        patient,
                        response,
                        time,
                    } => engine
                        .record_efficacy(patient, response, time)
                        .map_err(rejected)?,
                    Event::Finalize { time } => {
                        engine.finalize(time).map(|_| ()).map_err(rejected)?
                    }
                    _ => {
                        return Err(ReplayError::Mismatch {
                            index,
                            expected: "an enrollment or outcome".into(),
                            found: e.kind().into(),
                        })
                    }
                }
            }
            if engine.log[index] != *e {
                return Err(ReplayError::Mismatch {
                    index,
                    expected: serde_json::to_string(&engine.log[index]).unwrap_or_default(),
                    found: serde_json::to_string(e).unwrap_or_default(),
                });
            }
        }
        Ok(engine)
    }
}
