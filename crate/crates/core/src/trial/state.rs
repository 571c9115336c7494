//! Trial state as a left fold over the event log, with the invariants every
//! log must satisfy.

use serde::{Deserialize, Serialize};

use crate::dose_models::{Combo, ToxicityCounts};
use crate::efficacy::{ArmData, ArmTally};
use crate::trial::config::DesignConfig;
use crate::trial::events::{Event, StopReason, SCHEMA_VERSION};
use crate::trial::rules::{ArmSummaries, CloseReason, Phase1Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    One,
    Two,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u32,
    pub combo: Combo,
    /// 1 or 2.
    pub phase: u8,
    pub enrolled_at: f64,
    pub toxicity: Option<bool>,
    pub efficacy: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    pub combo: Combo,
    pub reason: CloseReason,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub selected: Option<Combo>,
    pub reason: StopReason,
    /// Patients treated per combination, row-major.
    pub patients: Vec<u32>,
    pub phase1_patients: u32,
    pub phase2_patients: u32,
    pub admissible: Vec<Combo>,
    /// Months from the first enrollment to the last observed outcome.
    pub duration: f64,
}

/// Latest toxicity summary over the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub prob_below: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub seed: u64,
    pub config: DesignConfig,
    pub phase: Phase,
    /// Phase I position.
    pub current: Combo,
    pub patients: Vec<PatientRecord>,
    pub counts: ToxicityCounts,
    pub admissible: Vec<Combo>,
    pub open: Vec<bool>,
    pub closures: Vec<Closure>,
    pub probs: Option<Vec<f64>>,
    pub order: Vec<Combo>,
    pub arm_summaries: Option<ArmSummaries>,
    pub grid_summary: Option<GridSummary>,
    pub last_action: Option<Phase1Action>,
    pub looks: u32,
    /// Phase I patients enrolled since the last dose decision.
    pub cohort_enrolled: u32,
    /// Phase II efficacy outcomes since the last look.
    pub since_look: u32,
    pub clock: f64,
    pub first_enrollment: Option<f64>,
    pub last_outcome: Option<f64>,
    pub finalize_requested: bool,
    pub result: Option<TrialResult>,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("event {index} ({kind}): {message}")]
pub struct InvariantViolation {
    /// Zero-based position in the log.
    pub index: usize,
    pub kind: &'static str,
    pub message: String,
}

impl TrialState {
    pub fn new(seed: u64, config: DesignConfig) -> Self {
        let counts = ToxicityCounts::for_grid(&config.grid);
        TrialState {
            seed,
            config,
            phase: Phase::One,
            current: Combo::new(0, 0),
            patients: Vec::new(),
            counts,
            admissible: Vec::new(),
            open: Vec::new(),
            closures: Vec::new(),
            probs: None,
            order: Vec::new(),
            arm_summaries: None,
            grid_summary: None,
            last_action: None,
            looks: 0,
            cohort_enrolled: 0,
            since_look: 0,
            clock: 0.0,
            first_enrollment: None,
            last_outcome: None,
            finalize_requested: false,
            result: None,
            events: 1,
        }
    }

    /// Folds a whole log, checking every invariant.
    pub fn fold(events: &[Event]) -> Result<Self, InvariantViolation> {
        let mut it = events.iter();
        let mut state = match it.next() {
            Some(Event::Header {
                schema_version,
                seed,
                config,
            }) if *schema_version == SCHEMA_VERSION => {
                config.validate().map_err(|e| InvariantViolation {
                    index: 0,
                    kind: "header",
                    message: e.to_string(),
                })?;
                TrialState::new(*seed, config.clone())
            }
            Some(e) => {
                return Err(InvariantViolation {
                    index: 0,
                    kind: e.kind(),
                    message: "expected a supported header".into(),
                })
            }
            None => {
                return Err(InvariantViolation {
                    index: 0,
                    kind: "header",
                    message: "empty log".into(),
                })
            }
        };
        for e in it {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn phase1_enrolled(&self) -> u32 {
        self.patients.iter().filter(|p| p.phase == 1).count() as u32
    }

    pub fn phase2_enrolled(&self) -> u32 {
        self.patients.iter().filter(|p| p.phase == 2).count() as u32
    }

    /// Phase II patients still awaiting efficacy adjudication.
    pub fn pending_phase2(&self) -> u32 {
        self.patients
            .iter()
            .filter(|p| p.phase == 2 && p.efficacy.is_none())
            .count() as u32
    }

    /// Phase I patients in the current cohort still awaiting toxicity.
    pub fn pending_cohort_toxicity(&self) -> u32 {
        let n = self.cohort_enrolled as usize;
        self.patients
            .iter()
            .filter(|p| p.phase == 1)
            .rev()
            .take(n)
            .filter(|p| p.toxicity.is_none())
            .count() as u32
    }

    pub fn phase1_cohort_full(&self) -> bool {
        self.cohort_enrolled >= self.config.cohort_size || self.phase1_enrolled() >= self.config.n1
    }

    pub fn arm_index(&self, c: Combo) -> Option<usize> {
        self.admissible.iter().position(|&a| a == c)
    }

    /// Efficacy data of the admissible arms, phase I patients included.
    pub fn arm_data(&self) -> ArmData {
        let mut arms = vec![ArmTally::default(); self.admissible.len()];
        for p in &self.patients {
            if let (Some(k), Some(r)) = (self.arm_index(p.combo), p.efficacy) {
                arms[k].n += 1;
                arms[k].y += u32::from(r);
            }
        }
        ArmData { arms }
    }

    /// Patients treated per combination, row-major.
    pub fn patients_per_combo(&self) -> Vec<u32> {
        let mut v = vec![0; self.config.grid.cells()];
        for p in &self.patients {
            v[self.config.grid.index(p.combo)] += 1;
        }
        v
    }

    pub fn duration(&self) -> f64 {
        match (self.first_enrollment, self.last_outcome) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    fn outcome(&mut self, patient: u32, time: f64) -> Result<usize, String> {
        let idx = patient
            .checked_sub(1)
            .map(|i| i as usize)
            .filter(|&i| i < self.patients.len());
        let idx = idx.ok_or_else(|| format!("unknown patient {patient}"))?;
        if time < self.patients[idx].enrolled_at {
            return Err(format!("outcome for patient {patient} precedes enrollment"));
        }
        self.last_outcome = Some(self.last_outcome.map_or(time, |t: f64| t.max(time)));
        Ok(idx)
    }

    /// Applies one event, rejecting any that breaks an invariant.
    pub fn apply(&mut self, e: &Event) -> Result<(), InvariantViolation> {
        let index = self.events;
        self.apply_inner(e).map_err(|message| InvariantViolation {
            index,
            kind: e.kind(),
            message,
        })?;
        self.events += 1;
        Ok(())
    }

    fn apply_inner(&mut self, e: &Event) -> Result<(), String> {
        if self.phase == Phase::Finished {
            return Err("trial already finished".into());
        }
        if let Event::Enrolled { time, .. }
        | Event::Toxicity { time, .. }
        | Event::Efficacy { time, .. }
        | Event::Finalize { time } = e
        {
            if !(time.is_finite() && *time >= self.clock) {
                return Err(format!(
                    "time {time} is before the trial clock {}",
                    self.clock
                ));
            }
            self.clock = *time;
        }
        let grid = &self.config.grid;
        match e {
            Event::Header { .. } => return Err("header after the first line".into()),
            Event::Enrolled {
                patient,
                combo,
                time,
            } => {
                if *patient as usize != self.patients.len() + 1 {
                    return Err(format!("patient {patient} enrolled out of sequence"));
                }
                if !grid.contains(*combo) {
                    return Err(format!("{combo} is outside the grid"));
                }
                if self.finalize_requested {
                    return Err("enrollment after finalization".into());
                }
                let phase = match self.phase {
                    Phase::One => {
                        if self.phase1_cohort_full() {
                            return Err("phase I cohort is complete".into());
                        }
                        if *combo != self.current {
                            return Err(format!("phase I patient must receive {}", self.current));
                        }
                        self.cohort_enrolled += 1;
                        1
                    }
                    Phase::Two => {
                        if self.phase2_enrolled() >= self.config.n2 {
                            return Err("phase II is fully enrolled".into());
                        }
                        if self.pending_phase2() >= self.config.group_size {
                            return Err("accrual is suspended".into());
                        }
                        match self.arm_index(*combo) {
                            Some(k)
                                if self.open[k]
                                    && self.probs.as_ref().is_some_and(|p| p[k] > 0.0) => {}
                            _ => {
                                return Err(format!(
                                    "{combo} is not an open arm with positive probability"
                                ))
                            }
                        }
                        2
                    }
                    Phase::Finished => unreachable!(),
                };
                self.first_enrollment.get_or_insert(*time);
                self.patients.push(PatientRecord {
                    id: *patient,
                    combo: *combo,
                    phase,
                    enrolled_at: *time,
                    toxicity: None,
                    efficacy: None,
                });
            }
            Event::Toxicity { patient, dlt, time } => {
                let idx = self.outcome(*patient, *time)?;
                let p = &mut self.patients[idx];
                if p.toxicity.replace(*dlt).is_some() {
                    return Err(format!("duplicate toxicity outcome for patient {patient}"));
                }
                let cell = self.config.grid.index(p.combo);
                self.counts.record(cell, *dlt);
            }
            Event::Efficacy {
                patient,
                response,
                time,
            } => {
                let idx = self.outcome(*patient, *time)?;
                let p = &mut self.patients[idx];
                if p.efficacy.replace(*response).is_some() {
                    return Err(format!("duplicate efficacy outcome for patient {patient}"));
                }
                if p.phase == 2 {
                    self.since_look += 1;
                }
            }
            Event::Finalize { .. } => {
                if self.finalize_requested {
                    return Err("finalize requested twice".into());
                }
                self.finalize_requested = true;
            }
            Event::Decision {
                from,
                action,
                prob_below,
                mean,
            } => {
                if self.phase != Phase::One || *from != self.current {
                    return Err("decision does not match the phase I position".into());
                }
                if prob_below.len() != grid.cells() || mean.len() != grid.cells() {
                    return Err("decision summary has the wrong size".into());
                }
                if self.pending_cohort_toxicity() > 0 || !self.phase1_cohort_full() {
                    return Err("decision before the cohort's toxicity outcomes".into());
                }
                match action {
                    Phase1Action::Escalate { to } | Phase1Action::DeEscalate { to } => {
                        if !grid.contains(*to) {
                            return Err(format!("{to} is outside the grid"));
                        }
                        self.current = *to;
                    }
                    Phase1Action::Stay | Phase1Action::Terminate => {}
                }
                self.cohort_enrolled = 0;
                self.last_action = Some(*action);
                self.grid_summary = Some(GridSummary {
                    prob_below: prob_below.clone(),
                    mean: mean.clone(),
                });
            }
            Event::Admissible {
                combos,
                prob_below,
                mean,
            } => {
                if self.phase != Phase::One {
                    return Err("admissible set outside phase I".into());
                }
                if self.phase1_enrolled() != self.config.n1 || self.pending_cohort_toxicity() > 0 {
                    return Err("phase I is not complete".into());
                }
                if combos.iter().any(|c| !grid.contains(*c))
                    || combos.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(
                        "admissible set must be distinct grid combinations in grid order".into(),
                    );
                }
                if prob_below.len() != grid.cells() || mean.len() != grid.cells() {
                    return Err("admissible summary has the wrong size".into());
                }
                self.admissible = combos.clone();
                self.open = vec![true; combos.len()];
                self.grid_summary = Some(GridSummary {
                    prob_below: prob_below.clone(),
                    mean: mean.clone(),
                });
                self.phase = Phase::Two;
            }
            Event::Closed {
                combo,
                reason,
                value,
            } => {
                let k = self
                    .arm_index(*combo)
                    .ok_or_else(|| format!("{combo} is not an arm"))?;
                if !self.open[k] {
                    return Err(format!("{combo} is already closed"));
                }
                self.open[k] = false;
                if let Some(p) = self.probs.as_mut() {
                    p[k] = 0.0;
                }
                self.closures.push(Closure {
                    combo: *combo,
                    reason: *reason,
                    value: *value,
                });
            }
            Event::Probabilities {
                look,
                summaries,
                probs,
                order,
            } => {
                if self.phase != Phase::Two {
                    return Err("randomization probabilities outside phase II".into());
                }
                if *look != self.looks + 1 {
                    return Err(format!("look {look} out of sequence"));
                }
                let k = self.admissible.len();
                if probs.len() != k
                    || summaries.tox_below.len() != k
                    || summaries.eff_mean.len() != k
                {
                    return Err("probabilities do not cover the arms".into());
                }
                if probs
                    .iter()
                    .zip(&self.open)
                    .any(|(p, open)| !(p.is_finite() && *p >= 0.0) || (!open && *p != 0.0))
                {
                    return Err("closed arms must have zero probability".into());
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err("probabilities must sum to one".into());
                }
                self.looks = *look;
                self.since_look = 0;
                self.probs = Some(probs.clone());
                self.order = order.clone();
                self.arm_summaries = Some(summaries.clone());
            }
            Event::Finished {
                selected,
                reason,
                patients,
                duration,
                summaries,
            } => {
                if *patients != self.patients_per_combo() {
                    return Err("patient counts differ from the enrollment record".into());
                }
                if let Some(c) = selected {
                    match self.arm_index(*c) {
                        Some(k) if self.open[k] => {}
                        _ => return Err(format!("selected {c} is not an open arm")),
                    }
                }
                if (duration - self.duration()).abs() > 1e-9 {
                    return Err("duration differs from the event times".into());
                }
                if let Some(s) = summaries {
                    self.arm_summaries = Some(s.clone());
                }
                self.result = Some(TrialResult {
                    selected: *selected,
                    reason: *reason,
                    patients: patients.clone(),
                    phase1_patients: self.phase1_enrolled(),
                    phase2_patients: self.phase2_enrolled(),
                    admissible: self.admissible.clone(),
                    duration: *duration,
                });
                self.phase = Phase::Finished;
            }
        }
        let total = self.config.total() as usize;
        if self.patients.len() > total {
            return Err(format!("more than {total} patients enrolled"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Event {
        Event::Header {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            config: DesignConfig::default(),
        }
    }

    #[test]
    fn folds_phase_one_events() {
        let log = vec![
            header(),
            Event::Enrolled {
                patient: 1,
                combo: Combo::new(0, 0),
                time: 0.5,
            },
            Event::Toxicity {
                patient: 1,
                dlt: true,
                time: 0.5,
            },
            Event::Efficacy {
                patient: 1,
                response: false,
                time: 3.5,
            },
        ];
        let s = TrialState::fold(&log).unwrap();
        assert_eq!(s.counts.n()[0], 1);
        assert_eq!(s.counts.x()[0], 1);
        assert_eq!(s.clock, 3.5);
        assert_eq!(s.duration(), 3.0);
        assert_eq!(s.events, 4);
    }

    #[test]
    fn rejects_bad_sequences() {
        let enroll = |p: u32, t: f64| Event::Enrolled {
            patient: p,
            combo: Combo::new(0, 0),
            time: t,
        };
        let cases: Vec<Vec<Event>> = vec![
            vec![header(), enroll(2, 0.0)],
            vec![
                header(),
                enroll(1, 1.0),
                Event::Toxicity {
                    patient: 1,
                    dlt: false,
                    time: 0.5,
                },
            ],
            vec![
                header(),
                enroll(1, 0.0),
                Event::Toxicity {
                    patient: 2,
                    dlt: false,
                    time: 0.5,
                },
            ],
            vec![
                header(),
                enroll(1, 0.0),
                Event::Efficacy {
                    patient: 1,
                    response: false,
                    time: 0.5,
                },
                Event::Efficacy {
                    patient: 1,
                    response: true,
                    time: 0.6,
                },
            ],
            // cohort of one is already complete
            vec![header(), enroll(1, 0.0), enroll(2, 0.1)],
            vec![
                header(),
                Event::Enrolled {
                    patient: 1,
                    combo: Combo::new(1, 0),
                    time: 0.0,
                },
            ],
            vec![header(), header()],
            vec![
                header(),
                enroll(1, 0.0),
                Event::Toxicity {
                    patient: 1,
                    dlt: false,
                    time: 0.0,
                },
                Event::Finished {
                    selected: None,
                    reason: StopReason::StoppedInPhaseOne,
                    patients: vec![2, 0, 0, 0, 0, 0],
                    duration: 0.0,
                    summaries: None,
                },
            ],
        ];
        for (k, log) in cases.iter().enumerate() {
            let err = TrialState::fold(log).unwrap_err();
            assert_eq!(err.index, log.len() - 1, "case {k}: {err}");
        }
    }
}
