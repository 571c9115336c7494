//! Status and recommendation payloads derived from a trial's state.

use serde::Serialize;

use combotrial::trial::{CloseReason, Phase, Phase1Action, TrialEngine, TrialResult};
use combotrial::Combo;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStatus {
    pub combo: Combo,
    pub label: String,
    pub patients: u32,
    pub dlts: u32,
    pub responses: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmStatus {
    pub combo: Combo,
    pub label: String,
    pub open: bool,
    /// Current randomization probability.
    pub probability: Option<f64>,
    pub closed_for: Option<CloseReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStatus {
    pub id: String,
    pub seed: u64,
    pub phase: Phase,
    pub events: usize,
    pub enrolled: u32,
    pub capacity: u32,
    pub phase1_enrolled: u32,
    pub phase2_enrolled: u32,
    /// Phase I combination the next patient would receive.
    pub current: Option<Combo>,
    pub last_action: Option<Phase1Action>,
    pub can_enroll: bool,
    /// Why enrollment is currently refused.
    pub enrollment_blocked: Option<String>,
    pub awaiting_toxicity: Vec<u32>,
    pub awaiting_efficacy: Vec<u32>,
    pub looks: u32,
    pub clock: f64,
    pub grid: Vec<CellStatus>,
    pub admissible: Vec<ArmStatus>,
    pub result: Option<TrialResult>,
}

impl TrialStatus {
    pub fn of(id: &str, engine: &TrialEngine) -> Self {
        let s = engine.state();
        let grid = &s.config.grid;
        let mut cells: Vec<CellStatus> = grid
            .combos()
            .map(|combo| CellStatus {
                combo,
                label: combo.to_string(),
                patients: 0,
                dlts: 0,
                responses: 0,
            })
            .collect();
        for p in &s.patients {
            let c = &mut cells[grid.index(p.combo)];
            c.patients += 1;
            c.dlts += u32::from(p.toxicity == Some(true));
            c.responses += u32::from(p.efficacy == Some(true));
        }
        let admissible = s
            .admissible
            .iter()
            .enumerate()
            .map(|(k, &combo)| ArmStatus {
                combo,
                label: combo.to_string(),
                open: s.open[k],
                probability: s.probs.as_ref().map(|p| p[k]),
                closed_for: s
                    .closures
                    .iter()
                    .find(|c| c.combo == combo)
                    .map(|c| c.reason),
            })
            .collect();
        let block = engine.enrollment_block();
        TrialStatus {
            id: id.to_string(),
            seed: s.seed,
            phase: s.phase,
            events: engine.events().len(),
            enrolled: s.patients.len() as u32,
            capacity: s.config.total(),
            phase1_enrolled: s.phase1_enrolled(),
            phase2_enrolled: s.phase2_enrolled(),
            current: (s.phase == Phase::One).then_some(s.current),
            last_action: s.last_action,
            can_enroll: block.is_none(),
            enrollment_blocked: block.map(|e| e.to_string()),
            awaiting_toxicity: s
                .patients
                .iter()
                .filter(|p| p.toxicity.is_none())
                .map(|p| p.id)
                .collect(),
            awaiting_efficacy: s
                .patients
                .iter()
                .filter(|p| p.efficacy.is_none())
                .map(|p| p.id)
                .collect(),
            looks: s.looks,
            clock: s.clock,
            grid: cells,
            admissible,
            result: s.result.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub combo: Combo,
    pub label: String,
    /// Posterior probability that toxicity is below the target.
    pub prob_below: f64,
    pub mean_toxicity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub combo: Combo,
    pub label: String,
    pub open: bool,
    pub prob_toxicity_below: f64,
    /// Posterior probability that efficacy exceeds the lowest acceptable rate.
    pub prob_efficacy_exceeds: f64,
    pub mean_efficacy: f64,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub id: String,
    pub phase: Phase,
    /// Combination for the next phase I patient.
    pub next_combo: Option<Combo>,
    /// Phase II randomization probabilities, one per admissible arm.
    pub probabilities: Option<Vec<f64>>,
    /// Latest toxicity posterior over the grid.
    pub toxicity: Vec<CellSummary>,
    /// Latest summaries of the phase II arms.
    pub arms: Vec<ArmSummary>,
    pub selected: Option<Combo>,
    pub result: Option<TrialResult>,
}

impl Recommendation {
    pub fn of(id: &str, engine: &TrialEngine) -> Self {
        let s = engine.state();
        let grid = &s.config.grid;
        let toxicity = s
            .grid_summary
            .as_ref()
            .map(|g| {
                grid.combos()
                    .enumerate()
                    .map(|(k, combo)| CellSummary {
                        combo,
                        label: combo.to_string(),
                        prob_below: g.prob_below[k],
                        mean_toxicity: g.mean[k],
                    })
                    .collect()
            })
            .unwrap_or_default();
        let arms = s
            .arm_summaries
            .as_ref()
            .map(|a| {
                s.admissible
                    .iter()
                    .enumerate()
                    .map(|(k, &combo)| ArmSummary {
                        combo,
                        label: combo.to_string(),
                        open: s.open[k],
                        prob_toxicity_below: a.tox_below[k],
                        prob_efficacy_exceeds: a.eff_exceeds[k],
                        mean_efficacy: a.eff_mean[k],
                        probability: s.probs.as_ref().map(|p| p[k]),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Recommendation {
            id: id.to_string(),
            phase: s.phase,
            next_combo: (s.phase == Phase::One).then_some(s.current),
            probabilities: if s.phase == Phase::Two {
                s.probs.clone()
            } else {
                None
            },
            toxicity,
            arms,
            selected: s.result.as_ref().and_then(|r| r.selected),
            result: s.result.clone(),
        }
    }
}
