//! Dose-finding and arm-monitoring rules, written against posterior summaries
//! so that they can be checked with degenerate chains.

use serde::{Deserialize, Serialize};

use crate::dose_models::{Combo, DoseGrid};
use crate::efficacy::{posterior_mean, prob_exceeds, EffPosteriorChain};
use crate::posterior::{prob_below, ToxPosteriorChain};
use crate::trial::config::DesignConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Phase1Action {
    Escalate { to: Combo },
    DeEscalate { to: Combo },
    Stay,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Toxicity,
    Futility,
}

fn neighbours(c: Combo, rows: usize, cols: usize, steps: [(isize, isize); 4]) -> Vec<Combo> {
    steps
        .iter()
        .filter_map(|&(di, dj)| {
            let i = c.i.checked_add_signed(di)?;
            let j = c.j.checked_add_signed(dj)?;
            (i < rows && j < cols).then_some(Combo::new(i, j))
        })
        .collect()
}

/// `{(i+1, j), (i+1, j-1), (i-1, j+1), (i, j+1)}` within the grid.
pub fn candidate_escalation_set(c: Combo, rows: usize, cols: usize) -> Vec<Combo> {
    neighbours(c, rows, cols, [(1, 0), (1, -1), (-1, 1), (0, 1)])
}

/// `{(i-1, j), (i-1, j+1), (i+1, j-1), (i, j-1)}` within the grid.
pub fn candidate_deescalation_set(c: Combo, rows: usize, cols: usize) -> Vec<Combo> {
    neighbours(c, rows, cols, [(-1, 0), (-1, 1), (1, -1), (0, -1)])
}

/// The candidate whose mean toxicity is closest to `phi_t`, ties to the
/// lowest grid position.
fn closest(
    cands: impl Iterator<Item = Combo>,
    mean: impl Fn(Combo) -> f64,
    phi_t: f64,
) -> Option<Combo> {
    cands.min_by(|&a, &b| {
        (mean(a) - phi_t)
            .abs()
            .total_cmp(&(mean(b) - phi_t).abs())
            .then(a.cmp(&b))
    })
}

/// Phase I move from posterior summaries: `below` is `pr(pi < phi_t)` at the
/// current combination and `mean` gives posterior mean toxicities.
pub fn phase1_rule(
    current: Combo,
    below: f64,
    mean: impl Fn(Combo) -> f64,
    rows: usize,
    cols: usize,
    cfg: &DesignConfig,
) -> Phase1Action {
    let here = mean(current);
    if below > cfg.c_e {
        let up = candidate_escalation_set(current, rows, cols)
            .into_iter()
            .filter(|&c| mean(c) > here);
        match closest(up, &mean, cfg.phi_t) {
            Some(to) => Phase1Action::Escalate { to },
            None => Phase1Action::Stay,
        }
    } else if below < cfg.c_d {
        let cands = candidate_deescalation_set(current, rows, cols);
        if cands.is_empty() {
            return Phase1Action::Terminate;
        }
        let down = cands.iter().copied().filter(|&c| mean(c) < here);
        let to = closest(down, &mean, cfg.phi_t).unwrap_or_else(|| {
            *cands
                .iter()
                .min_by(|&&a, &&b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)))
                .unwrap()
        });
        Phase1Action::DeEscalate { to }
    } else {
        Phase1Action::Stay
    }
}

/// Phase I decision at `current`; also returns `pr(pi_current < phi_t)`.
pub fn phase1_decision(
    current: Combo,
    grid: &DoseGrid,
    chain: &ToxPosteriorChain,
    cfg: &DesignConfig,
) -> (Phase1Action, f64) {
    let means = chain.mean_surface();
    let below = prob_below(chain, grid.index(current), cfg.phi_t);
    let action = phase1_rule(
        current,
        below,
        |c| means[grid.index(c)],
        grid.rows(),
        grid.cols(),
        cfg,
    );
    (action, below)
}

/// Combinations with `pr(pi < phi_t) > c_a`, optionally trimmed to the
/// `admissible_cap` whose mean toxicity is closest to `phi_t`. Grid order.
pub fn admissible_from(
    below: &[f64],
    means: &[f64],
    grid: &DoseGrid,
    cfg: &DesignConfig,
) -> Vec<Combo> {
    let mut keep: Vec<usize> = (0..grid.cells()).filter(|&k| below[k] > cfg.c_a).collect();
    if let Some(cap) = cfg.admissible_cap {
        if keep.len() > cap {
            keep.sort_by(|&a, &b| {
                (means[a] - cfg.phi_t)
                    .abs()
                    .total_cmp(&(means[b] - cfg.phi_t).abs())
                    .then(a.cmp(&b))
            });
            keep.truncate(cap);
            keep.sort_unstable();
        }
    }
    keep.into_iter().map(|k| grid.combo(k)).collect()
}

pub fn select_admissible(
    chain: &ToxPosteriorChain,
    grid: &DoseGrid,
    cfg: &DesignConfig,
) -> (Vec<Combo>, Vec<f64>) {
    let below: Vec<f64> = (0..grid.cells())
        .map(|k| prob_below(chain, k, cfg.phi_t))
        .collect();
    (
        admissible_from(&below, &chain.mean_surface(), grid, cfg),
        below,
    )
}

/// Arms to close given per-arm `pr(pi_k < phi_t)` and `pr(p_k > phi_e)`.
/// Only `open` arms are considered; toxicity is checked first.
pub fn closures(
    open: &[bool],
    tox_below: &[f64],
    eff_exceeds: &[f64],
    cfg: &DesignConfig,
) -> Vec<(usize, CloseReason, f64)> {
    let mut out = Vec::new();
    for k in (0..open.len()).filter(|&k| open[k]) {
        if tox_below[k] < cfg.c_a {
            out.push((k, CloseReason::Toxicity, tox_below[k]));
        } else if eff_exceeds[k] < cfg.c_f {
            out.push((k, CloseReason::Futility, eff_exceeds[k]));
        }
    }
    out
}

/// Per-arm summaries used at every phase II look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummaries {
    pub tox_below: Vec<f64>,
    pub eff_exceeds: Vec<f64>,
    pub eff_mean: Vec<f64>,
}

pub fn summarize_arms(
    arms: &[Combo],
    grid: &DoseGrid,
    tox: &ToxPosteriorChain,
    eff: &EffPosteriorChain,
    cfg: &DesignConfig,
) -> ArmSummaries {
    ArmSummaries {
        tox_below: arms
            .iter()
            .map(|&c| prob_below(tox, grid.index(c), cfg.phi_t))
            .collect(),
        eff_exceeds: (0..arms.len())
            .map(|k| prob_exceeds(eff, k, cfg.phi_e))
            .collect(),
        eff_mean: (0..arms.len()).map(|k| posterior_mean(eff, k)).collect(),
    }
}

/// Open arm with the highest posterior mean efficacy, ties to the lower arm.
pub fn final_selection(open: &[bool], eff_mean: &[f64]) -> Option<usize> {
    (0..open.len())
        .filter(|&k| open[k])
        .fold(None, |best: Option<usize>, k| match best {
            Some(b) if eff_mean[b] >= eff_mean[k] => Some(b),
            _ => Some(k),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficacy::EffPosteriorChain;

    fn c(a: usize, b: usize) -> Combo {
        Combo::from_levels(a, b).unwrap()
    }

    fn sorted(mut v: Vec<Combo>) -> Vec<Combo> {
        v.sort();
        v
    }

    #[test]
    fn escalation_sets() {
        assert_eq!(
            sorted(candidate_escalation_set(c(1, 1), 3, 2)),
            sorted(vec![c(2, 1), c(1, 2)])
        );
        assert!(candidate_escalation_set(c(3, 2), 3, 2).is_empty());
        assert_eq!(
            sorted(candidate_escalation_set(c(2, 1), 3, 2)),
            sorted(vec![c(3, 1), c(1, 2), c(2, 2)])
        );
    }

    #[test]
    fn deescalation_sets() {
        assert!(candidate_deescalation_set(c(1, 1), 3, 2).is_empty());
        assert_eq!(
            sorted(candidate_deescalation_set(c(2, 2), 3, 2)),
            sorted(vec![c(1, 2), c(3, 1), c(2, 1)])
        );
        assert_eq!(
            sorted(candidate_deescalation_set(c(3, 2), 3, 2)),
            sorted(vec![c(2, 2), c(3, 1)])
        );
    }

    fn lookup(pairs: &[(Combo, f64)]) -> impl Fn(Combo) -> f64 + '_ {
        move |x| pairs.iter().find(|p| p.0 == x).map_or(0.9, |p| p.1)
    }

    #[test]
    fn phase1_examples() {
        let cfg = DesignConfig::default();
        let means = [(c(1, 1), 0.10), (c(2, 1), 0.15), (c(1, 2), 0.25)];
        assert_eq!(
            phase1_rule(c(1, 1), 1.0, lookup(&means), 3, 2, &cfg),
            Phase1Action::Escalate { to: c(1, 2) }
        );
        assert_eq!(
            phase1_rule(c(1, 1), 0.3, lookup(&means), 3, 2, &cfg),
            Phase1Action::Terminate
        );
        assert_eq!(
            phase1_rule(c(1, 1), 0.6, lookup(&means), 3, 2, &cfg),
            Phase1Action::Stay
        );
    }

    #[test]
    fn escalation_without_higher_neighbour_stays() {
        let cfg = DesignConfig::default();
        let means = [
            (c(2, 1), 0.5),
            (c(3, 1), 0.4),
            (c(1, 2), 0.3),
            (c(2, 2), 0.45),
        ];
        assert_eq!(
            phase1_rule(c(2, 1), 0.95, lookup(&means), 3, 2, &cfg),
            Phase1Action::Stay
        );
        assert_eq!(
            phase1_rule(c(3, 2), 0.95, |_| 0.1, 3, 2, &cfg),
            Phase1Action::Stay
        );
    }

    #[test]
    fn deescalation_fallback_takes_lowest_neighbour() {
        let cfg = DesignConfig::default();
        // no neighbour is below the current mean
        let means = [
            (c(2, 2), 0.2),
            (c(1, 2), 0.3),
            (c(3, 1), 0.25),
            (c(2, 1), 0.28),
        ];
        assert_eq!(
            phase1_rule(c(2, 2), 0.1, lookup(&means), 3, 2, &cfg),
            Phase1Action::DeEscalate { to: c(3, 1) }
        );
        let means = [
            (c(2, 2), 0.5),
            (c(1, 2), 0.3),
            (c(3, 1), 0.45),
            (c(2, 1), 0.2),
        ];
        assert_eq!(
            phase1_rule(c(2, 2), 0.1, lookup(&means), 3, 2, &cfg),
            Phase1Action::DeEscalate { to: c(1, 2) }
        );
    }

    #[test]
    fn degenerate_chain_decision() {
        let grid = DoseGrid::melanoma();
        let cfg = DesignConfig::default();
        let surface = vec![0.10, 0.25, 0.15, 0.3, 0.4, 0.5];
        let chain = ToxPosteriorChain::from_surfaces(&grid, vec![surface; 10]).unwrap();
        let (a, below) = phase1_decision(c(1, 1), &grid, &chain, &cfg);
        assert_eq!(below, 1.0);
        assert_eq!(a, Phase1Action::Escalate { to: c(1, 2) });
    }

    #[test]
    fn admissible_examples() {
        let grid = DoseGrid::melanoma();
        let mut cfg = DesignConfig::default();
        let safe = ToxPosteriorChain::from_surfaces(&grid, vec![vec![0.1; 6]; 5]).unwrap();
        assert_eq!(select_admissible(&safe, &grid, &cfg).0.len(), 6);
        let toxic = ToxPosteriorChain::from_surfaces(&grid, vec![vec![0.6; 6]; 5]).unwrap();
        assert!(select_admissible(&toxic, &grid, &cfg).0.is_empty());
        let three =
            ToxPosteriorChain::from_surfaces(&grid, vec![vec![0.1, 0.2, 0.25, 0.5, 0.6, 0.7]; 5])
                .unwrap();
        assert_eq!(
            select_admissible(&three, &grid, &cfg).0,
            vec![c(1, 1), c(1, 2), c(2, 1)]
        );
        cfg.admissible_cap = Some(2);
        assert_eq!(
            select_admissible(&three, &grid, &cfg).0,
            vec![c(1, 2), c(2, 1)]
        );
    }

    #[test]
    fn closure_examples() {
        let cfg = DesignConfig::default();
        let grid = DoseGrid::melanoma();
        let tox =
            ToxPosteriorChain::from_surfaces(&grid, vec![vec![0.1, 0.2, 0.6, 0.1, 0.1, 0.1]; 5])
                .unwrap();
        let eff = EffPosteriorChain::from_rates(vec![vec![0.4, 0.05, 0.4]; 5]).unwrap();
        let arms = [c(1, 1), c(1, 2), c(2, 1)];
        let s = summarize_arms(&arms, &grid, &tox, &eff, &cfg);
        let closed = closures(&[true; 3], &s.tox_below, &s.eff_exceeds, &cfg);
        assert_eq!(
            closed,
            vec![
                (1, CloseReason::Futility, 0.0),
                (2, CloseReason::Toxicity, 0.0)
            ]
        );
        assert!(closures(&[true, false, false], &s.tox_below, &s.eff_exceeds, &cfg).is_empty());
    }

    #[test]
    fn final_selection_examples() {
        assert_eq!(final_selection(&[true], &[0.3]), Some(0));
        assert_eq!(final_selection(&[true; 3], &[0.2, 0.36, 0.3]), Some(1));
        assert_eq!(final_selection(&[false; 3], &[0.2, 0.36, 0.3]), None);
        assert_eq!(
            final_selection(&[true, false, true], &[0.2, 0.36, 0.3]),
            Some(2)
        );
        assert_eq!(final_selection(&[true, true], &[0.3, 0.3]), Some(0));
    }
}
