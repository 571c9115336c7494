use combotrial::dose_models::ProbMatrix;
use combotrial::trial::*;
use combotrial::{Combo, DoseGrid, McmcConfig};

fn quick() -> DesignConfig {
    DesignConfig {
        mcmc: McmcConfig {
            n_keep: 500,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn scenario(n: usize) -> Scenario {
    Scenario::builtin(n).unwrap()
}

fn first_arm_log(events: &[Event]) -> Vec<String> {
    events
        .iter()
        .map(|e| serde_json::to_string(e).unwrap())
        .collect()
}

#[test]
fn first_patient_gets_the_lowest_combination() {
    let mut e = TrialEngine::new(DesignConfig::default(), 1).unwrap();
    let en = e.enroll(0.0).unwrap();
    assert_eq!(en.patient, 1);
    assert_eq!(en.combo, Combo::new(0, 0));
    assert_eq!(en.combo.to_string(), "(A1,B1)");
}

#[test]
fn phase_one_waits_for_the_cohort() {
    let mut e = TrialEngine::new(quick(), 1).unwrap();
    e.enroll(0.0).unwrap();
    assert!(matches!(
        e.enroll(0.5),
        Err(EngineError::AwaitingToxicity(1))
    ));
    assert!(matches!(
        e.record_toxicity(2, false, 0.5),
        Err(EngineError::UnknownPatient(2))
    ));
    e.record_toxicity(1, false, 0.5).unwrap();
    assert!(matches!(
        e.record_toxicity(1, true, 0.6),
        Err(EngineError::DuplicateOutcome { patient: 1, .. })
    ));
    assert!(matches!(
        e.enroll(0.1),
        Err(EngineError::TimeWentBackwards { .. })
    ));
    assert!(matches!(e.events().last(), Some(Event::Decision { .. })));
    e.enroll(1.0).unwrap();
}

#[test]
fn finalize_in_phase_one_selects_nothing() {
    let mut e = TrialEngine::new(quick(), 1).unwrap();
    e.enroll(0.0).unwrap();
    let r = e.finalize(1.0).unwrap();
    assert_eq!(r.selected, None);
    assert_eq!(r.reason, StopReason::StoppedInPhaseOne);
    assert!(matches!(e.enroll(2.0), Err(EngineError::Finished)));
    assert!(matches!(e.finalize(2.0), Err(EngineError::Finished)));
}

#[test]
fn simulated_logs_replay_exactly() {
    let cfg = quick();
    for seed in [3, 11] {
        let sim = simulate_trial(&scenario(1), &cfg, seed).unwrap();
        let replayed = TrialEngine::replay(sim.events()).unwrap();
        assert_eq!(replayed.events(), sim.events());
        assert_eq!(replayed.state(), sim.state());
        assert_eq!(TrialState::fold(sim.events()).unwrap(), *sim.state());

        let mut buf = Vec::new();
        write_events(&mut buf, sim.events()).unwrap();
        let parsed = read_events(&buf[..]).unwrap();
        assert_eq!(first_arm_log(&parsed.events), first_arm_log(sim.events()));
        assert_eq!(
            TrialEngine::replay(&parsed.events).unwrap().state(),
            sim.state()
        );
    }
}

#[test]
fn same_seed_same_log() {
    let cfg = quick();
    let a = simulate_trial(&scenario(4), &cfg, 9).unwrap();
    let b = simulate_trial(&scenario(4), &cfg, 9).unwrap();
    assert_eq!(a.events(), b.events());
    let c = simulate_trial(&scenario(4), &cfg, 10).unwrap();
    assert_ne!(a.events(), c.events());
}

#[test]
fn tampering_is_detected() {
    let sim = simulate_trial(&scenario(1), &quick(), 5).unwrap();
    let events = sim.events().to_vec();

    // a flipped outcome changes the decisions that follow it
    let mut t = events.clone();
    let k = t
        .iter()
        .position(|e| matches!(e, Event::Toxicity { .. }))
        .unwrap();
    if let Event::Toxicity { dlt, .. } = &mut t[k] {
        *dlt = !*dlt;
    }
    let err = TrialEngine::replay(&t).unwrap_err();
    assert!(err.index().unwrap() > k, "{err}");

    // a rewritten decision
    let mut t = events.clone();
    let k = t
        .iter()
        .position(|e| matches!(e, Event::Decision { .. }))
        .unwrap();
    if let Event::Decision { prob_below, .. } = &mut t[k] {
        prob_below[0] += 0.01;
    }
    assert_eq!(TrialEngine::replay(&t).unwrap_err().index(), Some(k));

    // a patient moved to another arm
    let mut t = events.clone();
    let k = t
        .iter()
        .rposition(|e| matches!(e, Event::Enrolled { .. }))
        .unwrap();
    if let Event::Enrolled { combo, .. } = &mut t[k] {
        *combo = if *combo == Combo::new(0, 0) {
            Combo::new(0, 1)
        } else {
            Combo::new(0, 0)
        };
    }
    assert_eq!(TrialEngine::replay(&t).unwrap_err().index(), Some(k));

    // a tampered count in the final record
    let mut t = events.clone();
    if let Some(Event::Finished { patients, .. }) = t.last_mut() {
        patients[0] += 1;
    }
    assert_eq!(
        TrialEngine::replay(&t).unwrap_err().index(),
        Some(t.len() - 1)
    );
    assert!(TrialState::fold(&t).is_err());

    // derived events cannot be injected
    let mut t = events.clone();
    t.insert(
        2,
        Event::Closed {
            combo: Combo::new(0, 0),
            reason: CloseReason::Futility,
            value: 0.0,
        },
    );
    assert_eq!(TrialEngine::replay(&t).unwrap_err().index(), Some(2));
}

#[test]
fn truncated_logs_are_completed() {
    let sim = simulate_trial(&scenario(1), &quick(), 8).unwrap();
    let events = sim.events();
    // cut right after every input event: replay re-derives what follows
    for cut in (1..events.len())
        .filter(|&i| events[i].is_input())
        .step_by(9)
    {
        let partial = &events[..=cut];
        let engine = TrialEngine::replay(partial).unwrap();
        assert!(engine.events().len() >= partial.len());
        assert_eq!(&engine.events()[..partial.len()], partial);
        let next_input = events[cut + 1..]
            .iter()
            .position(Event::is_input)
            .map_or(events.len(), |p| cut + 1 + p);
        assert_eq!(engine.events(), &events[..next_input]);
    }
}

#[test]
fn closed_arms_never_receive_patients() {
    let cfg = quick();
    let mut closures = 0;
    for (sc, seed) in [(1, 1), (1, 2), (4, 3), (5, 4), (10, 5), (11, 6)] {
        let sim = simulate_trial(&scenario(sc), &cfg, seed).unwrap();
        let mut closed = Vec::new();
        for e in sim.events() {
            match e {
                Event::Closed { combo, .. } => closed.push(*combo),
                Event::Enrolled { combo, .. } => {
                    assert!(!closed.contains(combo), "scenario {sc} seed {seed}")
                }
                Event::Probabilities { probs, .. } => {
                    for c in &closed {
                        let k = sim.state().admissible.iter().position(|a| a == c).unwrap();
                        assert_eq!(probs[k], 0.0);
                    }
                }
                _ => {}
            }
        }
        closures += closed.len();
    }
    assert!(closures > 0, "no closures exercised");
}

#[test]
fn sample_size_accounting() {
    let cfg = quick();
    for seed in 0..6 {
        let r = run_trial(&scenario(2), &cfg, seed).unwrap();
        assert!(r.phase1_patients + r.phase2_patients <= cfg.total());
        if r.reason != StopReason::Toxicity {
            assert_eq!(r.phase1_patients, cfg.n1);
        }
        if r.reason == StopReason::Completed {
            assert_eq!(r.phase2_patients, cfg.n2);
            let k = r
                .admissible
                .iter()
                .position(|&c| Some(c) == r.selected)
                .unwrap();
            assert!(k < r.admissible.len());
        }
        assert_eq!(
            r.patients.iter().sum::<u32>(),
            r.phase1_patients + r.phase2_patients
        );
    }
}

#[test]
fn excessive_toxicity_stops_early() {
    let cfg = quick();
    let mut total = 0;
    for seed in 0..20 {
        let r = run_trial(&scenario(8), &cfg, seed).unwrap();
        total += r.patients.iter().sum::<u32>();
        assert!(r.reason != StopReason::Completed || r.selected.is_some());
    }
    assert!(total as f64 / 20.0 <= 15.0, "{total}");
}

#[test]
fn single_update_when_group_is_all_of_phase_two() {
    let cfg = DesignConfig {
        group_size: 60,
        ..quick()
    };
    let sim = simulate_trial(&scenario(6), &cfg, 2).unwrap();
    let st = sim.state();
    assert_eq!(st.result.as_ref().unwrap().reason, StopReason::Completed);
    let looks: Vec<&Vec<f64>> = sim
        .events()
        .iter()
        .filter_map(|e| {
            if let Event::Probabilities { probs, .. } = e {
                Some(probs)
            } else {
                None
            }
        })
        .collect();
    assert_eq!(looks.len(), 1);
    // every phase II patient was randomized under the initial probabilities
    for p in st.patients.iter().filter(|p| p.phase == 2) {
        let k = st.admissible.iter().position(|&a| a == p.combo).unwrap();
        assert!(looks[0][k] > 0.0);
    }
    assert_eq!(st.phase2_enrolled(), 60);
}

#[test]
fn single_safe_arm_takes_all_of_phase_two() {
    let grid = DoseGrid::new(vec![0.05], vec![0.1]).unwrap();
    let cfg = DesignConfig {
        grid: grid.clone(),
        ..quick()
    };
    let s = Scenario {
        name: "single".into(),
        grid: Some(grid),
        toxicity: ProbMatrix::new(1, 1, vec![0.0]).unwrap(),
        efficacy: ProbMatrix::new(1, 1, vec![0.6]).unwrap(),
        hazard: None,
    };
    let r = run_trial(&s, &cfg, 4).unwrap();
    assert_eq!(r.reason, StopReason::Completed);
    assert_eq!(r.patients, vec![80]);
    assert_eq!(r.phase2_patients, 60);
    assert_eq!(r.selected, Some(Combo::new(0, 0)));
}

#[test]
fn accrual_is_suspended_while_a_group_is_pending() {
    let cfg = DesignConfig {
        group_size: 2,
        ..quick()
    };
    let sim = simulate_trial(
        &scenario(3).with_hazard(Some(HazardPattern::Constant)),
        &cfg,
        6,
    )
    .unwrap();
    // replaying the inputs one by one never finds more than m pending
    let mut e = TrialEngine::new(cfg.clone(), 6).unwrap();
    for ev in sim.events().iter().skip(1) {
        match *ev {
            Event::Enrolled { time, .. } => {
                if e.state().phase == Phase::Two {
                    assert!(e.state().pending_phase2() < cfg.group_size);
                }
                e.enroll(time).unwrap();
            }
            Event::Toxicity { patient, dlt, time } => {
                e.record_toxicity(patient, dlt, time).unwrap()
            }
            Event::Efficacy {
                patient,
                response,
                time,
            } => e.record_efficacy(patient, response, time).unwrap(),
            Event::Finalize { time } => {
                e.finalize(time).unwrap();
            }
            _ => {}
        }
        let st = e.state();
        if st.phase == Phase::Two
            && (st.patients.len() as u32) < cfg.total()
            && st.pending_phase2() >= cfg.group_size
        {
            assert!(matches!(
                e.enrollment_block(),
                Some(EngineError::Suspended(2))
            ));
        }
    }
    assert_eq!(e.events(), sim.events());
}

#[test]
fn scenario_grid_mismatch_is_rejected() {
    let grid = DoseGrid::new(vec![0.05, 0.1], vec![0.1, 0.2]).unwrap();
    let cfg = DesignConfig { grid, ..quick() };
    let err = run_trial(&scenario(1), &cfg, 0).unwrap_err().to_string();
    assert!(err.contains("truth.toxicity"), "{err}");
}

#[test]
fn late_onset_duration_shrinks_with_group_size() {
    let s = scenario(2).with_hazard(Some(HazardPattern::Constant));
    let mean = |m: u32| {
        let cfg = DesignConfig {
            group_size: m,
            ..quick()
        };
        (0..4)
            .map(|seed| run_trial(&s, &cfg, seed).unwrap().duration)
            .sum::<f64>()
            / 4.0
    };
    let (d1, d6) = (mean(1), mean(6));
    assert!(d6 < 0.5 * d1, "{d1} {d6}");
}
