use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use combotrial::trial::{read_events, TrialEngine, TrialState};

use crate::view::TrialStatus;
use crate::CliError;

/// A re-executed log.
#[derive(Debug, Clone)]
pub struct Replayed {
    pub engine: TrialEngine,
    /// Events in the file.
    pub logged: usize,
    /// An interrupted final line was ignored.
    pub dropped_partial_line: bool,
}

impl Replayed {
    /// Decisions the log was missing and replay re-created.
    pub fn completed(&self) -> usize {
        self.engine.events().len() - self.logged
    }
}

/// Reads and re-executes a log, failing with the offending line number on
/// any malformed record or inconsistency.
pub fn replay_file(path: &Path) -> Result<Replayed, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("log: cannot read {}: {e}", path.display())))?;
    let parsed = read_events(BufReader::new(file))
        .map_err(|e| CliError::Log(format!("{}: {e}", path.display())))?;
    if parsed.events.is_empty() {
        return Err(CliError::Log(format!(
            "{}: line 1: log is empty",
            path.display()
        )));
    }
    let engine = TrialEngine::replay(&parsed.events).map_err(|e| {
        let line = e
            .index()
            .and_then(|i| parsed.lines.get(i))
            .copied()
            .unwrap_or(1);
        CliError::Log(format!("{}: line {line}: {e}", path.display()))
    })?;
    // the state folded straight from the records must agree with re-execution
    let folded = TrialState::fold(&parsed.events).map_err(|e| {
        let line = parsed.lines.get(e.index).copied().unwrap_or(1);
        CliError::Log(format!("{}: line {line}: {e}", path.display()))
    })?;
    if parsed.events.len() == engine.events().len() && folded != *engine.state() {
        return Err(CliError::Log(format!(
            "{}: folded state differs from re-execution",
            path.display()
        )));
    }
    Ok(Replayed {
        engine,
        logged: parsed.events.len(),
        dropped_partial_line: parsed.dropped_partial_line,
    })
}

/// Human-readable report of a replayed trial.
pub fn report(r: &Replayed) -> String {
    let st = TrialStatus::of("", &r.engine);
    let s = r.engine.state();
    let mut out = String::new();
    let _ = writeln!(out, "seed            {}", st.seed);
    let _ = writeln!(
        out,
        "events          {} logged, {} re-created",
        r.logged,
        r.completed()
    );
    if r.dropped_partial_line {
        let _ = writeln!(out, "                interrupted final line ignored");
    }
    let _ = writeln!(out, "phase           {:?}", st.phase);
    let _ = writeln!(
        out,
        "patients        {} of {} ({} phase I, {} phase II)",
        st.enrolled, st.capacity, st.phase1_enrolled, st.phase2_enrolled
    );
    if let Some(c) = st.current {
        let _ = writeln!(out, "current         {c}");
    }
    let _ = writeln!(out, "clock           {:.3}", st.clock);
    let _ = writeln!(
        out,
        "\n{:<10}{:>10}{:>8}{:>11}",
        "combo", "patients", "dlts", "responses"
    );
    for c in &st.grid {
        let _ = writeln!(
            out,
            "{:<10}{:>10}{:>8}{:>11}",
            c.label, c.patients, c.dlts, c.responses
        );
    }
    if !st.admissible.is_empty() {
        let _ = writeln!(
            out,
            "\n{:<10}{:>8}{:>13}  closed",
            "arm", "open", "probability"
        );
        for a in &st.admissible {
            let p = a.probability.map_or("-".to_string(), |p| format!("{p:.4}"));
            let closed = a
                .closed_for
                .map_or(String::new(), |c| format!("{c:?}").to_lowercase());
            let _ = writeln!(out, "{:<10}{:>8}{:>13}  {closed}", a.label, a.open, p);
        }
    }
    match &s.result {
        Some(res) => {
            let sel = res.selected.map_or("none".to_string(), |c| c.to_string());
            let _ = writeln!(out, "\nselected        {sel}");
            let _ = writeln!(out, "stop reason     {:?}", res.reason);
            let _ = writeln!(out, "duration        {:.3}", res.duration);
        }
        None => {
            let _ = writeln!(out, "\nunfinished");
            if let Some(b) = &st.enrollment_blocked {
                let _ = writeln!(out, "enrollment      {b}");
            }
        }
    }
    out
}
