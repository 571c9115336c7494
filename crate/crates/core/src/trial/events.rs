//! Trial event log: one JSON object per line, the first being a header that
//! carries the schema version, seed and design.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dose_models::Combo;
use crate::trial::config::DesignConfig;
use crate::trial::rules::{ArmSummaries, CloseReason, Phase1Action};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Phase II ran to the end and was finalized.
    Completed,
    /// Phase I de-escalation was needed below the lowest combination.
    Toxicity,
    /// No combination was admissible after phase I.
    NoAdmissible,
    /// Every phase II arm was closed.
    AllArmsClosed,
    /// Finalized before phase II began.
    StoppedInPhaseOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema_version: u32,
        seed: u64,
        config: DesignConfig,
    },
    Enrolled {
        patient: u32,
        combo: Combo,
        time: f64,
    },
    Toxicity {
        patient: u32,
        dlt: bool,
        time: f64,
    },
    Efficacy {
        patient: u32,
        response: bool,
        time: f64,
    },
    Finalize {
        time: f64,
    },
    Decision {
        from: Combo,
        action: Phase1Action,
        /// `pr(pi < phi_t)` per combination, row-major.
        prob_below: Vec<f64>,
        /// Posterior mean toxicity per combination.
        mean: Vec<f64>,
    },
    Admissible {
        combos: Vec<Combo>,
        prob_below: Vec<f64>,
        mean: Vec<f64>,
    },
    Closed {
        combo: Combo,
        reason: CloseReason,
        value: f64,
    },
    Probabilities {
        look: u32,
        summaries: ArmSummaries,
        /// One entry per admissible arm; closed arms get zero.
        probs: Vec<f64>,
        /// Arms in the order their probabilities were fixed.
        order: Vec<Combo>,
    },
    Finished {
        selected: Option<Combo>,
        reason: StopReason,
        /// Patients treated per combination, row-major.
        patients: Vec<u32>,
        duration: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summaries: Option<ArmSummaries>,
    },
}

impl Event {
    /// Events supplied from outside; everything else is derived by the engine.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Event::Enrolled { .. }
                | Event::Toxicity { .. }
                | Event::Efficacy { .. }
                | Event::Finalize { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Event::Header { .. } => "header",
            Event::Enrolled { .. } => "enrolled",
            Event::Toxicity { .. } => "toxicity",
            Event::Efficacy { .. } => "efficacy",
            Event::Finalize { .. } => "finalize",
            Event::Decision { .. } => "decision",
            Event::Admissible { .. } => "admissible",
            Event::Closed { .. } => "closed",
            Event::Probabilities { .. } => "probabilities",
            Event::Finished { .. } => "finished",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes events as newline-terminated JSON lines.
pub fn write_events<W: Write>(out: &mut W, events: &[Event]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    out.write_all(&buf)
}

/// Parsed log plus whether an unterminated final line was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub events: Vec<Event>,
    /// One-based line of each event.
    pub lines: Vec<usize>,
    pub dropped_partial_line: bool,
}

/// Reads a log. A final line without a newline is an interrupted write and is
/// dropped; any other malformed line is an error carrying its line number.
pub fn read_events<R: BufRead>(mut input: R) -> Result<ParsedLog, LogError> {
    let mut events = Vec::new();
    let mut lines = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = input.read_line(&mut line)?;
        if n == 0 {
            return Ok(ParsedLog {
                events,
                lines,
                dropped_partial_line: false,
            });
        }
        number += 1;
        if !line.ends_with('\n') {
            return Ok(ParsedLog {
                events,
                lines,
                dropped_partial_line: true,
            });
        }
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
            line: number,
            message: e.to_string(),
        })?;
        match (&e, events.is_empty()) {
            (Event::Header { schema_version, .. }, true) if *schema_version != SCHEMA_VERSION => {
                return Err(LogError::Corrupt {
                    line: number,
                    message: format!("unsupported schema version {schema_version}"),
                })
            }
            (Event::Header { .. }, true) => {}
            (_, true) => {
                return Err(LogError::Corrupt {
                    line: number,
                    message: "log must start with a header".into(),
                })
            }
            (Event::Header { .. }, false) => {
                return Err(LogError::Corrupt {
                    line: number,
                    message: "header after the first line".into(),
                })
            }
            _ => {}
        }
        events.push(e);
        lines.push(number);
    }
}
