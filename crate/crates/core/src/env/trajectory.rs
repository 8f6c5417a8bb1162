//! JSON-lines trajectory records, one per environment step.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{JointAction, StepOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

impl StepRecord {
    /// `t` is the clock after the step (first step is `t = 1`).
    pub fn new(t: usize, joint: &JointAction, outcome: &StepOutcome) -> Self {
        Self {
            t,
            actions: joint.actions.clone(),
            rewards: outcome.rewards.clone(),
            done: outcome.done,
            info: outcome.info.clone(),
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[StepRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<StepRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        })
        .collect()
}
