//! Line-delimited JSON records. Floats are written with 17 significant
//! digits so every file parses back to the exact values.

use std::fmt::Write as _;
use std::path::Path;

use resvec_core::engine::{EnsembleMember, RunResult};
use resvec_core::geometry::{Point, StateMatrix};
use serde::Deserialize;

use crate::{CliError, Result};

/// One seeded run: final states of the normal agents, row-major.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub seed: u64,
    pub d: usize,
    pub config_digest: u64,
    pub schedule_digest: u64,
    pub normal_ids: Vec<usize>,
    pub fallback_steps: usize,
    pub finals: Vec<f64>,
}

/// One run of an ensemble.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRecord {
    pub index: usize,
    pub seed: u64,
    pub d: usize,
    pub config_digest: u64,
    pub schedule_digest: u64,
    pub finals: Vec<f64>,
}

/// State of one agent at one iteration.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t: usize,
    pub agent: usize,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Run(RunRecord),
    Member(MemberRecord),
    Trace(TraceRecord),
}

fn push_floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x:.16e}").unwrap();
    }
    out.push(']');
}

fn push_ints(out: &mut String, xs: &[usize]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x}").unwrap();
    }
    out.push(']');
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Engine("non-finite state in run output".into()))
    }
}

impl RunRecord {
    pub fn from_result(r: &RunResult, config_digest: u64) -> Self {
        Self {
            seed: r.seed,
            d: r.final_states.dim(),
            config_digest,
            schedule_digest: r.schedule_digest,
            normal_ids: r.normal_ids.clone(),
            fallback_steps: r.fallback_steps,
            finals: r.final_states.flat(),
        }
    }

    pub fn emit(&self) -> Result<String> {
        check_finite(&self.finals)?;
        let mut s = format!(
            "{{\"record\":\"run\",\"seed\":{},\"d\":{},\"config_digest\":{},\"schedule_digest\":{},\"normal_ids\":",
            self.seed, self.d, self.config_digest, self.schedule_digest
        );
        push_ints(&mut s, &self.normal_ids);
        write!(s, ",\"fallback_steps\":{},\"finals\":", self.fallback_steps).unwrap();
        push_floats(&mut s, &self.finals);
        s.push('}');
        Ok(s)
    }

    pub fn states(&self) -> Result<StateMatrix> {
        StateMatrix::from_flat(self.d, &self.finals).map_err(|e| CliError::Input(e.to_string()))
    }
}

impl MemberRecord {
    pub fn from_member(m: &EnsembleMember, config_digest: u64) -> Self {
        Self {
            index: m.index,
            seed: m.seed,
            d: m.final_states.dim(),
            config_digest,
            schedule_digest: m.schedule_digest,
            finals: m.final_states.flat(),
        }
    }

    pub fn emit(&self) -> Result<String> {
        check_finite(&self.finals)?;
        let mut s = format!(
            "{{\"record\":\"member\",\"index\":{},\"seed\":{},\"d\":{},\"config_digest\":{},\"schedule_digest\":{},\"finals\":",
            self.index, self.seed, self.d, self.config_digest, self.schedule_digest
        );
        push_floats(&mut s, &self.finals);
        s.push('}');
        Ok(s)
    }

    pub fn states(&self) -> Result<StateMatrix> {
        StateMatrix::from_flat(self.d, &self.finals).map_err(|e| CliError::Input(e.to_string()))
    }

    /// Mean of the normal agents' final states.
    pub fn consensus_value(&self) -> Result<Point> {
        let s = self.states()?;
        Point::centroid(s.rows()).ok_or_else(|| CliError::Input(format!("run {} has no states", self.index)))
    }
}

impl TraceRecord {
    pub fn emit(&self) -> Result<String> {
        check_finite(&self.x)?;
        let mut s = format!("{{\"record\":\"trace\",\"t\":{},\"agent\":{},\"x\":", self.t, self.agent);
        push_floats(&mut s, &self.x);
        s.push('}');
        Ok(s)
    }
}

/// Trace lines for a sequence of state matrices whose rows belong to `ids`.
pub fn trace_lines(states: &[StateMatrix], ids: &[usize]) -> Result<String> {
    let mut out = String::new();
    for (t, m) in states.iter().enumerate() {
        for (row, &agent) in m.rows().iter().zip(ids) {
            let rec = TraceRecord {
                t,
                agent,
                x: row.as_slice().to_vec(),
            };
            out.push_str(&rec.emit()?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Input(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_records(&text).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Ensemble members of a file, in index order.
pub fn read_ensemble(path: &Path) -> Result<Vec<MemberRecord>> {
    let mut members = Vec::new();
    for r in read_records(path)? {
        match r {
            Record::Member(m) => members.push(m),
            _ => return Err(CliError::Input(format!("{}: not an ensemble file", path.display()))),
        }
    }
    if members.is_empty() {
        return Err(CliError::Input(format!("{}: empty ensemble", path.display())));
    }
    members.sort_by_key(|m| m.index);
    let d = members[0].d;
    if members.iter().any(|m| m.d != d) {
        return Err(CliError::Input(format!("{}: mixed dimensions", path.display())));
    }
    Ok(members)
}
