//! JSONL run logs.
//!
//! Each line is one JSON object with a `type` field:
//!
//! * `header`: first line: log schema version, the resolved scenario and the planner kind.
//! * `plan`: a plan adopted or a pending request superseded at `tick`.
//! * `tick`: one [`TickRecord`].
//!
//! Plan lines for a tick come before that tick's record.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::metrics::{summarize_run, Adoption, LatencySample, MetricsError, RunMeta, RunReport};
use crate::model::TickRecord;
use crate::planner::{Command, PlannerResult, TranscriptEntry};
use crate::scenario::Scenario;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    /// A line that is not a valid record of this schema version, including
    /// a line cut short by a truncated write.
    #[error("log line {line} does not match schema {LOG_SCHEMA_VERSION}: {reason}")]
    SchemaMismatch { line: usize, reason: String },
    #[error("log has no header line")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    /// `oracle`, `llm` or `transcript`.
    pub planner: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanEventKind {
    Adopted,
    /// A newer command replaced this one before its result was adopted.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub tick: u64,
    pub event: PlanEventKind,
    pub issued_tick: u64,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<PlannerResult>,
}

impl PlanEvent {
    pub fn latency_sample(&self) -> Option<LatencySample> {
        self.result.as_ref().map(|r| LatencySample {
            issued_tick: self.issued_tick,
            latency: r.latency,
            outcome: r.outcome,
            source: r.plan.source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogLine {
    Header(LogHeader),
    Plan(PlanEvent),
    Tick(TickRecord),
}

/// Serializes one line, without the trailing newline.
pub fn encode_line(line: &LogLine) -> String {
    serde_json::to_string(line).expect("log lines always serialize")
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, line: &LogLine) -> std::io::Result<()> {
        self.out.write_all(encode_line(line).as_bytes())?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A parsed log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub plans: Vec<PlanEvent>,
    pub ticks: Vec<TickRecord>,
}

impl RunLog {
    pub fn read(input: impl BufRead) -> Result<Self, LogError> {
        let mut header = None;
        let mut plans = Vec::new();
        let mut ticks = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line_no = k + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mismatch = |reason: String| LogError::SchemaMismatch { line: line_no, reason };
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| {
                // A header from another schema version may not even parse; report the version if it is there.
                match version_of(&line) {
                    Some(found) if found != LOG_SCHEMA_VERSION => mismatch(format!("schema version {found}")),
                    _ => mismatch(e.to_string()),
                }
            })?;
            match parsed {
                LogLine::Header(h) => {
                    if h.schema_version != LOG_SCHEMA_VERSION {
                        return Err(mismatch(format!("schema version {}", h.schema_version)));
                    }
                    if header.is_some() {
                        return Err(mismatch("second header".into()));
                    }
                    header = Some(h);
                }
                _ if header.is_none() => return Err(LogError::MissingHeader),
                LogLine::Plan(p) => plans.push(p),
                LogLine::Tick(t) => ticks.push(t),
            }
        }
        Ok(Self { header: header.ok_or(LogError::MissingHeader)?, plans, ticks })
    }

    pub fn meta(&self) -> RunMeta {
        let s = &self.header.scenario;
        RunMeta {
            scenario: s.name.clone(),
            n_agents: s.n_agents,
            params: s.params,
            expect_convergence: s.expect_convergence,
        }
    }

    /// Recomputes the run report from the logged series.
    pub fn report(&self) -> Result<RunReport, LogError> {
        Ok(report_from_parts(&self.meta(), &self.ticks, &self.plans)?)
    }

    /// Model replies in request order, for deterministic re-simulation.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        let mut text: Vec<&PlanEvent> =
            self.plans.iter().filter(|p| p.command.is_text() && p.result.is_some()).collect();
        text.sort_by_key(|p| p.issued_tick);
        text.iter().map(|p| TranscriptEntry::from_result(p.result.as_ref().expect("filtered"))).collect()
    }
}

fn version_of(line: &str) -> Option<u32> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    if v.get("type")?.as_str()? != "header" {
        return None;
    }
    v.get("schema_version")?.as_u64().map(|n| n as u32)
}

/// The one place a report is computed, for live runs and for replays alike.
pub fn report_from_parts(meta: &RunMeta, ticks: &[TickRecord], plans: &[PlanEvent]) -> Result<RunReport, MetricsError> {
    let adoptions: Vec<Adoption<'_>> = plans
        .iter()
        .filter(|p| p.event == PlanEventKind::Adopted)
        .filter_map(|p| p.result.as_ref().map(|r| Adoption { tick: p.tick, plan: &r.plan }))
        .collect();
    let latencies: Vec<LatencySample> = plans.iter().filter_map(PlanEvent::latency_sample).collect();
    summarize_run(meta, ticks, &adoptions, &latencies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::model::PlanSource;
    use crate::scenario::builtin;

    fn header() -> LogLine {
        LogLine::Header(LogHeader {
            schema_version: LOG_SCHEMA_VERSION,
            planner: "oracle".into(),
            scenario: builtin("two_agent_equilibrium", None).unwrap(),
        })
    }

    fn tick(k: u64) -> LogLine {
        LogLine::Tick(TickRecord {
            tick: k,
            sim_time: k as f64 * 0.05,
            positions: vec![Vec3::new(1.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 1.0)],
            commanded_velocities: vec![Vec3::ZERO; 2],
            d_min: Some(2.0),
            potential: 0.1 + 0.2,
            active_plan_source: PlanSource::Hold,
            escape_active: false,
        })
    }

    fn write_all(lines: &[LogLine]) -> Vec<u8> {
        let mut w = LogWriter::new(Vec::new());
        for l in lines {
            w.write(l).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn lines_round_trip_bit_exactly() {
        let bytes = write_all(&[header(), tick(0), tick(1)]);
        let log = RunLog::read(bytes.as_slice()).unwrap();
        assert_eq!(log.ticks.len(), 2);
        assert_eq!(log.ticks[0].potential, 0.1 + 0.2);
        let mut again = vec![LogLine::Header(log.header.clone())];
        again.extend(log.ticks.iter().cloned().map(LogLine::Tick));
        assert_eq!(write_all(&again), bytes);
        assert!(String::from_utf8(bytes).unwrap().starts_with(r#"{"type":"header","schema_version":1,"#));
    }

    #[test]
    fn truncated_log_fails_at_the_cut_line() {
        let bytes = write_all(&[header(), tick(0), tick(1), tick(2)]);
        let text = String::from_utf8(bytes).unwrap();
        let cut = &text[..text.len() - 40];
        match RunLog::read(cut.as_bytes()) {
            Err(LogError::SchemaMismatch { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_schema_version_is_reported_with_line_number() {
        let mut text = String::from_utf8(write_all(&[header()])).unwrap();
        text = text.replace(r#""schema_version":1"#, r#""schema_version":7"#);
        match RunLog::read(text.as_bytes()) {
            Err(LogError::SchemaMismatch { line: 1, reason }) => assert!(reason.contains('7'), "{reason}"),
            other => panic!("{other:?}"),
        }
        let broken = format!("{}{{\"type\":\"tick\"}}\n", String::from_utf8(write_all(&[header()])).unwrap());
        assert!(matches!(RunLog::read(broken.as_bytes()), Err(LogError::SchemaMismatch { line: 2, .. })));
        assert!(matches!(RunLog::read(write_all(&[tick(0)]).as_slice()), Err(LogError::MissingHeader)));
    }
}
