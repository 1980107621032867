//! Per-tick metrics and run summaries.
//!
//! Everything in a [`RunReport`] is recomputed from the tick series and the
//! plan events, so a report built live and one rebuilt from a log are equal.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::apf::{self, VelocityCommandSet, CONVERGENCE_TOLERANCE, STALL_SPEED};
use crate::geometry::{distance, Vec3};
use crate::model::{ControllerParams, PlanSource, SwarmSnapshot, TickRecord, WaypointPlan};
use crate::planner::PlanOutcome;

/// Seconds all agents must stay within tolerance of their goals to count as converged.
pub const CONVERGENCE_HOLD_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("tick {got} recorded after tick {last}")]
    OutOfOrderTick { last: u64, got: u64 },
    #[error("cannot summarize a run with no ticks")]
    EmptyRun,
}

/// Minimum distance over all unordered pairs by the plain double loop.
pub fn min_pairwise_distance_brute_force(positions: &[Vec3]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = distance(positions[i], positions[j]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Minimum pairwise distance using a sweep along X. Returns exactly the
/// same value as the double loop: every candidate distance is computed by
/// the same expression, only provably larger pairs are skipped.
pub fn min_pairwise_distance(positions: &[Vec3]) -> Option<f64> {
    if positions.len() < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a].x.total_cmp(&positions[b].x));
    let mut best = f64::INFINITY;
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if positions[j].x - positions[i].x > best {
                break;
            }
            best = best.min(distance(positions[i], positions[j]));
        }
    }
    Some(best)
}

pub fn snapshot_min_distance(snapshot: &SwarmSnapshot) -> Option<f64> {
    min_pairwise_distance(&snapshot.positions())
}

/// Appends tick records in strictly increasing tick order.
#[derive(Debug, Clone)]
pub struct Recorder {
    params: ControllerParams,
    records: Vec<TickRecord>,
}

impl Recorder {
    pub fn new(params: ControllerParams) -> Self {
        Self { params, records: Vec::new() }
    }

    pub fn record_tick(
        &mut self,
        snapshot: &SwarmSnapshot,
        commands: &VelocityCommandSet,
        plan: &WaypointPlan,
    ) -> Result<&TickRecord, MetricsError> {
        if let Some(last) = self.records.last() {
            if snapshot.tick() <= last.tick {
                return Err(MetricsError::OutOfOrderTick { last: last.tick, got: snapshot.tick() });
            }
        }
        let positions = snapshot.positions();
        let record = TickRecord {
            tick: snapshot.tick(),
            sim_time: snapshot.sim_time(),
            d_min: min_pairwise_distance(&positions),
            potential: apf::potential_of_positions(&positions, &plan.goals, &self.params),
            positions,
            commanded_velocities: commands.velocities.clone(),
            active_plan_source: plan.source,
            escape_active: !commands.escape_applied.is_empty(),
        };
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    /// Keeps only the newest `keep` records.
    pub fn retain_last(&mut self, keep: usize) {
        let excess = self.records.len().saturating_sub(keep);
        self.records.drain(..excess);
    }

    pub fn into_records(self) -> Vec<TickRecord> {
        self.records
    }
}

/// `d_min` strictly below the physical contact distance.
pub fn is_collision(d_min: Option<f64>, params: &ControllerParams) -> bool {
    d_min.is_some_and(|d| d < params.collision_dist)
}

/// `d_min` strictly below the repulsion radius.
pub fn is_apf_activation(d_min: Option<f64>, params: &ControllerParams) -> bool {
    d_min.is_some_and(|d| d < params.r_min)
}

/// Counts consecutive ticks on which every agent is within tolerance of the
/// active goals. A new plan restarts the count.
#[derive(Debug, Clone)]
pub struct ConvergenceWindow {
    required: u64,
    tolerance: f64,
    streak: u64,
    start: Option<(u64, f64)>,
}

impl ConvergenceWindow {
    pub fn new(params: &ControllerParams) -> Self {
        Self {
            required: (CONVERGENCE_HOLD_S / params.dt).round().max(1.0) as u64,
            tolerance: CONVERGENCE_TOLERANCE,
            streak: 0,
            start: None,
        }
    }

    pub fn reset(&mut self) {
        self.streak = 0;
        self.start = None;
    }

    pub fn observe(&mut self, tick: u64, sim_time: f64, positions: &[Vec3], goals: &[Vec3]) {
        let inside = positions.iter().zip(goals).all(|(p, g)| distance(*p, *g) <= self.tolerance);
        if inside {
            if self.streak == 0 {
                self.start = Some((tick, sim_time));
            }
            self.streak += 1;
        } else {
            self.reset();
        }
    }

    pub fn is_satisfied(&self) -> bool {
        self.streak >= self.required
    }

    /// Simulated time of the first tick of the current window, once satisfied.
    pub fn convergence_time(&self) -> Option<f64> {
        self.start.filter(|_| self.is_satisfied()).map(|(_, t)| t)
    }
}

/// A plan taking effect at `tick`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adoption<'a> {
    pub tick: u64,
    pub plan: &'a WaypointPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub issued_tick: u64,
    pub latency: f64,
    pub outcome: PlanOutcome,
    pub source: PlanSource,
}

/// Latency counts over log-spaced buckets. `counts[0]` is below the first
/// edge, `counts[k]` is `[edges[k-1], edges[k])`, the last is the overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl LatencyHistogram {
    pub const LOW: f64 = 0.1;
    pub const HIGH: f64 = 300.0;
    pub const BUCKETS: usize = 14;

    pub fn new() -> Self {
        let ratio = (Self::HIGH / Self::LOW).powf(1.0 / Self::BUCKETS as f64);
        let mut edges: Vec<f64> = (0..=Self::BUCKETS).map(|k| Self::LOW * ratio.powi(k as i32)).collect();
        edges[Self::BUCKETS] = Self::HIGH;
        let counts = vec![0; edges.len() + 1];
        Self { edges, counts }
    }

    pub fn add(&mut self, seconds: f64) {
        let k = self.edges.partition_point(|&e| e <= seconds);
        self.counts[k] += 1;
    }
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

/// First agent-stall streak long enough to have triggered the escape nudge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StallReport {
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_tick: Option<u64>,
    /// Agents that stalled at least once, ascending.
    pub agents: Vec<usize>,
    pub stalled_ticks: u64,
}

/// Static description of a run carried into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub n_agents: usize,
    pub params: ControllerParams,
    pub expect_convergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub n_agents: usize,
    pub ticks: u64,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    pub expect_convergence: bool,
    pub d_min_global: Option<f64>,
    pub d_min_series: Vec<Option<f64>>,
    pub speed_max_global: f64,
    pub speed_series: Vec<Vec<f64>>,
    /// Largest single-tick displacement of any agent (m).
    pub max_step_displacement: f64,
    pub collisions: u64,
    pub apf_activations: u64,
    pub planner_latencies: Vec<LatencySample>,
    pub latency_histogram: LatencyHistogram,
    /// Ticks on which any agent received the escape nudge.
    pub escape_events: u64,
    pub stall: StallReport,
}

impl RunReport {
    /// The run met its expectations: no collision, and converged if it was supposed to.
    pub fn passed(&self) -> bool {
        self.collisions == 0 && (self.converged || !self.expect_convergence)
    }
}

/// CSV export: `tick,sim_time,d_min,speed_0..speed_{N-1}`; `d_min` is empty for one agent.
pub fn records_to_csv(records: &[TickRecord]) -> String {
    let n = records.first().map_or(0, |r| r.positions.len());
    let mut out = String::from("tick,sim_time,d_min");
    for i in 0..n {
        let _ = write!(out, ",speed_{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},", r.tick, r.sim_time);
        if let Some(d) = r.d_min {
            let _ = write!(out, "{d}");
        }
        for v in &r.commanded_velocities {
            let _ = write!(out, ",{}", v.norm());
        }
        out.push('\n');
    }
    out
}

/// Aggregates a run. `adoptions` must be in tick order; the plan active at a
/// tick is the last one adopted at or before it.
pub fn summarize_run(
    meta: &RunMeta,
    records: &[TickRecord],
    adoptions: &[Adoption<'_>],
    latencies: &[LatencySample],
) -> Result<RunReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let params = &meta.params;
    let n = meta.n_agents;
    let mut window = ConvergenceWindow::new(params);
    let mut next_adoption = 0;
    let mut goals: Option<&[Vec3]> = None;

    let mut d_min_series = Vec::with_capacity(records.len());
    let mut speed_series = Vec::with_capacity(records.len());
    let mut d_min_global: Option<f64> = None;
    let mut speed_max_global = 0.0f64;
    let mut max_step_displacement = 0.0f64;
    let (mut collisions, mut apf_activations, mut escape_events) = (0, 0, 0);

    let mut stall_streak = vec![0u32; n];
    let mut stalled_agents = vec![false; n];
    let mut stall_first_tick = None;
    let mut stalled_ticks = 0;
    let mut prev_positions: Option<&[Vec3]> = None;

    for r in records {
        while next_adoption < adoptions.len() && adoptions[next_adoption].tick <= r.tick {
            goals = Some(&adoptions[next_adoption].plan.goals);
            window.reset();
            next_adoption += 1;
        }

        d_min_series.push(r.d_min);
        if let Some(d) = r.d_min {
            d_min_global = Some(d_min_global.map_or(d, |g| g.min(d)));
        }
        collisions += u64::from(is_collision(r.d_min, params));
        apf_activations += u64::from(is_apf_activation(r.d_min, params));
        escape_events += u64::from(r.escape_active);

        let speeds: Vec<f64> = r.commanded_velocities.iter().map(|v| v.norm()).collect();
        speed_max_global = speeds.iter().fold(speed_max_global, |m, &s| m.max(s));
        speed_series.push(speeds);

        if let Some(prev) = prev_positions {
            for (a, b) in prev.iter().zip(&r.positions) {
                max_step_displacement = max_step_displacement.max(distance(*a, *b));
            }
        }
        prev_positions = Some(&r.positions);

        if let Some(goals) = goals {
            window.observe(r.tick, r.sim_time, &r.positions, goals);
            let mut any = false;
            for i in 0..n.min(goals.len()) {
                let away = distance(r.positions[i], goals[i]) > CONVERGENCE_TOLERANCE;
                let slow = r.commanded_velocities[i].norm() < STALL_SPEED;
                if away && slow {
                    stall_streak[i] += 1;
                    if stall_streak[i] >= params.escape_stall_ticks {
                        stalled_agents[i] = true;
                        stall_first_tick.get_or_insert(r.tick);
                        any = true;
                    }
                } else {
                    stall_streak[i] = 0;
                }
            }
            stalled_ticks += u64::from(any);
        }
    }

    let mut histogram = LatencyHistogram::new();
    for s in latencies {
        histogram.add(s.latency);
    }
    let convergence_time = window.convergence_time();
    Ok(RunReport {
        scenario: meta.scenario.clone(),
        n_agents: n,
        ticks: records.len() as u64,
        converged: convergence_time.is_some(),
        convergence_time,
        expect_convergence: meta.expect_convergence,
        d_min_global,
        d_min_series,
        speed_max_global,
        speed_series,
        max_step_displacement,
        collisions,
        apf_activations,
        planner_latencies: latencies.to_vec(),
        latency_histogram: histogram,
        escape_events,
        stall: StallReport {
            detected: stall_first_tick.is_some(),
            first_tick: stall_first_tick,
            agents: stalled_agents.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i).collect(),
            stalled_ticks,
        },
    })
}
