//! The live session: a control-loop thread ticking a [`Session`] against
//! the wall clock, fed by a command queue and publishing frames.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use axum::extract::ws::Utf8Bytes;
use serde::Serialize;
use swarmfield_core::log::{PlanEvent, PlanEventKind};
use swarmfield_core::planner::{Command, PlanOutcome, Planner, PlannerResult};
use swarmfield_core::runner::{Session, TickOutput};
use swarmfield_core::scenario::Scenario;
use swarmfield_core::sim::SimError;
use swarmfield_core::{PlanSource, Vec3, WaypointPlan};
use tokio::sync::{broadcast, oneshot};

/// Tick records kept in memory; older ones are dropped in batches.
const KEEP_RECORDS: usize = 2400;
/// After falling this many periods behind, the loop resynchronizes instead of bursting.
const MAX_BEHIND: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Idle,
    Running,
    Holding,
}

impl RunStatus {
    fn of(plan: &WaypointPlan) -> Self {
        if plan.source == PlanSource::Hold {
            RunStatus::Holding
        } else {
            RunStatus::Running
        }
    }
}

/// One message on the broadcast channel. `json` is sent to clients as is.
#[derive(Debug, Clone)]
pub struct Frame {
    /// Set on state frames; used for per-subscriber decimation.
    pub tick: Option<u64>,
    pub tick_rate: f64,
    pub json: Utf8Bytes,
}

impl Frame {
    pub fn new(tick: Option<u64>, tick_rate: f64, body: &impl Serialize) -> Self {
        let json = serde_json::to_string(body).expect("frames always serialize");
        Self { tick, tick_rate, json: json.into() }
    }
}

#[derive(Serialize)]
struct StateFrame<'a> {
    r#type: &'static str,
    session_id: &'a str,
    tick: u64,
    sim_time: f64,
    positions: &'a [Vec3],
    goals: &'a [Vec3],
    d_min: Option<f64>,
    speeds: Vec<f64>,
    plan_source: PlanSource,
    run_status: RunStatus,
    escape_active: bool,
    planning: bool,
}

#[derive(Serialize)]
struct PlanFrame<'a> {
    r#type: &'static str,
    session_id: &'a str,
    #[serde(flatten)]
    event: &'a PlanEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplyStatus {
    /// The planner answered; the plan is adopted at the next tick boundary.
    Planned,
    /// A newer command replaced this one first.
    Cancelled,
}

/// Response to a command. Planner failures are ordinary summaries with a
/// hold plan, never transport errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandSummary {
    pub status: ReplyStatus,
    pub request_id: u64,
    pub issued_tick: u64,
    pub command: Command,
    pub source: Option<PlanSource>,
    pub accepted: Option<bool>,
    pub outcome: Option<PlanOutcome>,
    pub rejection_reason: Option<String>,
    /// Planner wall-clock seconds.
    pub latency: Option<f64>,
    pub goals: Option<Vec<Vec3>>,
}

struct Waiting {
    id: u64,
    issued_tick: u64,
    command: Command,
    reply: oneshot::Sender<CommandSummary>,
}

impl Waiting {
    fn answer(self, result: Option<&PlannerResult>) {
        let summary = CommandSummary {
            status: if result.is_some() { ReplyStatus::Planned } else { ReplyStatus::Cancelled },
            request_id: self.id,
            issued_tick: self.issued_tick,
            command: self.command,
            source: result.map(|r| r.plan.source),
            accepted: result.map(|r| r.plan.accepted),
            outcome: result.map(|r| r.outcome),
            rejection_reason: result.and_then(|r| r.plan.rejection_reason.clone()),
            latency: result.map(|r| r.latency),
            goals: result.map(|r| r.plan.goals.clone()),
        };
        // The client may have gone away.
        let _ = self.reply.send(summary);
    }
}

enum LoopMsg {
    Command(Command, oneshot::Sender<CommandSummary>),
    PlannerReady,
    Stop,
}

/// What readers see of the running session, updated every tick.
#[derive(Debug, Clone, Serialize)]
pub struct LiveView {
    pub tick: u64,
    pub sim_time: f64,
    pub plan: WaypointPlan,
    pub run_status: RunStatus,
    pub planning: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("session has stopped")]
pub struct Stopped;

pub struct LiveSession {
    id: String,
    scenario: Scenario,
    tx: mpsc::Sender<LoopMsg>,
    view: Arc<RwLock<LiveView>>,
    thread: Option<JoinHandle<()>>,
}

impl LiveSession {
    /// Builds the session and starts its control loop. The scenario's
    /// script is ignored; commands come from [`submit`](Self::submit).
    pub fn start(
        id: String,
        scenario: Scenario,
        planner: Box<dyn Planner>,
        frames: broadcast::Sender<Frame>,
    ) -> Result<Self, SimError> {
        let (tx, rx) = mpsc::channel();
        let notify_tx = tx.clone();
        let notify = Box::new(move || {
            let _ = notify_tx.send(LoopMsg::PlannerReady);
        });
        let session = Session::with_notifier(scenario.clone(), planner, notify)?;
        let snap = session.snapshot();
        let view = Arc::new(RwLock::new(LiveView {
            tick: snap.tick(),
            sim_time: snap.sim_time(),
            plan: session.plan().clone(),
            run_status: RunStatus::of(session.plan()),
            planning: false,
        }));
        let control = ControlLoop { id: id.clone(), session, rx, view: view.clone(), frames, waiting: None };
        let thread = thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || control.run())
            .expect("spawn control loop thread");
        Ok(Self { id, scenario, tx, view, thread: Some(thread) })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn view(&self) -> LiveView {
        self.view.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Queues `command`; the receiver resolves once the planner has answered
    /// or a newer command superseded it. Never waits on the control loop.
    pub fn submit(&self, command: Command) -> Result<oneshot::Receiver<CommandSummary>, Stopped> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(LoopMsg::Command(command, reply)).map_err(|_| Stopped)?;
        Ok(rx)
    }

    /// Stops the loop and waits for its thread (at most one tick).
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let _ = self.tx.send(LoopMsg::Stop);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct ControlLoop {
    id: String,
    session: Session,
    rx: mpsc::Receiver<LoopMsg>,
    view: Arc<RwLock<LiveView>>,
    frames: broadcast::Sender<Frame>,
    waiting: Option<Waiting>,
}

impl ControlLoop {
    fn run(mut self) {
        let period = Duration::from_secs_f64(self.session.scenario().params.dt);
        let mut next = Instant::now();
        loop {
            let now = Instant::now();
            if now >= next {
                match self.session.tick() {
                    Ok(out) => self.publish(out),
                    Err(e) => {
                        tracing::error!("control loop stopped: {e}");
                        break;
                    }
                }
                next += period;
                if Instant::now() > next + period * MAX_BEHIND {
                    tracing::warn!("control loop fell behind; resynchronizing");
                    next = Instant::now() + period;
                }
                if self.session.records().len() >= 2 * KEEP_RECORDS {
                    self.session.trim_records(KEEP_RECORDS);
                }
                continue;
            }
            match self.rx.recv_timeout(next - now) {
                Ok(LoopMsg::Command(command, reply)) => {
                    if let Some(old) = self.waiting.take() {
                        old.answer(None);
                    }
                    let issued_tick = self.session.snapshot().tick();
                    let id = self.session.submit(command.clone());
                    self.waiting = Some(Waiting { id, issued_tick, command, reply });
                }
                Ok(LoopMsg::PlannerReady) => {
                    if let Some(result) = self.session.poll_planner() {
                        if let Some(w) = self.waiting.take() {
                            w.answer(Some(result));
                        }
                    }
                }
                Ok(LoopMsg::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
        }
    }

    fn publish(&mut self, out: TickOutput) {
        let tick_rate = self.session.scenario().params.tick_rate();
        for event in &out.events {
            // The tick may adopt a result before its ready notice is handled.
            if event.event == PlanEventKind::Adopted {
                if let Some(w) = self.waiting.take() {
                    w.answer(event.result.as_ref());
                }
            }
            let frame = PlanFrame { r#type: "plan", session_id: &self.id, event };
            let _ = self.frames.send(Frame::new(None, tick_rate, &frame));
        }
        let plan = self.session.plan();
        let run_status = RunStatus::of(plan);
        let planning = self.session.is_planning();
        let r = &out.record;
        let frame = StateFrame {
            r#type: "state",
            session_id: &self.id,
            tick: r.tick,
            sim_time: r.sim_time,
            positions: &r.positions,
            goals: &plan.goals,
            d_min: r.d_min,
            speeds: r.commanded_velocities.iter().map(|v| v.norm()).collect(),
            plan_source: plan.source,
            run_status,
            escape_active: r.escape_active,
            planning,
        };
        // No subscribers is not an error.
        let _ = self.frames.send(Frame::new(Some(r.tick), tick_rate, &frame));
        let mut view = self.view.write().unwrap_or_else(|e| e.into_inner());
        *view = LiveView { tick: r.tick, sim_time: r.sim_time, plan: plan.clone(), run_status, planning };
    }
}
