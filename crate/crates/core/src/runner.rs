//! The sense–plan–act loop: a [`Session`] owns the world, hands commands to a
//! planner and adopts finished plans at tick boundaries; [`run_scenario`]
//! drives a session through a scripted scenario.

use std::io::Write;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::log::{report_from_parts, LogHeader, LogLine, LogWriter, PlanEvent, PlanEventKind, LOG_SCHEMA_VERSION};
use crate::metrics::{ConvergenceWindow, MetricsError, Recorder, RunMeta, RunReport};
use crate::model::{SwarmSnapshot, TickRecord, WaypointPlan};
use crate::planner::{Command, PlanRequest, Planner, PlannerResult};
use crate::scenario::Scenario;
use crate::sim::{SimError, World};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write log: {0}")]
    Io(#[from] std::io::Error),
}

struct Job {
    id: u64,
    request: PlanRequest,
}

enum Dispatch {
    /// The planner runs on the caller's thread; its reported latency is
    /// replayed in simulated time.
    Inline(Box<dyn Planner>),
    /// The planner runs on its own thread; results are picked up at the first
    /// tick boundary after they arrive.
    Worker {
        jobs: Option<mpsc::Sender<Job>>,
        results: mpsc::Receiver<(u64, PlannerResult)>,
        handle: Option<JoinHandle<()>>,
    },
}

/// Called on the planner thread each time a result is ready.
pub type Notifier = Box<dyn Fn() + Send>;

impl Dispatch {
    fn worker(mut planner: Box<dyn Planner>, notify: Option<Notifier>) -> Self {
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (res_tx, res_rx) = mpsc::channel();
        let handle = std::thread::Builder::new()
            .name("planner".into())
            .spawn(move || {
                while let Ok(mut job) = job_rx.recv() {
                    // Only the newest queued command matters.
                    while let Ok(newer) = job_rx.try_recv() {
                        job = newer;
                    }
                    let result = planner.plan(&job.request);
                    if res_tx.send((job.id, result)).is_err() {
                        break;
                    }
                    if let Some(n) = &notify {
                        n();
                    }
                }
            })
            .expect("spawn planner thread");
        Dispatch::Worker { jobs: Some(job_tx), results: res_rx, handle: Some(handle) }
    }
}

impl Drop for Dispatch {
    fn drop(&mut self) {
        if let Dispatch::Worker { jobs, handle, .. } = self {
            jobs.take();
            // A planner blocked on the network is left to finish on its own.
            if let Some(h) = handle.take() {
                if h.is_finished() {
                    let _ = h.join();
                }
            }
        }
    }
}

struct Pending {
    id: u64,
    issued_tick: u64,
    command: Command,
    result: Option<PlannerResult>,
    due_tick: u64,
}

/// What one call to [`Session::tick`] produced.
#[derive(Debug, Clone)]
pub struct TickOutput {
    /// Plan events since the previous tick, in order.
    pub events: Vec<PlanEvent>,
    pub record: TickRecord,
}

pub struct Session {
    scenario: Scenario,
    world: World,
    recorder: Recorder,
    plans: Vec<PlanEvent>,
    unreported: usize,
    window: ConvergenceWindow,
    dispatch: Dispatch,
    pending: Option<Pending>,
    next_id: u64,
    has_plan: bool,
}

impl Session {
    /// `threaded` runs the planner off the control thread (wall-clock
    /// latency); otherwise planner latency is simulated in ticks.
    pub fn new(scenario: Scenario, planner: Box<dyn Planner>, threaded: bool) -> Result<Self, SimError> {
        let dispatch = if threaded { Dispatch::worker(planner, None) } else { Dispatch::Inline(planner) };
        Self::with_dispatch(scenario, dispatch, threaded)
    }

    /// Threaded session whose planner thread calls `notify` whenever a result is ready.
    pub fn with_notifier(scenario: Scenario, planner: Box<dyn Planner>, notify: Notifier) -> Result<Self, SimError> {
        Self::with_dispatch(scenario, Dispatch::worker(planner, Some(notify)), true)
    }

    fn with_dispatch(scenario: Scenario, dispatch: Dispatch, realtime: bool) -> Result<Self, SimError> {
        let world = World::new(&scenario.config(realtime))?;
        let params = scenario.params;
        Ok(Self {
            scenario,
            world,
            recorder: Recorder::new(params),
            plans: Vec::new(),
            unreported: 0,
            window: ConvergenceWindow::new(&params),
            dispatch,
            pending: None,
            next_id: 0,
            has_plan: false,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn snapshot(&self) -> &SwarmSnapshot {
        self.world.snapshot()
    }

    pub fn plan(&self) -> &WaypointPlan {
        self.world.plan()
    }

    pub fn records(&self) -> &[TickRecord] {
        self.recorder.records()
    }

    pub fn plan_events(&self) -> &[PlanEvent] {
        &self.plans
    }

    pub fn is_planning(&self) -> bool {
        self.pending.is_some()
    }

    /// All agents have stayed at their goals long enough and nothing is in flight.
    pub fn is_settled(&self) -> bool {
        self.pending.is_none() && self.window.is_satisfied()
    }

    /// Sends `command` to the planner. A request still in flight is
    /// superseded and logged as cancelled. Returns the request id.
    pub fn submit(&mut self, command: Command) -> u64 {
        let tick = self.world.snapshot().tick();
        if let Some(old) = self.pending.take() {
            self.plans.push(PlanEvent {
                tick,
                event: PlanEventKind::Cancelled,
                issued_tick: old.issued_tick,
                command: old.command,
                result: old.result,
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        let request = PlanRequest {
            command: command.clone(),
            snapshot: self.world.snapshot().clone(),
            fence: self.scenario.fence,
            params: self.scenario.params,
            lenient: self.scenario.lenient,
        };
        let dt = self.scenario.params.dt;
        let (result, due_tick) = match &mut self.dispatch {
            Dispatch::Inline(planner) => {
                let result = planner.plan(&request);
                let delay = (planner.simulated_latency(&result) / dt - 1e-9).ceil().max(0.0) as u64;
                (Some(result), tick + delay)
            }
            Dispatch::Worker { jobs, .. } => {
                if let Some(tx) = jobs {
                    let _ = tx.send(Job { id, request });
                }
                (None, tick)
            }
        };
        self.pending = Some(Pending { id, issued_tick: tick, command, result, due_tick });
        id
    }

    /// Collects a finished result from the planner thread, if any, and
    /// returns the pending request's result once it is available. The
    /// result is still adopted only at the next tick.
    pub fn poll_planner(&mut self) -> Option<&PlannerResult> {
        self.poll_worker();
        self.pending.as_ref().and_then(|p| p.result.as_ref())
    }

    /// Drops all but the newest `keep` tick records (long-lived sessions).
    pub fn trim_records(&mut self, keep: usize) {
        self.recorder.retain_last(keep);
    }

    fn poll_worker(&mut self) {
        let tick = self.world.snapshot().tick();
        if let Dispatch::Worker { results, .. } = &self.dispatch {
            while let Ok((id, result)) = results.try_recv() {
                if let Some(p) = self.pending.as_mut().filter(|p| p.id == id) {
                    p.result = Some(result);
                    p.due_tick = tick;
                }
            }
        }
    }

    /// Adopts a finished plan if one is due, runs the safety filter, integrates
    /// and records one tick.
    pub fn tick(&mut self) -> Result<TickOutput, MetricsError> {
        self.poll_worker();
        let tick = self.world.snapshot().tick();
        if self.pending.as_ref().is_some_and(|p| p.result.is_some() && p.due_tick <= tick) {
            let p = self.pending.take().expect("checked");
            let result = p.result.expect("checked");
            self.world.adopt_plan(result.plan.clone());
            self.window.reset();
            self.has_plan = true;
            self.plans.push(PlanEvent {
                tick,
                event: PlanEventKind::Adopted,
                issued_tick: p.issued_tick,
                command: p.command,
                result: Some(result),
            });
        }
        let step = self.world.step();
        let record = self.recorder.record_tick(&step.snapshot, &step.commands, self.world.plan())?.clone();
        if self.has_plan {
            self.window.observe(record.tick, record.sim_time, &record.positions, &self.world.plan().goals);
        }
        let events = self.plans[self.unreported..].to_vec();
        self.unreported = self.plans.len();
        Ok(TickOutput { events, record })
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            scenario: self.scenario.name.clone(),
            n_agents: self.scenario.n_agents,
            params: self.scenario.params,
            expect_convergence: self.scenario.expect_convergence,
        }
    }

    pub fn report(&self) -> Result<RunReport, MetricsError> {
        report_from_parts(&self.meta(), self.recorder.records(), &self.plans)
    }
}

/// Wall-clock pacing statistics of a realtime run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RealtimeStats {
    pub ticks: u64,
    /// Ticks dispatched no later than one period after their deadline.
    pub on_time: u64,
    pub max_lateness: f64,
}

impl RealtimeStats {
    pub fn on_time_fraction(&self) -> f64 {
        if self.ticks == 0 {
            1.0
        } else {
            self.on_time as f64 / self.ticks as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Pace ticks against the wall clock and run the planner on its own thread.
    pub realtime: bool,
    /// Planner name stamped into the log header.
    pub planner_label: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { realtime: false, planner_label: "oracle".into() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub records: Vec<TickRecord>,
    pub plans: Vec<PlanEvent>,
    pub realtime: Option<RealtimeStats>,
}

/// Runs `scenario` to its duration, or until the last scripted command has
/// been adopted and the swarm has held its goals for the convergence window.
/// Log lines go to `log` as they are produced.
pub fn run_scenario(
    scenario: &Scenario,
    planner: Box<dyn Planner>,
    options: &RunOptions,
    log: Option<&mut dyn Write>,
) -> Result<RunOutput, RunError> {
    let mut session = Session::new(scenario.clone(), planner, options.realtime)?;
    let mut writer = log.map(LogWriter::new);
    if let Some(w) = writer.as_mut() {
        w.write(&LogLine::Header(LogHeader {
            schema_version: LOG_SCHEMA_VERSION,
            planner: options.planner_label.clone(),
            scenario: scenario.clone(),
        }))?;
    }
    let dt = scenario.params.dt;
    let total = scenario.config(options.realtime).total_ticks();
    let mut script = scenario.script.iter().peekable();
    let start = Instant::now();
    let mut stats = RealtimeStats { ticks: 0, on_time: 0, max_lateness: 0.0 };

    for k in 0..total {
        if options.realtime {
            let deadline = start + Duration::from_secs_f64(k as f64 * dt);
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            let lateness = Instant::now().saturating_duration_since(deadline).as_secs_f64();
            stats.ticks += 1;
            stats.on_time += u64::from(lateness <= dt);
            stats.max_lateness = stats.max_lateness.max(lateness);
        }
        let now = k as f64 * dt;
        while let Some(entry) = script.next_if(|e| e.at_time <= now + 1e-9) {
            session.submit(entry.command.clone());
        }
        let out = session.tick()?;
        if let Some(w) = writer.as_mut() {
            for e in out.events {
                w.write(&LogLine::Plan(e))?;
            }
            w.write(&LogLine::Tick(out.record))?;
        }
        if script.peek().is_none() && session.is_settled() {
            break;
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }
    Ok(RunOutput {
        report: session.report()?,
        records: session.records().to_vec(),
        plans: session.plan_events().to_vec(),
        realtime: options.realtime.then_some(stats),
    })
}
