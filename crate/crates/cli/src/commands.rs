use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use swarmfield_core::log::RunLog;
use swarmfield_core::metrics::{records_to_csv, RunReport};
use swarmfield_core::planner::{LlmPlanner, OraclePlanner, Planner, TranscriptPlanner};
use swarmfield_core::runner::{run_scenario, RunOptions};
use swarmfield_core::scenario::{builtin, Scenario, ScenarioError};
use swarmfield_gateway::{Gateway, GatewayConfig, Mode};

use crate::args::{Cli, Cmd, PlannerKind, ReplayArgs, ReportArgs, RunArgs, ServeArgs};
use crate::error::CliError;

pub fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Cmd::Run(args) => run(args),
        Cmd::Replay(args) => replay(args),
        Cmd::Report(args) => report(args),
        Cmd::Serve(args) => serve(args),
    }
}

/// A report's exit code: the only thing it depends on is the report.
pub fn exit_code(report: &RunReport) -> ExitCode {
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// The bytes of `report.json`; replay prints exactly these.
pub fn encode_report(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialize") + "\n"
}

fn is_file_ref(s: &str) -> bool {
    s.ends_with(".json") || Path::new(s).is_file()
}

pub fn load_scenario(args: &RunArgs) -> Result<Scenario, ScenarioError> {
    let mut s = if is_file_ref(&args.scenario) {
        let mut s = Scenario::from_file(Path::new(&args.scenario))?;
        if let Some(n) = args.agents {
            s.n_agents = n;
        }
        s
    } else {
        builtin(&args.scenario, args.agents)?
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(d) = args.duration {
        s.duration = d;
    }
    s.lenient |= args.lenient_parse;
    if args.no_escape {
        s.params.escape_enabled = false;
    }
    s.validate()?;
    Ok(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn run(args: RunArgs) -> Result<ExitCode, CliError> {
    let scenario = load_scenario(&args)?;
    // Configuration problems surface before anything is simulated.
    let (planner, label): (Box<dyn Planner>, &str) = match args.planner {
        PlannerKind::Oracle => (Box::new(OraclePlanner), "oracle"),
        PlannerKind::Llm => (Box::new(LlmPlanner::from_env()?), "llm"),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let log_path = args.out.join("log.jsonl");
    let mut log = create(&log_path)?;
    let options = RunOptions { realtime: args.realtime, planner_label: label.into() };
    let out = run_scenario(&scenario, planner, &options, Some(&mut log))?;
    log.flush().map_err(|e| CliError::io(&log_path, e))?;

    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, encode_report(&out.report)).map_err(|e| CliError::io(&report_path, e))?;
    let csv_path = args.out.join("metrics.csv");
    std::fs::write(&csv_path, records_to_csv(&out.records)).map_err(|e| CliError::io(&csv_path, e))?;

    let mut stdout = std::io::stdout().lock();
    print_summary(&out.report, &mut stdout);
    if let Some(rt) = out.realtime {
        let _ = writeln!(
            stdout,
            "realtime      {:.1}% of {} ticks on time, worst lateness {:.1} ms",
            100.0 * rt.on_time_fraction(),
            rt.ticks,
            rt.max_lateness * 1e3
        );
    }
    let _ = writeln!(stdout, "artifacts     {}", args.out.display());
    Ok(exit_code(&out.report))
}

fn read_log(path: &Path) -> Result<(RunLog, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let log = RunLog::read(BufReader::new(bytes.as_slice()))?;
    Ok((log, bytes))
}

fn replay(args: ReplayArgs) -> Result<ExitCode, CliError> {
    let (log, original) = read_log(&args.log)?;
    let report = log.report()?;
    if args.verify {
        verify(&log, &original)?;
    }
    print!("{}", encode_report(&report));
    Ok(exit_code(&report))
}

/// Re-simulates the logged scenario, answering text commands from the
/// recorded model replies, and compares the new log line by line.
fn verify(log: &RunLog, original: &[u8]) -> Result<(), CliError> {
    let planner: Box<dyn Planner> = match log.header.planner.as_str() {
        "oracle" => Box::new(OraclePlanner),
        _ => Box::new(TranscriptPlanner::new(log.transcript())),
    };
    let options = RunOptions { realtime: false, planner_label: log.header.planner.clone() };
    let mut again = Vec::new();
    run_scenario(&log.header.scenario, planner, &options, Some(&mut again))?;
    let old = String::from_utf8_lossy(original);
    let new = String::from_utf8_lossy(&again);
    let (mut old_lines, mut new_lines) = (old.lines(), new.lines());
    for line in 1.. {
        match (old_lines.next(), new_lines.next()) {
            (None, None) => return Ok(()),
            (a, b) if a == b => continue,
            (a, b) => {
                let what = match (a, b) {
                    (Some(_), Some(_)) => "differs",
                    (Some(_), None) => "is missing from the re-simulation",
                    _ => "is extra in the re-simulation",
                };
                return Err(CliError::Verify(format!("re-simulated log line {line} {what}")));
            }
        }
    }
    unreachable!("the loop only exits by returning")
}

fn report(args: ReportArgs) -> Result<ExitCode, CliError> {
    let text = std::fs::read_to_string(&args.path).map_err(|e| CliError::io(&args.path, e))?;
    let report = match serde_json::from_str::<RunReport>(&text) {
        Ok(r) => r,
        Err(_) => RunLog::read(BufReader::new(text.as_bytes()))?.report()?,
    };
    print_summary(&report, &mut std::io::stdout().lock());
    Ok(exit_code(&report))
}

pub fn print_summary(r: &RunReport, out: &mut impl Write) {
    let converged = match (r.converged, r.convergence_time, r.expect_convergence) {
        (true, Some(t), _) => format!("yes, at {t:.2} s"),
        (true, None, _) => "yes".into(),
        (false, _, true) => "no".into(),
        (false, _, false) => "no (not expected)".into(),
    };
    let d_min = r.d_min_global.map_or("n/a".into(), |d| format!("{d:.4} m"));
    let stall = if r.stall.detected {
        format!(
            "agents {:?} from tick {}, {} stalled ticks",
            r.stall.agents,
            r.stall.first_tick.unwrap_or(0),
            r.stall.stalled_ticks
        )
    } else {
        "none".into()
    };
    let worst = r.planner_latencies.iter().map(|l| l.latency).fold(0.0, f64::max);
    let _ = writeln!(out, "scenario      {} ({} agents, {} ticks)", r.scenario, r.n_agents, r.ticks);
    let _ = writeln!(out, "converged     {converged}");
    let _ = writeln!(out, "d_min         {d_min}");
    let _ = writeln!(out, "collisions    {} ticks", r.collisions);
    let _ = writeln!(out, "apf active    {} ticks", r.apf_activations);
    let _ = writeln!(out, "max speed     {:.4} m/s", r.speed_max_global);
    let _ = writeln!(out, "escape        {} ticks", r.escape_events);
    let _ = writeln!(out, "stall         {stall}");
    let _ = writeln!(out, "planner       {} requests, slowest {worst:.3} s", r.planner_latencies.len());
    let _ = writeln!(out, "result        {}", if r.passed() { "PASS" } else { "FAIL" });
}

fn serve(args: ServeArgs) -> Result<ExitCode, CliError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let env = |k: &str| std::env::var(k).ok();
    let mut config = GatewayConfig::load(args.config.as_deref(), env)?;
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    if let Some(mode) = args.mode {
        config.mode = match mode {
            PlannerKind::Oracle => Mode::Oracle,
            PlannerKind::Llm => Mode::Llm,
        };
        config.resolve_llm(env)?;
    }
    if args.scenario.is_some() {
        config.autostart = args.scenario;
    }
    if args.agents.is_some() {
        config.agents = args.agents;
    }
    let bind = config.bind;
    let gateway = Gateway::new(config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
    runtime
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(bind).await?;
            println!("listening on http://{}", listener.local_addr()?);
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            gateway.serve(listener, shutdown).await
        })
        .map_err(CliError::Serve)?;
    Ok(ExitCode::SUCCESS)
}
