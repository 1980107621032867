use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;

use serde_json::Value;

const GOLDEN_LOG: &str = "tests/fixtures/golden/log.jsonl";
const GOLDEN_REPORT: &str = "tests/fixtures/golden/report.json";
const LLM_VARS: [&str; 4] =
    ["SWARMFIELD_LLM_ENDPOINT", "SWARMFIELD_LLM_MODEL", "SWARMFIELD_LLM_API_KEY", "SWARMFIELD_LLM_TIMEOUT_S"];

fn swarmfield(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_swarmfield"));
    cmd.args(args).current_dir(env!("CARGO_MANIFEST_DIR"));
    for v in LLM_VARS {
        cmd.env_remove(v);
    }
    cmd.output().unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut all = vec!["run", "--out", out];
    all.extend_from_slice(args);
    swarmfield(&all)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

#[test]
fn swap_run_converges_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("runs");
    let out = run_in(&dir, &["--scenario", "swap_n10", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir);
    assert_eq!(r["converged"], true);
    assert_eq!(r["collisions"], 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("result        PASS"), "{stdout}");

    let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("tick,sim_time,d_min,speed_0,") && header.ends_with("speed_9"), "{header}");
    assert_eq!(csv.lines().count() as u64, r["ticks"].as_u64().unwrap() + 1);
}

#[test]
fn static_hazard_passes_without_converging() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--scenario", "static_hazard_n10"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path());
    assert_eq!(r["collisions"], 0);
    assert!(r["apf_activations"].as_u64().unwrap() > 0);
    assert_eq!(r["converged"], false);
}

#[test]
fn swap_without_escape_fails_its_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--scenario", "swap_n10", "--no-escape"]);
    let r = report(tmp.path());
    assert!(r["collisions"].as_u64().unwrap() > 0 || r["converged"] == false, "{}", r["collisions"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("result        FAIL"));
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--scenario", "static_hazard", "--agents", "3", "--duration", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path());
    assert_eq!(
        (r["scenario"].as_str(), r["n_agents"].as_u64(), r["ticks"].as_u64()),
        (Some("static_hazard_n3"), Some(3), Some(100))
    );
}

#[test]
fn odd_swap_is_a_matching_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("never");
    let out = run_in(&dir, &["--agents", "3", "--scenario", "swap"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "NoValidMatching");
    assert!(!dir.exists(), "nothing is written for an invalid scenario");
}

#[test]
fn unknown_and_malformed_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--scenario", "moonwalk_n4"]);
    assert_eq!((out.status.code(), error_of(&out)["error"].as_str()), (Some(2), Some("UnknownScenario")));

    let file = tmp.path().join("bad.json");
    std::fs::write(&file, r#"{"name": "bad", "n_agents": 2, "duration": -1}"#).unwrap();
    let out = run_in(tmp.path(), &["--scenario", file.to_str().unwrap()]);
    assert_eq!((out.status.code(), error_of(&out)["error"].as_str()), (Some(2), Some("InvalidScenario")));
}

#[test]
fn llm_mode_without_endpoint_stops_before_simulating() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("llm");
    let out = run_in(&dir, &["--scenario", "static_hazard_n3", "--planner", "llm"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["error"], "ConfigError");
    assert!(err["message"].as_str().unwrap().contains("SWARMFIELD_LLM_ENDPOINT"), "{err}");
    assert!(!dir.join("log.jsonl").exists());
}

#[test]
fn replay_of_a_fresh_run_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    run_in(tmp.path(), &["--scenario", "formation_cube_n8"]);
    let log = tmp.path().join("log.jsonl");
    let out = swarmfield(&["replay", "--verify", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(out.stdout, std::fs::read(tmp.path().join("report.json")).unwrap());
}

#[test]
fn golden_log_replays_to_the_golden_report() {
    // Replay only: re-simulating could differ in the last bit on another platform's libm.
    let out = swarmfield(&["replay", GOLDEN_LOG]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = std::fs::read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_REPORT)).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn truncated_log_reports_the_cut_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_LOG)).unwrap();
    let keep: Vec<&str> = text.lines().take(50).collect();
    let mut cut = keep.join("\n");
    cut.truncate(cut.len() - 25);
    let path = tmp.path().join("cut.jsonl");
    std::fs::write(&path, cut).unwrap();

    let out = swarmfield(&["replay", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["error"], "SchemaMismatch");
    assert_eq!(err["line"], 50);
    assert!(out.stdout.is_empty());
}

#[test]
fn verify_catches_an_edited_log() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_LOG)).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut tick: Value = serde_json::from_str(&lines[30]).unwrap();
    assert_eq!(tick["type"], "tick");
    tick["positions"][0][2] = (tick["positions"][0][2].as_f64().unwrap() + 0.001).into();
    lines[30] = tick.to_string();
    let path = tmp.path().join("edited.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    assert_eq!(swarmfield(&["replay", path.to_str().unwrap()]).status.code(), Some(0));
    let out = swarmfield(&["replay", "--verify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["error"], "ReplayMismatch");
    assert!(err["message"].as_str().unwrap().contains("line 31"), "{err}");
}

#[test]
fn report_reads_reports_and_logs_alike() {
    let from_report = swarmfield(&["report", GOLDEN_REPORT]);
    let from_log = swarmfield(&["report", GOLDEN_LOG]);
    assert_eq!(from_report.status.code(), Some(0));
    assert_eq!(from_report.stdout, from_log.stdout);
    let text = String::from_utf8(from_report.stdout).unwrap();
    assert!(text.starts_with("scenario      formation_line_n5 (5 agents,"), "{text}");
}

/// Answers every chat request with the captured three-drone reply.
fn fake_model() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let body = include_str!("../../core/tests/fixtures/chat_response.json");
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end().to_ascii_lowercase();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; length];
            let _ = reader.read_exact(&mut buf);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    url
}

#[test]
fn llm_run_replays_from_its_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("triangle.json");
    std::fs::write(
        &scenario,
        r#"{"name": "triangle", "n_agents": 3, "duration": 40,
            "spawn": {"kind": "explicit", "positions": [[0.1, 0, 1], [0, 1.5, 1.1], [1.2, 1.1, 0.9]]},
            "script": [{"at_time": 0, "command": {"text": "Form a triangle around the center."}}]}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_swarmfield"))
        .args(["run", "--planner", "llm", "--scenario", scenario.to_str().unwrap(), "--out"])
        .arg(tmp.path())
        .env("SWARMFIELD_LLM_ENDPOINT", fake_model())
        .env("SWARMFIELD_LLM_MODEL", "local-model")
        .env_remove("SWARMFIELD_LLM_API_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    assert_eq!(r["converged"], true);
    assert_eq!(r["planner_latencies"][0]["source"], "llm");

    // No endpoint needed: the recorded reply stands in for the model.
    let log = tmp.path().join("log.jsonl");
    let out = swarmfield(&["replay", "--verify", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(out.stdout, std::fs::read(tmp.path().join("report.json")).unwrap());
}

#[test]
fn serve_answers_on_the_printed_address() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_swarmfield"))
        .args(["serve", "--bind", "127.0.0.1:0", "--scenario", "static_hazard_n3"])
        .env_remove("SWARMFIELD_MODE")
        .env_remove("SWARMFIELD_BIND")
        .env_remove("SWARMFIELD_TOKEN")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{first}")).to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/session HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body: Value = serde_json::from_str(response.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["scenario"], "static_hazard_n3");
    assert_eq!(body["mode"], "oracle");
}
