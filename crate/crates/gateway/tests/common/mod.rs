#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener as StdListener;
use std::thread;
use std::time::Duration;

use serde_json::Value;
use swarmfield_core::planner::llm::LlmEndpointConfig;
use swarmfield_gateway::{Gateway, GatewayConfig, Mode};
use tokio::sync::oneshot;

pub struct Running {
    pub base: String,
    pub ws: String,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(task) = self.task.take() {
            task.await.unwrap();
        }
    }
}

pub async fn start(config: GatewayConfig) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let gateway = Gateway::new(config).unwrap();
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        gateway
            .serve(listener, async {
                let _ = stopped.await;
            })
            .await
            .unwrap();
    });
    Running { base: format!("http://{addr}"), ws: format!("ws://{addr}"), stop: Some(stop), task: Some(task) }
}

pub async fn start_default() -> Running {
    start(GatewayConfig::default()).await
}

pub fn client() -> reqwest::Client {
    reqwest::Client::new()
}

pub async fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let resp = client().post(format!("{base}{path}")).json(&body).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

pub async fn get(base: &str, path: &str) -> (u16, Value) {
    let resp = client().get(format!("{base}{path}")).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

/// Polls a run handle until its report is ready.
pub async fn wait_report(base: &str, handle: &str) -> Value {
    for _ in 0..1200 {
        let (status, body) = get(base, &format!("/api/report/{handle}")).await;
        match status {
            200 => return body,
            202 => tokio::time::sleep(Duration::from_millis(50)).await,
            other => panic!("report {handle}: {other} {body}"),
        }
    }
    panic!("report {handle} never finished");
}

pub const CHAT_RESPONSE: &str = include_str!("../../../core/tests/fixtures/chat_response.json");

/// A chat-completion stand-in answering `count` requests with `body` after `delay` each.
pub fn fake_model(count: usize, delay: Duration, body: &'static str) -> LlmEndpointConfig {
    let listener = StdListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    thread::spawn(move || {
        for _ in 0..count {
            let Ok((stream, _)) = listener.accept() else { return };
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
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
                reader.read_exact(&mut buf).unwrap();
                thread::sleep(delay);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    LlmEndpointConfig { endpoint, model: "local-model".into(), api_key: None, timeout: Duration::from_secs(10) }
}

pub fn llm_config(endpoint: LlmEndpointConfig) -> GatewayConfig {
    GatewayConfig { mode: Mode::Llm, llm: Some(endpoint), ..GatewayConfig::default() }
}

/// The structure of a JSON value: leaves become their type name, arrays the
/// shape of their first element.
pub fn shape(v: &Value) -> Value {
    match v {
        Value::Null => "null".into(),
        Value::Bool(_) => "bool".into(),
        Value::Number(_) => "number".into(),
        Value::String(_) => "string".into(),
        Value::Array(a) => Value::Array(a.first().map(shape).into_iter().collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
    }
}
