//! Chat-completion adapter: prompt, one round trip, strict parse, fence check.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::oracle::OraclePlanner;
use super::parse::parse_waypoint_matrix;
use super::prompt::{build_prompt, Prompt, PromptConfig};
use super::{validate_plan, PlanOutcome, PlanRequest, Planner, PlannerResult};
use crate::model::PlanSource;

pub const ENV_ENDPOINT: &str = "SWARMFIELD_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "SWARMFIELD_LLM_MODEL";
pub const ENV_API_KEY: &str = "SWARMFIELD_LLM_API_KEY";
pub const ENV_TIMEOUT: &str = "SWARMFIELD_LLM_TIMEOUT_S";
pub const DEFAULT_TIMEOUT_S: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("missing environment variable {0}")]
    Missing(&'static str),
    #[error("invalid value for {name}: {value:?}")]
    Invalid { name: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmEndpointConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl LlmEndpointConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Same as [`from_env`](Self::from_env) with an arbitrary variable source.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let nonempty = |k: &'static str| get(k).filter(|v| !v.trim().is_empty());
        let endpoint = nonempty(ENV_ENDPOINT).ok_or(ConfigError::Missing(ENV_ENDPOINT))?;
        let model = nonempty(ENV_MODEL).ok_or(ConfigError::Missing(ENV_MODEL))?;
        let timeout = match nonempty(ENV_TIMEOUT) {
            None => DEFAULT_TIMEOUT_S,
            Some(v) => match v.trim().parse::<f64>() {
                Ok(s) if s.is_finite() && s > 0.0 => s,
                _ => return Err(ConfigError::Invalid { name: ENV_TIMEOUT, value: v }),
            },
        };
        Ok(Self { endpoint, model, api_key: nonempty(ENV_API_KEY), timeout: Duration::from_secs_f64(timeout) })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16, body: String },
    /// The HTTP exchange worked but the body is not a chat completion.
    #[error("unexpected response body: {0}")]
    Body(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body in the order it goes on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, prompt: &Prompt) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage { role: "system".into(), content: prompt.system.clone() },
                ChatMessage { role: "user".into(), content: prompt.user.clone() },
            ],
            temperature: 0.0,
        }
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response body.
pub fn extract_content(body: &str) -> Result<String, TransportError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| TransportError::Body(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| TransportError::Body("no choices[0].message.content string".into()))
}

/// One blocking chat-completion round trip.
pub trait ChatTransport: Send {
    fn complete(&mut self, prompt: &Prompt) -> Result<String, TransportError>;
}

pub struct HttpChatTransport {
    config: LlmEndpointConfig,
    agent: ureq::Agent,
}

impl HttpChatTransport {
    pub fn new(config: LlmEndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&mut self, prompt: &Prompt) -> Result<String, TransportError> {
        let body = serde_json::to_string(&ChatRequest::new(&self.config.model, prompt))
            .map_err(|e| TransportError::Body(e.to_string()))?;
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.as_str()).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Network(other.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        extract_content(&text)
    }
}

/// Turns a raw model reply into a plan: strict (or lenient) parse, then the
/// whole-plan fence check. Never fails; every error becomes a hold.
pub fn interpret_response(raw: &str, request: &PlanRequest, latency: f64) -> PlannerResult {
    let text = request.command.describe();
    let mut result = match parse_waypoint_matrix(raw, request.snapshot.len(), request.lenient) {
        Err(e) => PlannerResult::hold(request, PlanOutcome::Malformed, e.to_string(), latency),
        Ok(goals) => {
            let plan = validate_plan(goals, &request.snapshot, &request.fence, PlanSource::Llm, &text);
            let outcome = if plan.source == PlanSource::Hold { PlanOutcome::FenceRejected } else { PlanOutcome::Ok };
            PlannerResult { plan, raw_response: None, latency, outcome }
        }
    };
    result.raw_response = Some(raw.to_string());
    result
}

/// Text commands go to the model; structured commands go to the oracle.
pub struct LlmPlanner<T: ChatTransport> {
    transport: T,
    max_prompt_bytes: Option<usize>,
}

impl<T: ChatTransport> LlmPlanner<T> {
    pub fn new(transport: T) -> Self {
        Self { transport, max_prompt_bytes: None }
    }

    pub fn with_max_prompt_bytes(mut self, bytes: usize) -> Self {
        self.max_prompt_bytes = Some(bytes);
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl LlmPlanner<HttpChatTransport> {
    pub fn from_env() -> Result<Self, ConfigError> {
        Ok(Self::new(HttpChatTransport::new(LlmEndpointConfig::from_env()?)))
    }
}

impl<T: ChatTransport> Planner for LlmPlanner<T> {
    fn plan(&mut self, request: &PlanRequest) -> PlannerResult {
        let super::Command::Text(text) = &request.command else {
            return OraclePlanner.plan(request);
        };
        let mut config = PromptConfig::new(request.snapshot.len(), &request.fence);
        if let Some(b) = self.max_prompt_bytes {
            config.max_prompt_bytes = b;
        }
        let prompt = build_prompt(&config, &request.snapshot, text);
        let size = prompt.len_bytes();
        if size > config.max_prompt_bytes {
            let reason = format!("prompt is {size} bytes, budget is {}", config.max_prompt_bytes);
            return PlannerResult::hold(request, PlanOutcome::PromptTooLarge, reason, 0.0);
        }
        let start = Instant::now();
        match self.transport.complete(&prompt) {
            Ok(raw) => {
                let mut result = interpret_response(&raw, request, 0.0);
                result.latency = start.elapsed().as_secs_f64();
                result
            }
            Err(e) => {
                tracing::warn!(error = %e, "planner request failed");
                let outcome = match e {
                    TransportError::Body(_) => PlanOutcome::Malformed,
                    _ => PlanOutcome::Timeout,
                };
                PlannerResult::hold(request, outcome, e.to_string(), start.elapsed().as_secs_f64())
            }
        }
    }
}

/// A recorded model reply: the raw text (absent when the call failed) and the
/// latency it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub raw_response: Option<String>,
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<PlanOutcome>,
}

impl TranscriptEntry {
    pub fn from_result(result: &PlannerResult) -> Self {
        let failure = match (&result.raw_response, result.outcome) {
            (None, o) if o != PlanOutcome::Ok => Some(o),
            _ => None,
        };
        Self { raw_response: result.raw_response.clone(), latency: result.latency, failure }
    }
}

/// Replays recorded replies in order so a run that used a live model can be
/// reproduced exactly offline. Structured commands still go to the oracle.
#[derive(Debug, Clone, Default)]
pub struct TranscriptPlanner {
    entries: VecDeque<TranscriptEntry>,
}

impl TranscriptPlanner {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn remaining(&self) -> usize {
        self.entries.len()
    }
}

impl Planner for TranscriptPlanner {
    fn plan(&mut self, request: &PlanRequest) -> PlannerResult {
        if !request.command.is_text() {
            return OraclePlanner.plan(request);
        }
        match self.entries.pop_front() {
            None => PlannerResult::hold(request, PlanOutcome::Timeout, "transcript exhausted".into(), 0.0),
            Some(TranscriptEntry { raw_response: Some(raw), latency, .. }) => {
                interpret_response(&raw, request, latency)
            }
            Some(TranscriptEntry { raw_response: None, latency, failure }) => {
                let outcome = failure.unwrap_or(PlanOutcome::Timeout);
                PlannerResult::hold(request, outcome, format!("recorded {outcome}"), latency)
            }
        }
    }
}
