//! High-level planners: turn an operator command plus the current swarm state
//! into a validated [`WaypointPlan`]. Every failure path degrades to a
//! position-hold plan instead of an error.

pub mod llm;
pub mod oracle;
pub mod parse;
pub mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::formation::FormationSpec;
use crate::geometry::Vec3;
use crate::model::{ControllerParams, GeoFence, PlanSource, SwarmSnapshot, WaypointPlan};

pub use llm::{
    ChatTransport, HttpChatTransport, LlmEndpointConfig, LlmPlanner, TranscriptEntry, TranscriptPlanner, TransportError,
};
pub use oracle::OraclePlanner;
pub use parse::{parse_waypoint_matrix, ParseError};
pub use prompt::{build_prompt, Prompt, PromptConfig};

/// An operator command. Serialized externally tagged, e.g. `{"text": "..."}`
/// or `{"formation": {"shape": "circle", "radius": 3}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Free-form natural language.
    Text(String),
    Formation(FormationSpec),
    /// Every agent moves to the position of the agent opposite it.
    Swap {},
    /// Explicit goal matrix, one row per agent.
    Goals(Vec<Vec3>),
    /// Every agent is sent to the same point.
    Converge(Vec3),
}

impl Command {
    pub fn is_text(&self) -> bool {
        matches!(self, Command::Text(_))
    }

    /// Human-readable form stored in `WaypointPlan::command_text`.
    pub fn describe(&self) -> String {
        match self {
            Command::Text(t) => t.clone(),
            other => serde_json::to_string(other).unwrap_or_default(),
        }
    }
}

/// Everything a planner may look at.
#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub command: Command,
    pub snapshot: SwarmSnapshot,
    pub fence: GeoFence,
    pub params: ControllerParams,
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOutcome {
    Ok,
    Timeout,
    Malformed,
    FenceRejected,
    /// The oracle could not realize the requested geometry.
    Infeasible,
    /// The rendered prompt exceeded the configured byte budget.
    PromptTooLarge,
}

impl fmt::Display for PlanOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerResult {
    pub plan: WaypointPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    /// Wall-clock seconds from request to parsed plan.
    pub latency: f64,
    pub outcome: PlanOutcome,
}

impl PlannerResult {
    pub fn ok(plan: WaypointPlan, latency: f64) -> Self {
        Self { plan, raw_response: None, latency, outcome: PlanOutcome::Ok }
    }

    /// Hold at the request-time positions with `reason`.
    pub fn hold(request: &PlanRequest, outcome: PlanOutcome, reason: String, latency: f64) -> Self {
        let plan = WaypointPlan::hold(&request.snapshot, request.command.describe(), Some(reason));
        Self { plan, raw_response: None, latency, outcome }
    }
}

/// A high-level planner. Calls may block; the control loop never waits on them.
pub trait Planner: Send {
    fn plan(&mut self, request: &PlanRequest) -> PlannerResult;

    /// Simulated seconds before `result` becomes available when running
    /// faster than real time. The oracle is instantaneous.
    fn simulated_latency(&self, result: &PlannerResult) -> f64 {
        result.latency
    }
}

impl<P: Planner + ?Sized> Planner for Box<P> {
    fn plan(&mut self, request: &PlanRequest) -> PlannerResult {
        (**self).plan(request)
    }

    fn simulated_latency(&self, result: &PlannerResult) -> f64 {
        (**self).simulated_latency(result)
    }
}

/// Whole-plan fence check: any goal outside the fence turns the plan into a
/// position hold at the snapshot's positions.
pub fn validate_plan(
    goals: Vec<Vec3>,
    snapshot: &SwarmSnapshot,
    fence: &GeoFence,
    source: PlanSource,
    command_text: &str,
) -> WaypointPlan {
    if goals.len() != snapshot.len() {
        let reason = format!("plan has {} goals for {} agents", goals.len(), snapshot.len());
        return WaypointPlan::hold(snapshot, command_text, Some(reason));
    }
    for (i, g) in goals.iter().enumerate() {
        if let Some(axis) = fence.violation(*g) {
            let reason = format!("agent {i} goal {g} is outside the geo-fence on the {axis} axis");
            return WaypointPlan::hold(snapshot, command_text, Some(reason));
        }
    }
    WaypointPlan::new(goals, source, command_text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap() -> SwarmSnapshot {
        SwarmSnapshot::at_rest(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn in_bounds_plan_is_accepted() {
        let goals = vec![Vec3::new(1.0, 1.0, 2.0), Vec3::new(-1.0, 1.0, 2.0)];
        let plan = validate_plan(goals.clone(), &snap(), &GeoFence::default(), PlanSource::Llm, "c");
        assert!(plan.accepted && plan.rejection_reason.is_none());
        assert_eq!(plan.goals, goals);
        assert_eq!(plan.source, PlanSource::Llm);
    }

    #[test]
    fn one_outside_goal_holds_the_whole_swarm() {
        let goals = vec![Vec3::new(1.0, 1.0, 2.0), Vec3::new(11.0, 0.0, 1.0)];
        let plan = validate_plan(goals, &snap(), &GeoFence::default(), PlanSource::Llm, "c");
        assert_eq!(plan.source, PlanSource::Hold);
        assert_eq!(plan.goals, snap().positions());
        let reason = plan.rejection_reason.unwrap();
        assert!(reason.contains("agent 1") && reason.contains("x axis"), "{reason}");
    }

    #[test]
    fn below_floor_goal_is_rejected() {
        let goals = vec![Vec3::new(0.0, 0.0, 0.1), Vec3::new(1.0, 0.0, 1.0)];
        let plan = validate_plan(goals, &snap(), &GeoFence::default(), PlanSource::Llm, "c");
        assert_eq!(plan.source, PlanSource::Hold);
        assert!(plan.rejection_reason.unwrap().contains("z axis"));
    }

    #[test]
    fn commands_use_external_tags() {
        let c: Command = serde_json::from_str(r#"{"formation": {"shape":"circle","radius":3,"altitude":2}}"#).unwrap();
        assert!(matches!(c, Command::Formation(ref f) if f.radius == Some(3.0)));
        let c: Command = serde_json::from_str(r#"{"text": "Form a triangle around the center."}"#).unwrap();
        assert!(c.is_text());
        let c: Command = serde_json::from_str(r#"{"swap": {}}"#).unwrap();
        assert_eq!(c, Command::Swap {});
        let c: Command = serde_json::from_str(r#"{"converge": [0, 0, 2]}"#).unwrap();
        assert_eq!(c, Command::Converge(Vec3::new(0.0, 0.0, 2.0)));
        assert_eq!(PlanOutcome::FenceRejected.to_string(), "fence_rejected");
    }
}
