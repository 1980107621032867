//! Shared domain types: agent state, swarm snapshots, controller constants,
//! the geo-fence, waypoint plans and the per-tick log record.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// Coordinate convention stated to planners and used by every module.
pub const COORDINATE_CONVENTION: &str = "X=forward, Y=left, Z=up";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
    #[error("invalid geo-fence: {0}")]
    InvalidFence(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub position: Vec3,
    /// Last commanded velocity.
    pub velocity: Vec3,
}

/// Timestamped, immutable view of every agent in the swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSnapshot")]
pub struct SwarmSnapshot {
    tick: u64,
    sim_time: f64,
    agents: Vec<AgentState>,
}

#[derive(Deserialize)]
struct RawSnapshot {
    tick: u64,
    sim_time: f64,
    agents: Vec<AgentState>,
}

impl TryFrom<RawSnapshot> for SwarmSnapshot {
    type Error = ModelError;

    fn try_from(raw: RawSnapshot) -> Result<Self, Self::Error> {
        let snap = SwarmSnapshot::from_agents(raw.tick, raw.sim_time, raw.agents)?;
        Ok(snap)
    }
}

impl SwarmSnapshot {
    /// Builds a snapshot at tick 0 with zero velocities.
    pub fn at_rest(positions: &[Vec3]) -> Result<Self, ModelError> {
        let agents = positions
            .iter()
            .enumerate()
            .map(|(id, &position)| AgentState { id, position, velocity: Vec3::ZERO })
            .collect();
        Self::from_agents(0, 0.0, agents)
    }

    pub fn from_agents(tick: u64, sim_time: f64, agents: Vec<AgentState>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::InvalidSnapshot("swarm must contain at least one agent".into()));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.id != i {
                return Err(ModelError::InvalidSnapshot(format!("agent at index {i} has id {}", a.id)));
            }
            if !a.position.is_finite() || !a.velocity.is_finite() {
                return Err(ModelError::InvalidSnapshot(format!("agent {i} has a non-finite state")));
            }
        }
        if !sim_time.is_finite() {
            return Err(ModelError::InvalidSnapshot("non-finite sim_time".into()));
        }
        Ok(Self { tick, sim_time, agents })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.agents.iter().map(|a| a.position).collect()
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.agents[i].position
    }
}

fn default_true() -> bool {
    true
}

/// Every constant of the potential-field safety filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Attraction gain (1/s).
    pub k_p: f64,
    /// Repulsion gain (1/s).
    pub k_rep: f64,
    /// Repulsion activation radius (m).
    pub r_min: f64,
    /// Speed cap (m/s).
    pub v_max: f64,
    /// Control period (s).
    pub dt: f64,
    /// Physical radius of one vehicle (m).
    pub r_drone: f64,
    /// Center-to-center distance counted as a physical collision (m).
    pub collision_dist: f64,
    #[serde(default = "default_true")]
    pub escape_enabled: bool,
    /// Magnitude of the deadlock-escape nudge (m/s).
    pub escape_speed: f64,
    /// Consecutive stalled ticks before the nudge engages.
    pub escape_stall_ticks: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            k_p: 1.0,
            k_rep: 2.0,
            r_min: 0.8,
            v_max: 0.5,
            dt: 0.05,
            r_drone: 0.055,
            collision_dist: 0.11,
            escape_enabled: true,
            escape_speed: 1e-3,
            escape_stall_ticks: 20,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("k_p", self.k_p),
            ("k_rep", self.k_rep),
            ("r_min", self.r_min),
            ("v_max", self.v_max),
            ("dt", self.dt),
            ("r_drone", self.r_drone),
            ("collision_dist", self.collision_dist),
            ("escape_speed", self.escape_speed),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParams(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if self.collision_dist >= self.r_min {
            return Err(ModelError::InvalidParams(format!(
                "collision_dist ({}) must be below r_min ({})",
                self.collision_dist, self.r_min
            )));
        }
        if self.escape_stall_ticks == 0 {
            return Err(ModelError::InvalidParams("escape_stall_ticks must be >= 1".into()));
        }
        Ok(())
    }

    /// Control loop rate in Hz.
    pub fn tick_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Axis-aligned operational volume. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoFence {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Altitude floor stated in planner instructions; stricter than `z_min`.
    pub prompt_z_floor: f64,
}

impl Default for GeoFence {
    fn default() -> Self {
        Self { x_min: -10.0, x_max: 10.0, y_min: -10.0, y_max: 10.0, z_min: 0.2, z_max: 5.0, prompt_z_floor: 0.5 }
    }
}

impl GeoFence {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max, self.prompt_z_floor];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidFence("bounds must be finite".into()));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max) {
            return Err(ModelError::InvalidFence("min must be below max on every axis".into()));
        }
        if !(self.z_min > 0.0 && self.z_min <= self.prompt_z_floor) {
            return Err(ModelError::InvalidFence("require 0 < z_min <= prompt_z_floor".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.violation(p).is_none()
    }

    /// First axis on which `p` lies outside the fence, if any. Non-finite
    /// coordinates always violate.
    pub fn violation(&self, p: Vec3) -> Option<Axis> {
        let inside = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !inside(p.x, self.x_min, self.x_max) {
            Some(Axis::X)
        } else if !inside(p.y, self.y_min, self.y_max) {
            Some(Axis::Y)
        } else if !inside(p.z, self.z_min, self.z_max) {
            Some(Axis::Z)
        } else {
            None
        }
    }

    pub fn volume(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min) * (self.z_max - self.z_min)
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max), 0.5 * (self.z_min + self.z_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanSource {
    Oracle,
    Llm,
    Hold,
}

impl fmt::Display for PlanSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanSource::Oracle => "oracle",
            PlanSource::Llm => "llm",
            PlanSource::Hold => "hold",
        })
    }
}

/// One goal position per agent, plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub goals: Vec<Vec3>,
    pub source: PlanSource,
    pub command_text: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<String>,
}

impl WaypointPlan {
    pub fn new(goals: Vec<Vec3>, source: PlanSource, command_text: impl Into<String>) -> Self {
        Self { goals, source, command_text: command_text.into(), accepted: true, rejection_reason: None }
    }

    /// Position-hold plan: every goal is the agent's position in `snapshot`.
    pub fn hold(snapshot: &SwarmSnapshot, command_text: impl Into<String>, reason: Option<String>) -> Self {
        Self {
            goals: snapshot.positions(),
            source: PlanSource::Hold,
            command_text: command_text.into(),
            accepted: true,
            rejection_reason: reason,
        }
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

/// One row of the tick log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub sim_time: f64,
    pub positions: Vec<Vec3>,
    pub commanded_velocities: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    pub potential: f64,
    pub active_plan_source: PlanSource,
    pub escape_active: bool,
}
