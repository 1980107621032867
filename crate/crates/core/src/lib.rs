//! Deterministic multi-agent swarm sandbox: a potential-field safety filter
//! running at a fixed control rate beneath a waypoint planner (geometric
//! formation oracle or a remote chat-completion model), with metrics capture
//! and JSONL logging.

pub mod apf;
pub mod formation;
pub mod geometry;
pub mod log;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use geometry::{distance, unit_away, Vec3};
pub use model::{AgentState, ControllerParams, GeoFence, PlanSource, SwarmSnapshot, TickRecord, WaypointPlan};
