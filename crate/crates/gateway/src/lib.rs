//! Network front door for one live swarm session.
//!
//! Routes:
//!
//! * `POST /api/command`: send a command to the live session.
//! * `GET|POST|DELETE /api/session`: inspect, start or stop the live session.
//! * `POST /api/scenario`, `GET /api/report/{handle}`: headless scenario runs.
//! * `GET /api/scenarios`: built-in scenario names.
//! * `WS /api/stream?rate=Hz`: state, plan and status frames.

pub mod api;
pub mod config;
pub mod live;

pub use api::{Gateway, SessionState};
pub use config::{GatewayConfig, Mode};
pub use live::{CommandSummary, RunStatus};
