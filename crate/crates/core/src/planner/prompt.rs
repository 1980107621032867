//! State-aware prompt construction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::model::{GeoFence, SwarmSnapshot, COORDINATE_CONVENTION};

/// Default system instruction. `{n}` is the swarm size, `{convention}` the
/// coordinate convention and `{z_floor}` the prompt-level altitude floor.
pub const DEFAULT_SYSTEM_TEMPLATE: &str = "You are a drone swarm controller for {n} drones. \
The coordinate system is {convention}. \
Generate target [x, y, z] coordinates to fulfill the command. \
Output only a valid python list of {n} lists. Keep Z >= {z_floor}";

/// Largest prompt (in bytes) sent to a model unless configured otherwise.
pub const DEFAULT_MAX_PROMPT_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub n_agents: usize,
    pub coordinate_convention: String,
    pub z_floor: f64,
    pub system_template: String,
    pub max_prompt_bytes: usize,
}

impl PromptConfig {
    pub fn new(n_agents: usize, fence: &GeoFence) -> Self {
        Self {
            n_agents,
            coordinate_convention: COORDINATE_CONVENTION.to_string(),
            z_floor: fence.prompt_z_floor,
            system_template: DEFAULT_SYSTEM_TEMPLATE.to_string(),
            max_prompt_bytes: DEFAULT_MAX_PROMPT_BYTES,
        }
    }

    pub fn system_instruction(&self) -> String {
        self.system_template
            .replace("{n}", &self.n_agents.to_string())
            .replace("{convention}", &self.coordinate_convention)
            .replace("{z_floor}", &format_coord(self.z_floor))
    }
}

/// A prompt split the way chat endpoints expect it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn len_bytes(&self) -> usize {
        self.to_string().len()
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "System Instruction:\n{}\n\nCurrent Context:\n{}", self.system, self.user)
    }
}

/// Formats a coordinate rounded to millimeters with at least one decimal place.
pub fn format_coord(v: f64) -> String {
    let rounded = (v * 1000.0).round() / 1000.0;
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    let mut s = format!("{rounded:.3}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

pub fn format_positions(positions: &[Vec3]) -> String {
    let rows: Vec<String> = positions
        .iter()
        .map(|p| format!("[{}, {}, {}]", format_coord(p.x), format_coord(p.y), format_coord(p.z)))
        .collect();
    format!("[{}]", rows.join(", "))
}

/// System instruction, current positions, then the operator's command.
pub fn build_prompt(config: &PromptConfig, snapshot: &SwarmSnapshot, command_text: &str) -> Prompt {
    let user = format!(
        "Current Drone Positions:\n{}\n\nUser Command:\n{}",
        format_positions(&snapshot.positions()),
        command_text
    );
    Prompt { system: config.system_instruction(), user }
}
