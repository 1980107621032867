//! Scenario files and the built-in scenario registry.
//!
//! A scenario is JSON:
//!
//! ```json
//! {
//!   "version": 1,
//!   "name": "swap_n10",
//!   "n_agents": 10,
//!   "seed": 0,
//!   "spawn": {"kind": "circle", "radius": 3.0},
//!   "duration": 120.0,
//!   "params": {"escape_enabled": true},
//!   "fence": {},
//!   "script": [{"at_time": 0.0, "command": {"swap": {}}}],
//!   "expect_convergence": true,
//!   "lenient": false
//! }
//! ```
//!
//! `params` and `fence` are partial overrides of the defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::formation::{formation_points, FormationError, FormationSpec, Shape};
use crate::geometry::Vec3;
use crate::model::{ControllerParams, GeoFence};
use crate::planner::Command;
use crate::sim::{spawn_layout, SimConfig, SimError, SpawnLayout};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error("unsupported scenario version {found} (expected {SCENARIO_VERSION})")]
    Version { found: u32 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("script entry {index}: {source}")]
    Command {
        index: usize,
        #[source]
        source: FormationError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Simulated seconds from the start of the run.
    pub at_time: f64,
    pub command: Command,
}

fn current_version() -> u32 {
    SCENARIO_VERSION
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "current_version")]
    pub version: u32,
    pub name: String,
    pub n_agents: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spawn: SpawnLayout,
    pub duration: f64,
    #[serde(default)]
    pub params: ControllerParams,
    #[serde(default)]
    pub fence: GeoFence,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    /// Whether the run is supposed to reach its final goals. A swarm sent to
    /// one shared point never can.
    #[serde(default = "yes")]
    pub expect_convergence: bool,
    /// Strip code fences and prose around model replies before parsing.
    #[serde(default)]
    pub lenient: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn config(&self, realtime: bool) -> SimConfig {
        SimConfig {
            n_agents: self.n_agents,
            seed: self.seed,
            spawn: self.spawn.clone(),
            duration: self.duration,
            realtime,
            params: self.params,
            fence: self.fence,
        }
    }

    /// Structural checks that do not need a simulation: config validity,
    /// script ordering, and commands that can never apply to this swarm.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version { found: self.version });
        }
        self.config(false).validate()?;
        let mut last = 0.0;
        for (index, entry) in self.script.iter().enumerate() {
            let t = entry.at_time;
            if !(t.is_finite() && (0.0..=self.duration).contains(&t)) {
                return Err(ScenarioError::Invalid(format!("script entry {index}: at_time {t} outside [0, duration]")));
            }
            if t < last {
                return Err(ScenarioError::Invalid(format!("script entry {index}: at_time {t} is before {last}")));
            }
            last = t;
            match &entry.command {
                Command::Swap {} if self.n_agents % 2 == 1 => {
                    let reason = format!("{} agents cannot be paired opposite each other", self.n_agents);
                    return Err(ScenarioError::Command { index, source: FormationError::NoValidMatching(reason) });
                }
                Command::Goals(goals) if goals.len() != self.n_agents => {
                    return Err(ScenarioError::Invalid(format!(
                        "script entry {index}: {} goals for {} agents",
                        goals.len(),
                        self.n_agents
                    )));
                }
                Command::Formation(spec) => {
                    formation_points(spec, self.n_agents).map_err(|source| ScenarioError::Command { index, source })?;
                }
                Command::Text(t) if t.trim().is_empty() => {
                    return Err(ScenarioError::Invalid(format!("script entry {index}: empty command text")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn base(name: String, n_agents: usize, spawn: SpawnLayout, duration: f64, command: Command) -> Self {
        Self {
            version: SCENARIO_VERSION,
            name,
            n_agents,
            seed: 0,
            spawn,
            duration,
            params: ControllerParams::default(),
            fence: GeoFence::default(),
            script: vec![ScriptEntry { at_time: 0.0, command }],
            expect_convergence: true,
            lenient: false,
        }
    }
}

/// Every scenario shipped with the crate, by canonical name.
pub const BUILTIN_SCENARIOS: &[&str] = &[
    "two_agent_equilibrium",
    "static_hazard_n3",
    "static_hazard_n10",
    "static_hazard_n30",
    "swap_n10",
    "swap_n30",
    "formation_circle_n10",
    "formation_grid_n30",
    "formation_cube_n8",
    "formation_sphere_n30",
    "formation_tree_n10",
    "formation_triangle_n9",
    "formation_line_n5",
    "fence_reject_n10",
];

fn family_default_agents(family: &str) -> Option<usize> {
    Some(match family {
        "static_hazard" | "swap" | "fence_reject" => 10,
        "formation_circle" | "formation_tree" => 10,
        "formation_grid" | "formation_sphere" => 30,
        "formation_cube" => 8,
        "formation_triangle" => 9,
        "formation_line" => 5,
        _ => return None,
    })
}

/// Splits `swap_n30` into `("swap", Some(30))`.
fn split_name(name: &str) -> (&str, Option<usize>) {
    if let Some((family, n)) = name.rsplit_once("_n") {
        if let Ok(n) = n.parse() {
            return (family, Some(n));
        }
    }
    (name, None)
}

/// Looks up a built-in scenario. Family names (`swap`, `static_hazard`,
/// `formation_circle`, ...) take their size from `agents`; sized names
/// (`swap_n30`) may still be resized by `agents`.
pub fn builtin(name: &str, agents: Option<usize>) -> Result<Scenario, ScenarioError> {
    if name == "two_agent_equilibrium" {
        let spawn = SpawnLayout::Explicit { positions: vec![Vec3::new(1.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 1.0)] };
        let mut s = Scenario::base(name.into(), 2, spawn, 30.0, Command::Converge(Vec3::new(0.0, 0.0, 1.0)));
        s.expect_convergence = false;
        return Ok(s);
    }
    let (family, sized) = split_name(name);
    let default_n = family_default_agents(family).ok_or_else(|| ScenarioError::Unknown(name.into()))?;
    let n = agents.or(sized).unwrap_or(default_n);
    let full_name = format!("{family}_n{n}");
    let circle = |radius: Option<f64>| SpawnLayout::Circle { radius, spacing: 1.5, altitude: 2.0 };
    let grid = SpawnLayout::Grid { spacing: 1.5, altitude: 1.0 };

    let scenario = match family {
        "static_hazard" => {
            let mut s = Scenario::base(full_name, n, circle(None), 60.0, Command::Converge(Vec3::new(0.0, 0.0, 2.0)));
            s.expect_convergence = false;
            s
        }
        "swap" => {
            let radius = if n <= 10 { Some(3.0) } else { None };
            Scenario::base(full_name, n, circle(radius), 120.0, Command::Swap {})
        }
        "fence_reject" => {
            let mut s = Scenario::base(full_name, n, grid.clone(), 10.0, Command::Swap {});
            let mut goals = spawn_layout(&s.config(false))?.positions();
            goals[0] = Vec3::new(11.0, 0.0, 1.0);
            s.script[0].command = Command::Goals(goals);
            s
        }
        formation => {
            let shape = match formation.trim_start_matches("formation_") {
                "circle" => Shape::Circle,
                "grid" => Shape::Grid,
                "cube" => Shape::Cube,
                "sphere" => Shape::Sphere,
                "tree" => Shape::Tree,
                "triangle" => Shape::Triangle,
                "line" => Shape::Line,
                _ => return Err(ScenarioError::Unknown(name.into())),
            };
            let spec = match shape {
                Shape::Circle => FormationSpec::circle(3.0, 2.0),
                _ => FormationSpec::new(shape),
            };
            Scenario::base(full_name, n, grid, 90.0, Command::Formation(spec))
        }
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates_and_spawns() {
        for name in BUILTIN_SCENARIOS {
            let s = builtin(name, None).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&s.name, name);
            spawn_layout(&s.config(false)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn family_names_take_agent_count() {
        let s = builtin("swap", Some(30)).unwrap();
        assert_eq!((s.name.as_str(), s.n_agents), ("swap_n30", 30));
        assert_eq!(builtin("static_hazard", None).unwrap().n_agents, 10);
        assert!(matches!(builtin("nope", None), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn odd_swap_is_rejected_before_running() {
        let err = builtin("swap", Some(3)).unwrap_err();
        assert!(matches!(err, ScenarioError::Command { source: FormationError::NoValidMatching(_), .. }), "{err}");
    }

    #[test]
    fn file_round_trip_with_partial_overrides() {
        let text = r#"{
            "name": "custom", "n_agents": 2, "duration": 5,
            "spawn": {"kind": "explicit", "positions": [[1,0,1],[-1,0,1]]},
            "params": {"escape_enabled": false},
            "fence": {"z_max": 3},
            "script": [{"at_time": 0, "command": {"text": "Form a line."}}]
        }"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.version, SCENARIO_VERSION);
        assert!(!s.params.escape_enabled);
        assert_eq!(s.params.k_rep, 2.0);
        assert_eq!((s.fence.z_max, s.fence.x_max), (3.0, 10.0));
        let again = Scenario::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bad_scripts_are_rejected() {
        let mut s = builtin("swap_n10", None).unwrap();
        s.script.push(ScriptEntry { at_time: 500.0, command: Command::Swap {} });
        assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
        let mut s = builtin("swap_n10", None).unwrap();
        s.script[0].command = Command::Goals(vec![Vec3::Z]);
        assert!(s.validate().is_err());
        let mut s = builtin("swap_n10", None).unwrap();
        s.version = 2;
        assert!(matches!(s.validate(), Err(ScenarioError::Version { found: 2 })));
    }
}
