//! Fixed-timestep single-integrator world.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apf::{self, StallTracker, VelocityCommandSet};
use crate::geometry::{distance, Vec3};
use crate::model::{AgentState, ControllerParams, GeoFence, ModelError, SwarmSnapshot, WaypointPlan};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("infeasible spawn: {0}")]
    InfeasibleSpawn(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_spacing() -> f64 {
    1.5
}

fn default_grid_altitude() -> f64 {
    1.0
}

fn default_circle_altitude() -> f64 {
    2.0
}

/// Initial placement rule for the swarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpawnLayout {
    /// Row-major square-ish lattice centered on the fence's horizontal center.
    Grid {
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_grid_altitude")]
        altitude: f64,
    },
    /// Equal angular spacing starting on +X; the radius defaults to the larger of
    /// 3 m and the radius giving neighbors `spacing` apart.
    Circle {
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_circle_altitude")]
        altitude: f64,
    },
    Explicit {
        positions: Vec<Vec3>,
    },
    /// Seeded rejection sampling inside the fence shrunk by `margin`, with
    /// pairwise distance at least `spacing`.
    Random {
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

fn default_margin() -> f64 {
    1.0
}

impl Default for SpawnLayout {
    fn default() -> Self {
        SpawnLayout::Grid { spacing: default_spacing(), altitude: default_grid_altitude() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub seed: u64,
    pub spawn: SpawnLayout,
    /// Simulated seconds.
    pub duration: f64,
    /// Pace ticks against the wall clock instead of running as fast as possible.
    pub realtime: bool,
    pub params: ControllerParams,
    pub fence: GeoFence,
}

impl SimConfig {
    pub fn new(n_agents: usize, spawn: SpawnLayout, duration: f64) -> Self {
        Self {
            n_agents,
            seed: 0,
            spawn,
            duration,
            realtime: false,
            params: ControllerParams::default(),
            fence: GeoFence::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_agents == 0 {
            return Err(SimError::InvalidConfig("n_agents must be >= 1".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SimError::InvalidConfig("duration must be > 0".into()));
        }
        if let SpawnLayout::Explicit { positions } = &self.spawn {
            if positions.len() != self.n_agents {
                return Err(SimError::InvalidConfig(format!(
                    "explicit spawn lists {} positions for {} agents",
                    positions.len(),
                    self.n_agents
                )));
            }
        }
        self.params.validate()?;
        self.fence.validate()?;
        Ok(())
    }

    /// Number of ticks covering `duration`.
    pub fn total_ticks(&self) -> u64 {
        (self.duration / self.params.dt).round().max(1.0) as u64
    }
}

/// Upper bound on how many agents can sit pairwise `r_min` apart inside the fence:
/// spheres of radius `r_min/2` at densest packing in the fence inflated by `r_min/2`.
pub fn packing_bound(fence: &GeoFence, r_min: f64) -> usize {
    let h = 0.5 * r_min;
    let inflated =
        (fence.x_max - fence.x_min + r_min) * (fence.y_max - fence.y_min + r_min) * (fence.z_max - fence.z_min + r_min);
    let ball = 4.0 / 3.0 * std::f64::consts::PI * h * h * h;
    let density = std::f64::consts::PI / 18f64.sqrt();
    (density * inflated / ball).floor() as usize
}

/// Initial snapshot for `config`. Deterministic in `(seed, spawn, n_agents)`.
pub fn spawn_layout(config: &SimConfig) -> Result<SwarmSnapshot, SimError> {
    config.validate()?;
    let n = config.n_agents;
    let r_min = config.params.r_min;
    let fence = &config.fence;
    let bound = packing_bound(fence, r_min);
    if n > bound {
        return Err(SimError::InfeasibleSpawn(format!(
            "{n} agents cannot be {r_min} m apart inside the fence (packing bound {bound})"
        )));
    }
    let center = fence.center();
    let positions: Vec<Vec3> = match &config.spawn {
        SpawnLayout::Grid { spacing, altitude } => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let rows = n.div_ceil(cols);
            (0..n)
                .map(|id| {
                    let (r, c) = (id / cols, id % cols);
                    Vec3::new(
                        center.x + (r as f64 - (rows - 1) as f64 / 2.0) * spacing,
                        center.y + (c as f64 - (cols - 1) as f64 / 2.0) * spacing,
                        *altitude,
                    )
                })
                .collect()
        }
        SpawnLayout::Circle { radius, spacing, altitude } => {
            let radius = radius.unwrap_or_else(|| {
                if n < 2 {
                    3.0
                } else {
                    (spacing / (2.0 * (std::f64::consts::PI / n as f64).sin())).max(3.0)
                }
            });
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    Vec3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), *altitude)
                })
                .collect()
        }
        SpawnLayout::Explicit { positions } => positions.clone(),
        SpawnLayout::Random { spacing, margin } => random_layout(config, *spacing, *margin)?,
    };

    for (i, p) in positions.iter().enumerate() {
        if let Some(axis) = fence.violation(*p) {
            return Err(SimError::InfeasibleSpawn(format!("agent {i} spawns outside the fence on {axis}")));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if distance(positions[i], positions[j]) < r_min {
                return Err(SimError::InfeasibleSpawn(format!("agents {i} and {j} spawn closer than r_min")));
            }
        }
    }
    Ok(SwarmSnapshot::at_rest(&positions)?)
}

fn random_layout(config: &SimConfig, spacing: f64, margin: f64) -> Result<Vec<Vec3>, SimError> {
    const MAX_ATTEMPTS: usize = 200_000;
    let f = &config.fence;
    let lo = Vec3::new(f.x_min + margin, f.y_min + margin, f.prompt_z_floor.max(f.z_min + margin));
    let hi = Vec3::new(f.x_max - margin, f.y_max - margin, f.z_max - margin);
    if !(lo.x < hi.x && lo.y < hi.y && lo.z < hi.z) {
        return Err(SimError::InfeasibleSpawn("spawn margin leaves no volume".into()));
    }
    let spacing = spacing.max(config.params.r_min);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out: Vec<Vec3> = Vec::with_capacity(config.n_agents);
    let mut attempts = 0;
    while out.len() < config.n_agents {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(SimError::InfeasibleSpawn(format!(
                "placed only {} of {} agents after {MAX_ATTEMPTS} samples",
                out.len(),
                config.n_agents
            )));
        }
        let p = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z));
        if out.iter().all(|q| distance(p, *q) >= spacing) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Explicit Euler step: `p' = p + v·dt`; stored velocities become the commands.
pub fn integrate_tick(snapshot: &SwarmSnapshot, commands: &VelocityCommandSet, dt: f64) -> SwarmSnapshot {
    debug_assert_eq!(commands.tick, snapshot.tick());
    let agents = snapshot
        .agents()
        .iter()
        .zip(&commands.velocities)
        .map(|(a, &v)| AgentState { id: a.id, position: a.position + v * dt, velocity: v })
        .collect();
    let tick = snapshot.tick() + 1;
    SwarmSnapshot::from_agents(tick, tick as f64 * dt, agents).expect("integration preserves snapshot invariants")
}

/// True iff every agent is within `tolerance` of its goal.
pub fn convergence_check(snapshot: &SwarmSnapshot, plan: &WaypointPlan, tolerance: f64) -> bool {
    snapshot.agents().iter().zip(&plan.goals).all(|(a, g)| distance(a.position, *g) <= tolerance)
}

/// The mutable world: current snapshot, active plan and the stall tracker.
#[derive(Debug, Clone)]
pub struct World {
    params: ControllerParams,
    snapshot: SwarmSnapshot,
    plan: WaypointPlan,
    stall: StallTracker,
}

/// Everything produced by one tick, before the world advances.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Snapshot the commands were computed from.
    pub snapshot: SwarmSnapshot,
    pub commands: VelocityCommandSet,
}

impl World {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        let snapshot = spawn_layout(config)?;
        Ok(Self::from_snapshot(snapshot, config.params))
    }

    /// Starts from `snapshot`, holding every agent at its current position.
    pub fn from_snapshot(snapshot: SwarmSnapshot, params: ControllerParams) -> Self {
        let plan = WaypointPlan::hold(&snapshot, "initial hold", None);
        let stall = StallTracker::new(snapshot.len());
        Self { params, snapshot, plan, stall }
    }

    pub fn snapshot(&self) -> &SwarmSnapshot {
        &self.snapshot
    }

    pub fn plan(&self) -> &WaypointPlan {
        &self.plan
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    /// Replaces the active plan. Takes effect from the next `step`.
    pub fn adopt_plan(&mut self, plan: WaypointPlan) {
        assert_eq!(plan.goals.len(), self.snapshot.len(), "plan size must match swarm size");
        self.plan = plan;
        self.stall.reset();
    }

    /// Runs the safety filter on the current snapshot and integrates one tick.
    pub fn step(&mut self) -> StepOutput {
        let commands = apf::control_step(&self.snapshot, &self.plan, &self.params, &mut self.stall);
        let next = integrate_tick(&self.snapshot, &commands, self.params.dt);
        let snapshot = std::mem::replace(&mut self.snapshot, next);
        StepOutput { snapshot, commands }
    }

    pub fn is_converged(&self, tolerance: f64) -> bool {
        convergence_check(&self.snapshot, &self.plan, tolerance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlanSource;

    #[test]
    fn grid_spawn_of_four_is_a_square() {
        let cfg = SimConfig::new(4, SpawnLayout::Grid { spacing: 1.5, altitude: 1.0 }, 1.0);
        let s = spawn_layout(&cfg).unwrap();
        let expect = [
            Vec3::new(-0.75, -0.75, 1.0),
            Vec3::new(-0.75, 0.75, 1.0),
            Vec3::new(0.75, -0.75, 1.0),
            Vec3::new(0.75, 0.75, 1.0),
        ];
        assert_eq!(s.positions(), expect);
        assert_eq!(s.tick(), 0);
    }

    #[test]
    fn spawn_is_deterministic_in_seed() {
        let mut cfg = SimConfig::new(12, SpawnLayout::Random { spacing: 1.5, margin: 1.0 }, 1.0);
        cfg.seed = 7;
        assert_eq!(spawn_layout(&cfg).unwrap(), spawn_layout(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(spawn_layout(&cfg).unwrap(), spawn_layout(&other).unwrap());
    }

    #[test]
    fn ten_thousand_agents_cannot_spawn() {
        // Independent bound: 20.8 x 20.8 x 5.6 m inflated box, balls of radius 0.4, density pi/sqrt(18).
        let oracle =
            (std::f64::consts::PI / 18f64.sqrt()) * 20.8 * 20.8 * 5.6 / (4.0 / 3.0 * std::f64::consts::PI * 0.064);
        assert!(oracle < 10_000.0 && oracle > 6_000.0);
        assert_eq!(packing_bound(&GeoFence::default(), 0.8), oracle.floor() as usize);
        let cfg = SimConfig::new(10_000, SpawnLayout::default(), 1.0);
        assert!(matches!(spawn_layout(&cfg), Err(SimError::InfeasibleSpawn(_))));
    }

    #[test]
    fn explicit_spawn_too_close_is_rejected() {
        let cfg = SimConfig::new(
            2,
            SpawnLayout::Explicit { positions: vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0)] },
            1.0,
        );
        assert!(matches!(spawn_layout(&cfg), Err(SimError::InfeasibleSpawn(_))));
        let cfg = SimConfig::new(1, SpawnLayout::Explicit { positions: vec![] }, 1.0);
        assert!(matches!(spawn_layout(&cfg), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn euler_step_examples() {
        let s = SwarmSnapshot::at_rest(&[Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        let cmd = VelocityCommandSet { tick: 0, velocities: vec![Vec3::new(0.5, 0.0, 0.0)], escape_applied: vec![] };
        let s1 = integrate_tick(&s, &cmd, 0.05);
        assert_eq!(s1.position(0), Vec3::new(0.025, 0.0, 1.0));
        assert_eq!(s1.tick(), 1);
        assert_eq!(s1.sim_time(), 0.05);

        let cmd1 = VelocityCommandSet { tick: 1, ..cmd.clone() };
        let s2 = integrate_tick(&s1, &cmd1, 0.05);
        assert!((s2.position(0).x - 0.05).abs() < 1e-15);

        let zero = VelocityCommandSet { tick: 0, velocities: vec![Vec3::ZERO], escape_applied: vec![] };
        assert_eq!(integrate_tick(&s, &zero, 0.05).position(0), s.position(0));
    }

    #[test]
    fn convergence_examples() {
        let s = SwarmSnapshot::at_rest(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)]).unwrap();
        let at = WaypointPlan::new(s.positions(), PlanSource::Oracle, "x");
        assert!(convergence_check(&s, &at, 0.05));
        let off = WaypointPlan::new(vec![Vec3::new(0.06, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)], PlanSource::Oracle, "x");
        assert!(!convergence_check(&s, &off, 0.05));
        let near =
            WaypointPlan::new(vec![Vec3::new(0.04, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)], PlanSource::Oracle, "x");
        assert!(convergence_check(&s, &near, 0.05) && convergence_check(&s, &near, 0.1));
    }

    #[test]
    fn sim_time_is_tick_times_dt() {
        let cfg = SimConfig::new(3, SpawnLayout::default(), 1.0);
        let mut w = World::new(&cfg).unwrap();
        for _ in 0..37 {
            w.step();
        }
        assert_eq!(w.snapshot().tick(), 37);
        assert_eq!(w.snapshot().sim_time(), 37.0 * 0.05);
    }
}
