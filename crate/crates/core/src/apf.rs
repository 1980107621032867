//! Artificial-potential-field safety filter.
//!
//! Each agent is commanded along the negative gradient of
//!
//! ```text
//! V = Σ_i (k_p/2)·|g_i − p_i|²  +  Σ_{i<j, d_ij<r_min} (k_rep/2)·(r_min − d_ij)²
//! ```
//!
//! i.e. a proportional pull towards its goal plus a linear push away from every
//! neighbor closer than `r_min`, and the composed vector is saturated at
//! `v_max`. A deterministic escape nudge breaks exact-symmetry deadlocks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{coincidence_fallback, distance, unit_away, Vec3};
use crate::model::{ControllerParams, SwarmSnapshot, WaypointPlan};

/// Below this composed speed (m/s) an agent that is away from its goal counts as stalled.
pub const STALL_SPEED: f64 = 0.01;
/// Distance to goal (m) under which an agent counts as arrived.
pub const CONVERGENCE_TOLERANCE: f64 = 0.05;
/// Swarm size from which repulsion uses the spatial hash instead of the all-pairs loop.
pub const SPATIAL_HASH_MIN_AGENTS: usize = 16;

/// Velocity commands for one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommandSet {
    pub tick: u64,
    pub velocities: Vec<Vec3>,
    /// Ids of agents that received the escape nudge this tick, ascending.
    pub escape_applied: Vec<usize>,
}

pub fn attractive_velocity(position: Vec3, goal: Vec3, k_p: f64) -> Vec3 {
    (goal - position) * k_p
}

/// Repulsion felt by the agent at `p_i` from the neighbor at `p_j`.
///
/// Zero unless `d_ij < r_min`. `fallback` is the push direction used when the
/// two positions coincide.
pub fn repulsive_velocity(p_i: Vec3, p_j: Vec3, fallback: Vec3, params: &ControllerParams) -> Vec3 {
    pair_repulsion(p_i, p_j, fallback, params).unwrap_or(Vec3::ZERO)
}

#[inline]
fn pair_repulsion(p_i: Vec3, p_j: Vec3, fallback: Vec3, params: &ControllerParams) -> Option<Vec3> {
    let d = distance(p_i, p_j);
    if d < params.r_min {
        Some(unit_away(p_j, p_i, fallback) * (params.k_rep * (params.r_min - d)))
    } else {
        None
    }
}

/// Sum of repulsions on agent `i` from every other agent, visited in ascending id order.
pub fn repulsion_sum_brute_force(i: usize, positions: &[Vec3], params: &ControllerParams) -> Vec3 {
    let p_i = positions[i];
    let mut acc = Vec3::ZERO;
    for (j, &p_j) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        if let Some(r) = pair_repulsion(p_i, p_j, coincidence_fallback(i, j), params) {
            acc += r;
        }
    }
    acc
}

type CellKey = (i64, i64, i64);

/// Uniform grid with cell edge `r_min`; every pair closer than `r_min` lies in
/// adjacent cells.
#[derive(Debug)]
pub struct SpatialHash {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl SpatialHash {
    pub fn build(positions: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, &p) in positions.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: Vec3, cell: f64) -> CellKey {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Candidate neighbors of `p` (including any agent at `p` itself), ascending by id.
    pub fn candidates(&self, p: Vec3) -> Vec<usize> {
        let (cx, cy, cz) = Self::key(p, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Same result as [`repulsion_sum_brute_force`], bit for bit, using the grid to skip far pairs.
pub fn repulsion_sum_hashed(i: usize, positions: &[Vec3], grid: &SpatialHash, params: &ControllerParams) -> Vec3 {
    let p_i = positions[i];
    let mut acc = Vec3::ZERO;
    for j in grid.candidates(p_i) {
        if j == i {
            continue;
        }
        if let Some(r) = pair_repulsion(p_i, positions[j], coincidence_fallback(i, j), params) {
            acc += r;
        }
    }
    acc
}

/// Attraction plus repulsion from all other agents for agent `agent_index`, unsaturated.
pub fn total_velocity(
    agent_index: usize,
    snapshot: &SwarmSnapshot,
    plan: &WaypointPlan,
    params: &ControllerParams,
) -> Vec3 {
    let positions = snapshot.positions();
    let att = attractive_velocity(positions[agent_index], plan.goals[agent_index], params.k_p);
    att + repulsion_sum_brute_force(agent_index, &positions, params)
}

/// Scales `v` down to norm `v_max` when it exceeds it; leaves it unchanged otherwise.
pub fn saturate(v: Vec3, v_max: f64) -> Vec3 {
    let n = v.norm();
    if n <= v_max {
        return v;
    }
    let mut s = v * (v_max / n);
    // Rounding can leave the scaled norm one ulp above the cap.
    while s.norm() > v_max {
        s = s * (1.0 - f64::EPSILON);
    }
    s
}

/// The scalar potential whose negative gradient the filter follows.
pub fn composite_potential(snapshot: &SwarmSnapshot, plan: &WaypointPlan, params: &ControllerParams) -> f64 {
    potential_of_positions(&snapshot.positions(), &plan.goals, params)
}

pub fn potential_of_positions(positions: &[Vec3], goals: &[Vec3], params: &ControllerParams) -> f64 {
    let mut v = 0.0;
    for (p, g) in positions.iter().zip(goals) {
        v += 0.5 * params.k_p * (*g - *p).norm_squared();
    }
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = distance(positions[i], positions[j]);
            if d < params.r_min {
                let gap = params.r_min - d;
                v += 0.5 * params.k_rep * gap * gap;
            }
        }
    }
    v
}

/// Per-agent count of consecutive stalled ticks. Owned by the control loop.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StallTracker {
    counts: Vec<u32>,
}

impl StallTracker {
    pub fn new(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn count(&self, agent: usize) -> u32 {
        self.counts.get(agent).copied().unwrap_or(0)
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Agents whose stall streak has reached `threshold`.
    pub fn stalled_agents(&self, threshold: u32) -> Vec<usize> {
        (0..self.counts.len()).filter(|&i| self.counts[i] >= threshold).collect()
    }

    fn observe(&mut self, agent: usize, stalled: bool) -> u32 {
        if self.counts.len() <= agent {
            self.counts.resize(agent + 1, 0);
        }
        let c = &mut self.counts[agent];
        *c = if stalled { c.saturating_add(1) } else { 0 };
        *c
    }
}

/// Direction of the escape nudge for an agent whose pull towards its goal is `attraction`.
///
/// The horizontal perpendicular `Z × a` (or `X × a` for purely vertical pulls),
/// so two agents approaching head-on sidestep to opposite sides and a ring of
/// agents converging on its center rotates as a whole.
pub fn escape_direction(attraction: Vec3) -> Vec3 {
    Vec3::Z
        .cross(attraction)
        .try_normalize(1e-12)
        .or_else(|| Vec3::X.cross(attraction).try_normalize(1e-12))
        .unwrap_or(Vec3::X)
}

/// One tick of the safety filter for the whole swarm.
pub fn control_step(
    snapshot: &SwarmSnapshot,
    plan: &WaypointPlan,
    params: &ControllerParams,
    stall: &mut StallTracker,
) -> VelocityCommandSet {
    let positions = snapshot.positions();
    let n = positions.len();
    let grid = (n >= SPATIAL_HASH_MIN_AGENTS).then(|| SpatialHash::build(&positions, params.r_min));

    let mut velocities = Vec::with_capacity(n);
    let mut escape_applied = Vec::new();
    for i in 0..n {
        let att = attractive_velocity(positions[i], plan.goals[i], params.k_p);
        let rep = match &grid {
            Some(g) => repulsion_sum_hashed(i, &positions, g, params),
            None => repulsion_sum_brute_force(i, &positions, params),
        };
        let mut v = att + rep;

        let away = distance(positions[i], plan.goals[i]) > CONVERGENCE_TOLERANCE;
        let streak = stall.observe(i, away && v.norm() < STALL_SPEED);
        if params.escape_enabled && streak >= params.escape_stall_ticks {
            v += escape_direction(att) * params.escape_speed;
            escape_applied.push(i);
        }
        velocities.push(saturate(v, params.v_max));
    }
    VelocityCommandSet { tick: snapshot.tick(), velocities, escape_applied }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlanSource;
    use proptest::prelude::*;

    fn plan(goals: &[Vec3]) -> WaypointPlan {
        WaypointPlan::new(goals.to_vec(), PlanSource::Oracle, "test")
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn attraction_examples() {
        let p = ControllerParams::default();
        assert_eq!(attractive_velocity(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), p.k_p), Vec3::X);
        let g = Vec3::new(2.0, 2.0, 2.0);
        assert_eq!(attractive_velocity(g, g, 1.0), Vec3::ZERO);
        assert_eq!(attractive_velocity(Vec3::ZERO, Vec3::new(0.0, -3.0, 0.0), 1.0), Vec3::new(0.0, -3.0, 0.0));
    }

    #[test]
    fn repulsion_examples() {
        let p = ControllerParams::default();
        let r = repulsive_velocity(Vec3::new(0.4, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0), Vec3::Z, &p);
        assert!(close(r, Vec3::new(0.8, 0.0, 0.0), 1e-12));
        assert!((r.norm() - 2.0 * (0.8 - 0.4)).abs() < 1e-12);

        let r = repulsive_velocity(Vec3::new(0.8, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0), Vec3::Z, &p);
        assert_eq!(r, Vec3::ZERO);

        let fb = coincidence_fallback(0, 1);
        let q = Vec3::new(1.0, 1.0, 1.0);
        let r = repulsive_velocity(q, q, fb, &p);
        assert!(close(r, fb * 1.6, 1e-12));
    }

    #[test]
    fn total_velocity_examples() {
        let p = ControllerParams::default();
        let pos = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&pos).unwrap();
        // Goals at own positions: attraction vanishes, repulsion 2.0 * (0.8 - 0.5) = 0.6 away from the neighbor.
        let v = total_velocity(0, &snap, &plan(&pos), &p);
        assert!(close(v, Vec3::new(-0.6, 0.0, 0.0), 1e-12));

        let single = SwarmSnapshot::at_rest(&[Vec3::ZERO]).unwrap();
        let v = total_velocity(0, &single, &plan(&[Vec3::X]), &p);
        assert_eq!(v, Vec3::X);

        let line = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&line).unwrap();
        for i in 0..3 {
            assert_eq!(total_velocity(i, &snap, &plan(&line), &p), Vec3::ZERO);
        }
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(Vec3::X, 0.5), Vec3::new(0.5, 0.0, 0.0));
        let v = Vec3::new(0.2, 0.1, 0.0);
        assert_eq!(saturate(v, 0.5), v);
        assert_eq!(saturate(Vec3::ZERO, 0.5), Vec3::ZERO);
    }

    #[test]
    fn control_step_examples() {
        let p = ControllerParams::default();
        let pos = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.5, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&pos).unwrap();
        let mut stall = StallTracker::new(2);
        let cmd = control_step(&snap, &plan(&pos), &p, &mut stall);
        assert!(close(cmd.velocities[0], Vec3::new(-0.5, 0.0, 0.0), 1e-12));
        assert!(close(cmd.velocities[1], Vec3::new(0.5, 0.0, 0.0), 1e-12));
        assert!(cmd.escape_applied.is_empty());

        let spread = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&spread).unwrap();
        let cmd = control_step(&snap, &plan(&spread), &p, &mut stall);
        assert!(cmd.velocities.iter().all(|v| *v == Vec3::ZERO));
    }

    #[test]
    fn potential_examples() {
        let p = ControllerParams::default();
        let pos = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&pos).unwrap();
        assert_eq!(composite_potential(&snap, &plan(&pos), &p), 0.0);

        let one = SwarmSnapshot::at_rest(&[Vec3::ZERO]).unwrap();
        assert!((composite_potential(&one, &plan(&[Vec3::X]), &p) - 0.5).abs() < 1e-15);

        let pair = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.4, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&pair).unwrap();
        assert!((composite_potential(&snap, &plan(&pair), &p) - 0.16).abs() < 1e-12);
    }

    #[test]
    fn stall_triggers_escape_after_threshold() {
        let p = ControllerParams { escape_stall_ticks: 3, ..Default::default() };
        // d = 0.6: repulsion 2.0 * 0.2 = 0.4 exactly cancels a pull towards a goal 0.4 m inward.
        let pos = [Vec3::new(-0.3, 0.0, 1.0), Vec3::new(0.3, 0.0, 1.0)];
        let snap = SwarmSnapshot::at_rest(&pos).unwrap();
        let goals_b = [Vec3::new(0.1, 0.0, 1.0), Vec3::new(-0.1, 0.0, 1.0)];
        let mut stall = StallTracker::new(2);
        let mut applied = Vec::new();
        for _ in 0..4 {
            applied.push(control_step(&snap, &plan(&goals_b), &p, &mut stall).escape_applied);
        }
        assert!(applied[0].is_empty() && applied[1].is_empty());
        assert_eq!(applied[2], vec![0, 1]);
        assert_eq!(stall.stalled_agents(3), vec![0, 1]);

        let off = ControllerParams { escape_enabled: false, ..p };
        let mut stall = StallTracker::new(2);
        for _ in 0..5 {
            assert!(control_step(&snap, &plan(&goals_b), &off, &mut stall).escape_applied.is_empty());
        }
        assert_eq!(stall.stalled_agents(3), vec![0, 1]);
    }

    #[test]
    fn escape_nudges_head_on_pair_to_opposite_sides() {
        let a = escape_direction(Vec3::X);
        let b = escape_direction(-Vec3::X);
        assert!(close(a, -b, 1e-15));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let up = escape_direction(Vec3::Z);
        assert!((up.norm() - 1.0).abs() < 1e-12);
        assert!(up.dot(Vec3::Z).abs() < 1e-12);
    }

    fn vec_in(range: f64) -> impl Strategy<Value = Vec3> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn repulsion_is_antisymmetric(a in vec_in(1.0), b in vec_in(1.0)) {
            prop_assume!(distance(a, b) > 1e-6);
            let p = ControllerParams::default();
            let ab = repulsive_velocity(a, b, Vec3::Z, &p);
            let ba = repulsive_velocity(b, a, Vec3::Z, &p);
            prop_assert!(close(ab, -ba, 1e-12));
        }

        #[test]
        fn repulsion_has_compact_support(a in vec_in(5.0), b in vec_in(5.0)) {
            let p = ControllerParams::default();
            if distance(a, b) >= p.r_min {
                prop_assert_eq!(repulsive_velocity(a, b, Vec3::Z, &p), Vec3::ZERO);
            }
        }

        #[test]
        fn saturation_caps_preserves_direction_and_is_idempotent(v in vec_in(5.0), m in 0.01..2.0f64) {
            let s = saturate(v, m);
            prop_assert!(s.norm() <= m);
            if v.norm() > 1e-9 {
                let cos = s.dot(v) / (s.norm() * v.norm());
                prop_assert!((cos - 1.0).abs() <= 1e-12);
            }
            prop_assert_eq!(saturate(s, m), s);
        }

        #[test]
        fn hashed_repulsion_matches_brute_force(pts in proptest::collection::vec(vec_in(2.0), 2..40)) {
            let p = ControllerParams::default();
            let grid = SpatialHash::build(&pts, p.r_min);
            for i in 0..pts.len() {
                prop_assert_eq!(repulsion_sum_hashed(i, &pts, &grid, &p), repulsion_sum_brute_force(i, &pts, &p));
            }
        }
    }
}
