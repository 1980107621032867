//! Deterministic geometric planner.
//!
//! Point-distribution rules:
//! - circle: equal angular spacing from +X, counter-clockwise.
//! - grid: `rows × cols` lattice, rows along X, columns along Y, row-major ids,
//!   centered on the formation center.
//! - line: along Y, centered.
//! - triangle: equilateral, first vertex on +X, points evenly spaced along the
//!   perimeter starting at that vertex.
//! - cube: smallest `k ≥ 2` with `k³ ≥ n`; lattice points ordered corners first,
//!   then edge points, face points and interior points, ties in ascending
//!   `(x, y, z)` lattice index.
//! - sphere: Fibonacci lattice, first point nearest the top pole.
//! - tree: `⌈n/6⌉` stacked horizontal circles whose radius shrinks linearly
//!   from `base_radius`, plus one apex point. Non-apex points are shared out in
//!   proportion to layer radius (largest remainder, lower layers first) and odd
//!   layers are rotated half a step.

use serde::{Deserialize, Serialize};

use crate::geometry::{distance, Vec3};
use crate::model::{GeoFence, PlanSource, SwarmSnapshot, WaypointPlan};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormationError {
    #[error("shape infeasible: {0}")]
    ShapeInfeasible(String),
    #[error("formation leaves the geo-fence: point {index} violates the {axis} bounds")]
    FenceViolation { index: usize, axis: crate::model::Axis },
    #[error("no valid opposite matching: {0}")]
    NoValidMatching(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Grid,
    Line,
    Triangle,
    Cube,
    Sphere,
    Tree,
}

impl Shape {
    pub const ALL: [Shape; 7] =
        [Shape::Circle, Shape::Grid, Shape::Line, Shape::Triangle, Shape::Cube, Shape::Sphere, Shape::Tree];

    fn default_altitude(self) -> f64 {
        match self {
            Shape::Cube | Shape::Sphere => 2.5,
            Shape::Tree => 1.0,
            _ => 2.0,
        }
    }
}

/// A named shape plus its size parameters. Unset parameters take per-shape defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    pub shape: Shape,
    /// Formation center. Defaults to the origin at the shape's default altitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec3>,
    /// Overrides `center.z` (for the tree: the altitude of the lowest layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altitude: Option<f64>,
    /// Circle, sphere radius or triangle circumradius (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    /// Grid and line spacing (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    /// Cube edge length (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<f64>,
    /// Tree height from lowest layer to apex (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_radius: Option<f64>,
}

impl FormationSpec {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            center: None,
            altitude: None,
            radius: None,
            rows: None,
            cols: None,
            spacing: None,
            edge: None,
            height: None,
            base_radius: None,
        }
    }

    pub fn circle(radius: f64, altitude: f64) -> Self {
        Self { radius: Some(radius), altitude: Some(altitude), ..Self::new(Shape::Circle) }
    }

    pub fn grid(rows: usize, cols: usize, spacing: f64, altitude: f64) -> Self {
        Self {
            rows: Some(rows),
            cols: Some(cols),
            spacing: Some(spacing),
            altitude: Some(altitude),
            ..Self::new(Shape::Grid)
        }
    }

    fn effective_center(&self) -> Vec3 {
        let mut c = self.center.unwrap_or(Vec3::new(0.0, 0.0, self.shape.default_altitude()));
        if let Some(a) = self.altitude {
            c.z = a;
        }
        c
    }
}

fn positive(name: &str, v: f64) -> Result<f64, FormationError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(FormationError::ShapeInfeasible(format!("{name} must be > 0, got {v}")))
    }
}

/// Largest divisor of `n` not above `√n`.
fn balanced_rows(n: usize) -> usize {
    (1..=n).take_while(|r| r * r <= n).filter(|r| n.is_multiple_of(*r)).last().unwrap_or(1)
}

/// Raw formation points in canonical order, without fence or spacing checks.
pub fn formation_points(spec: &FormationSpec, n: usize) -> Result<Vec<Vec3>, FormationError> {
    if n == 0 {
        return Err(FormationError::ShapeInfeasible("formation needs at least one agent".into()));
    }
    let c = spec.effective_center();
    if !c.is_finite() {
        return Err(FormationError::ShapeInfeasible("non-finite center".into()));
    }
    use std::f64::consts::{PI, TAU};
    let pts = match spec.shape {
        Shape::Circle => {
            let r = positive("radius", spec.radius.unwrap_or(2.0))?;
            (0..n)
                .map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    c + Vec3::new(r * a.cos(), r * a.sin(), 0.0)
                })
                .collect()
        }
        Shape::Grid => {
            let rows = match (spec.rows, spec.cols) {
                (Some(r), _) => r,
                (None, Some(cols)) if cols > 0 => n / cols,
                _ => balanced_rows(n),
            };
            let cols = spec.cols.unwrap_or(n.checked_div(rows).unwrap_or(0));
            if rows == 0 || cols == 0 || rows * cols != n {
                return Err(FormationError::ShapeInfeasible(format!("grid {rows}x{cols} does not hold {n} agents")));
            }
            let s = positive("spacing", spec.spacing.unwrap_or(1.0))?;
            let (hr, hc) = ((rows - 1) as f64 / 2.0, (cols - 1) as f64 / 2.0);
            (0..n)
                .map(|id| {
                    let (r, col) = (id / cols, id % cols);
                    c + Vec3::new((r as f64 - hr) * s, (col as f64 - hc) * s, 0.0)
                })
                .collect()
        }
        Shape::Line => {
            let s = positive("spacing", spec.spacing.unwrap_or(1.0))?;
            let h = (n - 1) as f64 / 2.0;
            (0..n).map(|i| c + Vec3::new(0.0, (i as f64 - h) * s, 0.0)).collect()
        }
        Shape::Triangle => {
            let r = positive("radius", spec.radius.unwrap_or(2.0))?;
            let vertices: Vec<Vec3> = (0..3)
                .map(|k| {
                    let a = TAU * k as f64 / 3.0;
                    c + Vec3::new(r * a.cos(), r * a.sin(), 0.0)
                })
                .collect();
            let side = r * 3f64.sqrt();
            let step = 3.0 * side / n as f64;
            (0..n)
                .map(|i| {
                    let s = i as f64 * step;
                    let k = ((s / side).floor() as usize).min(2);
                    let t = (s - k as f64 * side) / side;
                    let (a, b) = (vertices[k], vertices[(k + 1) % 3]);
                    a + (b - a) * t
                })
                .collect()
        }
        Shape::Cube => {
            let mut k = 2usize;
            while k * k * k < n {
                k += 1;
            }
            // Default edge keeps lattice neighbors at least 1 m apart.
            let edge = match spec.edge {
                Some(e) => positive("edge", e)?,
                None => ((k - 1) as f64).max(2.0),
            };
            let step = edge / (k - 1) as f64;
            let half = edge / 2.0;
            let boundary = |i: usize| usize::from(i == 0 || i == k - 1);
            let mut lattice: Vec<(usize, [usize; 3])> = Vec::with_capacity(k * k * k);
            for ix in 0..k {
                for iy in 0..k {
                    for iz in 0..k {
                        lattice.push((boundary(ix) + boundary(iy) + boundary(iz), [ix, iy, iz]));
                    }
                }
            }
            lattice.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            lattice
                .iter()
                .take(n)
                .map(|(_, [ix, iy, iz])| {
                    c + Vec3::new(*ix as f64 * step - half, *iy as f64 * step - half, *iz as f64 * step - half)
                })
                .collect()
        }
        Shape::Sphere => {
            let r = positive("radius", spec.radius.unwrap_or(2.0))?;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let ring = (1.0 - z * z).max(0.0).sqrt();
                    let a = golden * i as f64;
                    c + Vec3::new(r * ring * a.cos(), r * ring * a.sin(), r * z)
                })
                .collect()
        }
        Shape::Tree => {
            let base = positive("base_radius", spec.base_radius.unwrap_or(2.5))?;
            let height = positive("height", spec.height.unwrap_or(3.5))?;
            let layers = n.div_ceil(6);
            let mut pts = Vec::with_capacity(n);
            let counts = tree_layer_counts(n - 1, layers);
            for (l, &count) in counts.iter().enumerate() {
                let r = base * (layers - l) as f64 / layers as f64;
                let z = c.z + height * l as f64 / layers as f64;
                let offset = if l % 2 == 1 && count > 0 { PI / count as f64 } else { 0.0 };
                for k in 0..count {
                    let a = offset + TAU * k as f64 / count as f64;
                    pts.push(Vec3::new(c.x + r * a.cos(), c.y + r * a.sin(), z));
                }
            }
            pts.push(Vec3::new(c.x, c.y, c.z + height));
            pts
        }
    };
    Ok(pts)
}

/// Shares `points` among `layers` with weights `layers, layers-1, ..., 1`.
fn tree_layer_counts(points: usize, layers: usize) -> Vec<usize> {
    if layers == 0 {
        return Vec::new();
    }
    let total: usize = (1..=layers).sum();
    let weights: Vec<usize> = (0..layers).map(|l| layers - l).collect();
    let mut counts: Vec<usize> = weights.iter().map(|w| points * w / total).collect();
    let mut rem: Vec<(usize, usize)> = weights.iter().enumerate().map(|(l, w)| ((points * w) % total, l)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = points - counts.iter().sum::<usize>();
    for &(_, l) in rem.iter().take(short) {
        counts[l] += 1;
    }
    counts
}

/// Smallest pairwise distance among `points`, brute force.
pub fn min_pairwise(points: &[Vec3]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = distance(points[i], points[j]);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    best
}

/// Goals for `n` agents realizing `spec`, in canonical point order.
///
/// Fails when the points would be closer than `r_min` to each other or leave the fence.
pub fn plan_formation(
    spec: &FormationSpec,
    n: usize,
    fence: &GeoFence,
    r_min: f64,
) -> Result<WaypointPlan, FormationError> {
    let points = formation_points(spec, n)?;
    if let Some(d) = min_pairwise(&points) {
        if d < r_min {
            return Err(FormationError::ShapeInfeasible(format!(
                "{:?} with {n} agents puts two goals {d:.3} m apart (< r_min {r_min})",
                spec.shape
            )));
        }
    }
    for (index, p) in points.iter().enumerate() {
        if let Some(axis) = fence.violation(*p) {
            return Err(FormationError::FenceViolation { index, axis });
        }
    }
    let text = serde_json::to_string(spec).unwrap_or_default();
    Ok(WaypointPlan::new(points, PlanSource::Oracle, text))
}

/// Reorders `points` so that agent `i` receives the point assigned to it by a
/// greedy nearest-available matching: repeatedly take the closest free
/// (agent, point) pair, ties broken by agent id then point index.
pub fn assign_nearest(points: &[Vec3], snapshot: &SwarmSnapshot) -> Vec<Vec3> {
    let n = snapshot.len();
    assert_eq!(points.len(), n, "one point per agent");
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (a, agent) in snapshot.agents().iter().enumerate() {
        for (k, p) in points.iter().enumerate() {
            pairs.push((distance(agent.position, *p), a, k));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut goal: Vec<Option<Vec3>> = vec![None; n];
    let mut taken = vec![false; n];
    let mut left = n;
    for (_, a, k) in pairs {
        if goal[a].is_none() && !taken[k] {
            goal[a] = Some(points[k]);
            taken[k] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    goal.into_iter().map(|g| g.expect("greedy matching is complete")).collect()
}

/// Result of an opposite-swap request.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapPlan {
    pub plan: WaypointPlan,
    /// `target[i]` is the agent whose position agent `i` moves to.
    pub target: Vec<usize>,
    /// True when the geometric matching failed and ids were paired `i ↔ i + N/2`.
    pub id_fallback: bool,
}

pub const SWAP_COMMAND: &str = "swap positions with the opposite agent";

/// Sends every agent to the position of the agent opposite it through the swarm centroid.
pub fn swap_targets(snapshot: &SwarmSnapshot) -> Result<SwapPlan, FormationError> {
    let n = snapshot.len();
    if n % 2 == 1 {
        return Err(FormationError::NoValidMatching(format!("an odd swarm ({n} agents) has no opposite pairing")));
    }
    let pos = snapshot.positions();
    let centroid = pos.iter().fold(Vec3::ZERO, |a, p| a + *p) / n as f64;
    let target: Vec<usize> = pos
        .iter()
        .map(|p| {
            let reflected = centroid * 2.0 - *p;
            let mut best = 0;
            for j in 1..n {
                if distance(pos[j], reflected) < distance(pos[best], reflected) {
                    best = j;
                }
            }
            best
        })
        .collect();

    let mut seen = vec![false; n];
    let bijective = target.iter().all(|&t| !std::mem::replace(&mut seen[t], true));
    let deranged = target.iter().enumerate().all(|(i, &t)| i != t);
    let (target, id_fallback) = if bijective && deranged {
        (target, false)
    } else {
        tracing::warn!(n, "reflection matching is not a derangement; pairing agents by id");
        ((0..n).map(|i| (i + n / 2) % n).collect(), true)
    };
    let goals = target.iter().map(|&t| pos[t]).collect();
    let plan = WaypointPlan::new(goals, PlanSource::Oracle, SWAP_COMMAND);
    Ok(SwapPlan { plan, target, id_fallback })
}

#[cfg(test)]
mod tests {
    use super::*;

    const R_MIN: f64 = 0.8;

    fn close(a: Vec3, b: Vec3) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn circle_of_four() {
        let spec = FormationSpec { center: Some(Vec3::new(0.0, 0.0, 2.0)), ..FormationSpec::circle(2.0, 2.0) };
        let plan = plan_formation(&spec, 4, &GeoFence::default(), R_MIN).unwrap();
        let expect =
            [Vec3::new(2.0, 0.0, 2.0), Vec3::new(0.0, 2.0, 2.0), Vec3::new(-2.0, 0.0, 2.0), Vec3::new(0.0, -2.0, 2.0)];
        for (g, e) in plan.goals.iter().zip(expect) {
            assert!(close(*g, e), "{g} vs {e}");
        }
        assert_eq!(plan.source, PlanSource::Oracle);
        assert!(plan.accepted);
    }

    #[test]
    fn grid_rows_must_match_agents() {
        let spec = FormationSpec::grid(5, 6, 1.0, 2.0);
        assert!(matches!(
            plan_formation(&spec, 29, &GeoFence::default(), R_MIN),
            Err(FormationError::ShapeInfeasible(_))
        ));
        assert_eq!(formation_points(&FormationSpec::new(Shape::Grid), 30).unwrap().len(), 30);
        assert_eq!(balanced_rows(30), 5);
        assert_eq!(balanced_rows(7), 1);
    }

    #[test]
    fn too_large_circle_violates_fence() {
        let spec = FormationSpec::circle(12.0, 2.0);
        assert!(matches!(
            plan_formation(&spec, 10, &GeoFence::default(), R_MIN),
            Err(FormationError::FenceViolation { index: 0, .. })
        ));
    }

    #[test]
    fn crowded_circle_is_infeasible() {
        let spec = FormationSpec::circle(1.0, 2.0);
        assert!(matches!(
            plan_formation(&spec, 10, &GeoFence::default(), R_MIN),
            Err(FormationError::ShapeInfeasible(_))
        ));
    }

    #[test]
    fn cube_of_eight_is_its_corners() {
        let pts = formation_points(&FormationSpec::new(Shape::Cube), 8).unwrap();
        for p in &pts {
            assert!(((p.x.abs() - 1.0).abs() < 1e-12) && ((p.y.abs() - 1.0).abs() < 1e-12));
            assert!((p.z - 2.5).abs() - 1.0 < 1e-12);
        }
        // Nine points: the eight corners then the first edge midpoint.
        let nine = formation_points(&FormationSpec::new(Shape::Cube), 9).unwrap();
        assert_eq!(&nine[..8], &formation_points(&FormationSpec::new(Shape::Cube), 8).unwrap()[..]);
        assert!(close(nine[8], Vec3::new(-1.0, -1.0, 2.5)));
    }

    #[test]
    fn triangle_of_three_is_its_vertices() {
        let pts = formation_points(&FormationSpec::new(Shape::Triangle), 3).unwrap();
        assert!(close(pts[0], Vec3::new(2.0, 0.0, 2.0)));
        for p in &pts {
            assert!((distance(*p, Vec3::new(0.0, 0.0, 2.0)) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_layer_allocation() {
        assert_eq!(tree_layer_counts(9, 2), vec![6, 3]);
        // 29 over weights 5..1: quotas 9.67, 7.73, 5.8, 3.87, 1.93.
        assert_eq!(tree_layer_counts(29, 5), vec![9, 8, 6, 4, 2]);
        let pts = formation_points(&FormationSpec::new(Shape::Tree), 10).unwrap();
        assert_eq!(pts.len(), 10);
        assert!(close(*pts.last().unwrap(), Vec3::new(0.0, 0.0, 4.5)));
    }

    #[test]
    fn default_formations_keep_r_min_and_fence() {
        let fence = GeoFence::default();
        for shape in Shape::ALL {
            for n in [3usize, 4, 8, 10, 12, 20, 30] {
                let spec = FormationSpec::new(shape);
                if shape == Shape::Grid && balanced_rows(n) == 1 && n > 3 {
                    continue;
                }
                match plan_formation(&spec, n, &fence, R_MIN) {
                    Ok(plan) => {
                        assert_eq!(plan.goals.len(), n);
                        let d = min_pairwise(&plan.goals).unwrap();
                        assert!(d >= R_MIN, "{shape:?} n={n} d={d}");
                    }
                    Err(FormationError::ShapeInfeasible(_)) | Err(FormationError::FenceViolation { .. }) => {
                        assert!(!(shape == Shape::Circle && n <= 10), "{shape:?} n={n} should fit");
                    }
                    Err(e) => panic!("{shape:?} n={n}: {e}"),
                }
            }
        }
    }

    #[test]
    fn greedy_assignment_prefers_nearest() {
        let snap = SwarmSnapshot::at_rest(&[Vec3::new(5.0, 0.0, 1.0), Vec3::new(-5.0, 0.0, 1.0)]).unwrap();
        let pts = [Vec3::new(-4.0, 0.0, 1.0), Vec3::new(4.0, 0.0, 1.0)];
        assert_eq!(assign_nearest(&pts, &snap), vec![pts[1], pts[0]]);
    }

    #[test]
    fn swap_of_two_exchanges_positions() {
        let a = Vec3::new(1.0, 0.0, 1.0);
        let b = Vec3::new(-1.0, 0.0, 1.0);
        let s = swap_targets(&SwarmSnapshot::at_rest(&[a, b]).unwrap()).unwrap();
        assert_eq!(s.plan.goals, vec![b, a]);
        assert!(!s.id_fallback);
    }

    #[test]
    fn swap_rejects_odd_swarms() {
        let snap = SwarmSnapshot::at_rest(&[Vec3::ZERO, Vec3::X, Vec3::Y]).unwrap();
        assert!(matches!(swap_targets(&snap), Err(FormationError::NoValidMatching(_))));
    }

    #[test]
    fn swap_falls_back_to_id_pairing() {
        // Four agents on a line: reflection of the outer pair is fine, but a
        // lopsided cluster makes the nearest-reflection map collide.
        let pts =
            [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0), Vec3::new(10.0, 0.0, 1.0)];
        let s = swap_targets(&SwarmSnapshot::at_rest(&pts).unwrap()).unwrap();
        assert!(s.id_fallback);
        assert_eq!(s.target, vec![2, 3, 0, 1]);
    }
}
