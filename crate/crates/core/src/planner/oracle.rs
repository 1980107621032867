//! The deterministic planner: geometric formations, opposite swaps, explicit
//! goals, and a small keyword reader for plain-text commands.

use std::sync::OnceLock;

use regex::Regex;

use super::{validate_plan, Command, PlanOutcome, PlanRequest, Planner, PlannerResult};
use crate::formation::{assign_nearest, plan_formation, swap_targets, FormationError, FormationSpec, Shape};
use crate::geometry::Vec3;
use crate::model::PlanSource;

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePlanner;

fn pattern(cell: &'static OnceLock<Regex>, re: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(re).expect("valid pattern"))
}

fn first_number(rx: &Regex, text: &str) -> Option<f64> {
    rx.captures(text).and_then(|c| c.get(1)).and_then(|m| m.as_str().parse().ok())
}

/// Best-effort reading of a plain-text command into a structured one.
///
/// Recognizes the shape names, `radius N m`, `height N m` / `N m height`,
/// `RxC` grid sizes, `swap` and `converge`/`single point`.
pub fn interpret_text(text: &str) -> Option<Command> {
    let t = text.to_lowercase();
    static HEIGHT: OnceLock<Regex> = OnceLock::new();
    static HEIGHT_SUFFIX: OnceLock<Regex> = OnceLock::new();
    static RADIUS: OnceLock<Regex> = OnceLock::new();
    static DIMS: OnceLock<Regex> = OnceLock::new();
    let altitude = first_number(pattern(&HEIGHT, r"(?:height|altitude)\s+(?:of\s+)?(-?\d+(?:\.\d+)?)\s*m"), &t)
        .or_else(|| {
            first_number(pattern(&HEIGHT_SUFFIX, r"(-?\d+(?:\.\d+)?)\s*m(?:eters?)?\s+(?:height|altitude)"), &t)
        });
    if t.contains("swap") {
        return Some(Command::Swap {});
    }
    if t.contains("converge") || t.contains("single point") {
        return Some(Command::Converge(Vec3::new(0.0, 0.0, altitude.unwrap_or(2.0))));
    }
    let shape = [
        ("circle", Shape::Circle),
        ("ring", Shape::Circle),
        ("grid", Shape::Grid),
        ("triangle", Shape::Triangle),
        ("cube", Shape::Cube),
        ("sphere", Shape::Sphere),
        ("tree", Shape::Tree),
        ("line", Shape::Line),
    ]
    .into_iter()
    .find(|(k, _)| t.contains(k))
    .map(|(_, s)| s)?;

    let mut spec = FormationSpec::new(shape);
    spec.altitude = altitude;
    spec.radius = first_number(pattern(&RADIUS, r"radius\s+(?:of\s+)?(\d+(?:\.\d+)?)\s*m"), &t);
    if shape == Shape::Grid {
        if let Some(c) = pattern(&DIMS, r"(\d+)\s*x\s*(\d+)").captures(&t) {
            spec.rows = c[1].parse().ok();
            spec.cols = c[2].parse().ok();
        }
    }
    Some(Command::Formation(spec))
}

impl OraclePlanner {
    fn plan_command(&self, command: &Command, request: &PlanRequest) -> PlannerResult {
        let snapshot = &request.snapshot;
        let text = request.command.describe();
        let n = snapshot.len();
        match command {
            Command::Formation(spec) => match plan_formation(spec, n, &request.fence, request.params.r_min) {
                Ok(canonical) => {
                    let goals = assign_nearest(&canonical.goals, snapshot);
                    let plan = validate_plan(goals, snapshot, &request.fence, PlanSource::Oracle, &text);
                    PlannerResult::ok(plan, 0.0)
                }
                Err(e @ FormationError::FenceViolation { .. }) => {
                    PlannerResult::hold(request, PlanOutcome::FenceRejected, e.to_string(), 0.0)
                }
                Err(e) => PlannerResult::hold(request, PlanOutcome::Infeasible, e.to_string(), 0.0),
            },
            Command::Swap {} => match swap_targets(snapshot) {
                Ok(swap) => {
                    let plan = validate_plan(swap.plan.goals, snapshot, &request.fence, PlanSource::Oracle, &text);
                    PlannerResult::ok(plan, 0.0)
                }
                Err(e) => PlannerResult::hold(request, PlanOutcome::Infeasible, e.to_string(), 0.0),
            },
            Command::Goals(goals) => self.explicit(goals.clone(), request, &text),
            Command::Converge(point) => self.explicit(vec![*point; n], request, &text),
            Command::Text(raw) => match interpret_text(raw) {
                Some(Command::Text(_)) | None => PlannerResult::hold(
                    request,
                    PlanOutcome::Malformed,
                    format!("oracle could not interpret command {raw:?}"),
                    0.0,
                ),
                Some(structured) => self.plan_command(&structured, request),
            },
        }
    }

    fn explicit(&self, goals: Vec<Vec3>, request: &PlanRequest, text: &str) -> PlannerResult {
        if goals.len() != request.snapshot.len() {
            let reason = format!("{} goals for {} agents", goals.len(), request.snapshot.len());
            return PlannerResult::hold(request, PlanOutcome::Malformed, reason, 0.0);
        }
        let plan = validate_plan(goals, &request.snapshot, &request.fence, PlanSource::Oracle, text);
        let outcome = if plan.source == PlanSource::Hold { PlanOutcome::FenceRejected } else { PlanOutcome::Ok };
        PlannerResult { plan, raw_response: None, latency: 0.0, outcome }
    }
}

impl Planner for OraclePlanner {
    fn plan(&mut self, request: &PlanRequest) -> PlannerResult {
        self.plan_command(&request.command, request)
    }

    fn simulated_latency(&self, _result: &PlannerResult) -> f64 {
        0.0
    }
}
