//! Python bindings. Structured values (reports, tick records, commands,
//! formation specs, parameter overrides) cross the boundary as plain
//! dicts and lists with the same shape as the JSON formats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;
use swarmfield_core::apf::{control_step as core_control_step, StallTracker};
use swarmfield_core::formation::{
    formation_points as core_formation_points, swap_targets as core_swap_targets, FormationSpec,
};
use swarmfield_core::log::RunLog;
use swarmfield_core::metrics::min_pairwise_distance as core_min_pairwise;
use swarmfield_core::planner::{parse_waypoint_matrix as core_parse, Command, OraclePlanner};
use swarmfield_core::runner::{run_scenario as core_run, RunOptions, Session as CoreSession};
use swarmfield_core::scenario::{builtin, Scenario as CoreScenario, BUILTIN_SCENARIOS};
use swarmfield_core::{ControllerParams, PlanSource, SwarmSnapshot, Vec3, WaypointPlan};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn vecs(points: Vec<[f64; 3]>) -> Vec<Vec3> {
    points.into_iter().map(Vec3::from).collect()
}

fn arrays(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|&p| p.into()).collect()
}

fn params_from(overrides: Option<&Bound<'_, PyAny>>) -> PyResult<ControllerParams> {
    let params: ControllerParams = match overrides {
        Some(o) => from_py(o)?,
        None => ControllerParams::default(),
    };
    params.validate().map_err(value_error)?;
    Ok(params)
}

/// A scenario: built-in by name or parsed from JSON.
#[pyclass(module = "swarmfield", frozen)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    #[pyo3(signature = (name, agents=None))]
    fn builtin(name: &str, agents: Option<usize>) -> PyResult<Self> {
        Ok(Self { inner: builtin(name, agents).map_err(value_error)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CoreScenario::from_json(text).map_err(value_error)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("scenarios always serialize")
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, n_agents={})", self.inner.name, self.inner.n_agents)
    }
}

/// A steppable simulation driven by the oracle planner.
#[pyclass(module = "swarmfield", unsendable)]
struct Session {
    inner: CoreSession,
}

#[pymethods]
impl Session {
    #[new]
    fn new(scenario: &Scenario) -> PyResult<Self> {
        let inner = CoreSession::new(scenario.inner.clone(), Box::new(OraclePlanner), false).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Sends a command: a string is free text, a dict is a structured
    /// command such as `{"formation": {"shape": "circle", "radius": 3}}`.
    /// The plan is adopted on the next tick.
    fn submit(&mut self, command: &Bound<'_, PyAny>) -> PyResult<u64> {
        let command = match command.cast::<PyString>() {
            Ok(text) => Command::Text(text.to_str()?.to_owned()),
            Err(_) => from_py(command)?,
        };
        Ok(self.inner.submit(command))
    }

    /// Advances one tick and returns its record.
    fn tick<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let out = self.inner.tick().map_err(value_error)?;
        to_py(py, &out.record)
    }

    /// Advances up to `ticks` ticks, stopping early once settled. Returns the number run.
    fn run(&mut self, ticks: u64) -> PyResult<u64> {
        for k in 0..ticks {
            if self.inner.is_settled() {
                return Ok(k);
            }
            self.inner.tick().map_err(value_error)?;
        }
        Ok(ticks)
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        arrays(&self.inner.snapshot().positions())
    }

    #[getter]
    fn goals(&self) -> Vec<[f64; 3]> {
        arrays(&self.inner.plan().goals)
    }

    #[getter]
    fn plan_source(&self) -> String {
        self.inner.plan().source.to_string()
    }

    #[getter]
    fn current_tick(&self) -> u64 {
        self.inner.snapshot().tick()
    }

    #[getter]
    fn is_settled(&self) -> bool {
        self.inner.is_settled()
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.report().map_err(value_error)?)
    }
}

#[pyfunction]
fn builtin_scenarios() -> Vec<&'static str> {
    BUILTIN_SCENARIOS.to_vec()
}

/// Runs `scenario` to completion with the oracle planner and returns its
/// report; with `log_path`, also writes the JSONL log there.
#[pyfunction]
#[pyo3(signature = (scenario, log_path=None))]
fn run_scenario<'py>(py: Python<'py>, scenario: &Scenario, log_path: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let options = RunOptions::default();
    let out = match log_path {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            core_run(&scenario.inner, Box::new(OraclePlanner), &options, Some(&mut file)).map_err(value_error)?
        }
        None => core_run(&scenario.inner, Box::new(OraclePlanner), &options, None).map_err(value_error)?,
    };
    to_py(py, &out.report)
}

/// Recomputes the report of a JSONL log given as text.
#[pyfunction]
fn replay<'py>(py: Python<'py>, log_text: &str) -> PyResult<Bound<'py, PyAny>> {
    let log = RunLog::read(log_text.as_bytes()).map_err(value_error)?;
    to_py(py, &log.report().map_err(value_error)?)
}

/// One safety-filter step for agents at rest at `positions` heading for
/// `goals`. Returns `(velocities, escaped_agent_ids)`.
#[pyfunction]
#[pyo3(signature = (positions, goals, params=None))]
fn control_step(
    positions: Vec<[f64; 3]>,
    goals: Vec<[f64; 3]>,
    params: Option<&Bound<'_, PyAny>>,
) -> PyResult<(Vec<[f64; 3]>, Vec<usize>)> {
    let params = params_from(params)?;
    let snapshot = SwarmSnapshot::at_rest(&vecs(positions)).map_err(value_error)?;
    if goals.len() != snapshot.len() {
        return Err(value_error(format!("{} goals for {} agents", goals.len(), snapshot.len())));
    }
    let plan = WaypointPlan::new(vecs(goals), PlanSource::Oracle, "python");
    let mut stall = StallTracker::new(snapshot.len());
    let cmds = core_control_step(&snapshot, &plan, &params, &mut stall);
    Ok((arrays(&cmds.velocities), cmds.escape_applied))
}

#[pyfunction]
fn min_pairwise_distance(positions: Vec<[f64; 3]>) -> Option<f64> {
    core_min_pairwise(&vecs(positions))
}

/// Points of a formation, e.g. `formation_points({"shape": "circle", "radius": 3}, 10)`.
#[pyfunction]
fn formation_points(spec: &Bound<'_, PyAny>, n: usize) -> PyResult<Vec<[f64; 3]>> {
    let spec: FormationSpec = from_py(spec)?;
    Ok(arrays(&core_formation_points(&spec, n).map_err(value_error)?))
}

/// Goal of every agent under the opposite-agent swap.
#[pyfunction]
fn swap_targets(positions: Vec<[f64; 3]>) -> PyResult<Vec<[f64; 3]>> {
    let snapshot = SwarmSnapshot::at_rest(&vecs(positions)).map_err(value_error)?;
    Ok(arrays(&core_swap_targets(&snapshot).map_err(value_error)?.plan.goals))
}

/// Parses a model reply into `n` waypoints; raises ValueError on anything
/// outside the strict grammar.
#[pyfunction]
#[pyo3(signature = (text, n, lenient=false))]
fn parse_waypoint_matrix(text: &str, n: usize, lenient: bool) -> PyResult<Vec<[f64; 3]>> {
    Ok(arrays(&core_parse(text, n, lenient).map_err(value_error)?))
}

#[pymodule]
pub fn swarmfield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(builtin_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(control_step, m)?)?;
    m.add_function(wrap_pyfunction!(min_pairwise_distance, m)?)?;
    m.add_function(wrap_pyfunction!(formation_points, m)?)?;
    m.add_function(wrap_pyfunction!(swap_targets, m)?)?;
    m.add_function(wrap_pyfunction!(parse_waypoint_matrix, m)?)?;
    Ok(())
}
