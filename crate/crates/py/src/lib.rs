//! Python bindings. Results come back as plain dicts of floats and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use breakaway_core::crash::{exposure_simple, monte_carlo_exposure as mc_exposure, CrashModel, PositionTrace};
use breakaway_core::flat::{self, StrategyProblem};
use breakaway_core::micro::{composite_deviation, full_ode_attack, layer_solution, MicroParams};
use breakaway_core::model::{scale_factors, PelotonConfig, PhysicalParams, PowerProfile, ScaleSet};
use breakaway_core::terrain::{simulate_breakaway as simulate, CourseProfile, RiderSpec, TerrainOptions};
use breakaway_core::{fatigue, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Parse { .. } | Error::InfeasibleAttack { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[allow(clippy::too_many_arguments)]
fn problem(energy: f64, risk: f64, position: f64, cd_front: f64, cd_lurk: f64, omega: f64, intensity: f64, riders: usize) -> StrategyProblem {
    StrategyProblem {
        energy_budget: energy,
        risk_index: risk,
        position,
        cd_front,
        cd_lurk,
        crash: CrashModel::new(omega, intensity, riders),
    }
}

/// Optimal constant-power attack on a flat course.
#[pyfunction]
#[pyo3(signature = (energy=1.2, risk=0.5, position=5.0, cd_front=1.43, cd_lurk=0.46, omega=0.5, intensity=2.0, riders=75))]
#[allow(clippy::too_many_arguments)]
fn optimal_attack<'py>(
    py: Python<'py>,
    energy: f64,
    risk: f64,
    position: f64,
    cd_front: f64,
    cd_lurk: f64,
    omega: f64,
    intensity: f64,
    riders: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let p = problem(energy, risk, position, cd_front, cd_lurk, omega, intensity, riders);
    let r = flat::optimal_attack(&p).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("attack_position", r.attack_position)?;
    d.set_item("attack_power", r.attack_power)?;
    d.set_item("time_gap", r.time_gap)?;
    d.set_item("exposure", r.exposure)?;
    d.set_item("objective", r.objective)?;
    d.set_item("branch", r.branch.as_str())?;
    Ok(d)
}

/// Risk index below which the earliest feasible attack is optimal.
#[pyfunction]
#[pyo3(signature = (position=5.0, cd_front=1.43, cd_lurk=0.46, omega=0.5, intensity=2.0, riders=75))]
fn critical_risk(position: f64, cd_front: f64, cd_lurk: f64, omega: f64, intensity: f64, riders: usize) -> PyResult<f64> {
    let p = problem(1.2, 0.5, position, cd_front, cd_lurk, omega, intensity, riders);
    flat::critical_risk(&p).map_err(py_err)
}

/// Optimal attack when the attack power decays at rate `mu`.
#[pyfunction]
#[pyo3(signature = (energy=1.2, risk=0.5, mu=1.0, p_sustain=0.46))]
fn optimize_fatigue<'py>(py: Python<'py>, energy: f64, risk: f64, mu: f64, p_sustain: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = fatigue::optimize_fatigue(&StrategyProblem::new(energy, risk), mu, p_sustain).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("attack_position", r.attack_position)?;
    d.set_item("peak_power", r.peak_power)?;
    d.set_item("finish_time", r.finish_time)?;
    d.set_item("time_gap", r.time_gap)?;
    d.set_item("objective", r.objective)?;
    d.set_item("branch", r.branch.as_str())?;
    d.set_item("converged", r.converged)?;
    Ok(d)
}

/// Expected crash involvements for a rider at `position` who attacks at `x_a`.
#[pyfunction]
#[pyo3(signature = (x_a, position=5.0, omega=0.5, intensity=2.0, riders=75))]
fn exposure(x_a: f64, position: f64, omega: f64, intensity: f64, riders: usize) -> PyResult<f64> {
    exposure_simple(x_a, position, &CrashModel::new(omega, intensity, riders)).map_err(py_err)
}

/// Monte Carlo estimate of `exposure`, as `(estimate, std_error)`.
#[pyfunction]
#[pyo3(signature = (x_a, position=5.0, omega=0.5, intensity=2.0, riders=75, trials=100_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo_exposure(
    py: Python<'_>,
    x_a: f64,
    position: f64,
    omega: f64,
    intensity: f64,
    riders: usize,
    trials: u64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let trace = PositionTrace::simple_attack(x_a, position).map_err(py_err)?;
    let model = CrashModel::new(omega, intensity, riders);
    let est = py.detach(|| mc_exposure(&trace, &model, trials, seed)).map_err(py_err)?;
    Ok((est.estimate, est.std_error))
}

/// Race over `course` ("demo", "flat" or "grade:<slope>") with a constant-power attack.
#[pyfunction]
#[pyo3(signature = (x_a=0.5, power=3.6, epsilon=0.005, course="demo"))]
fn simulate_breakaway<'py>(py: Python<'py>, x_a: f64, power: f64, epsilon: f64, course: &str) -> PyResult<Bound<'py, PyDict>> {
    let profile = match course {
        "demo" => CourseProfile::demo_hills(),
        "flat" => CourseProfile::Flat,
        s => match s.strip_prefix("grade:").and_then(|g| g.parse().ok()) {
            Some(g) => CourseProfile::Grade(g),
            None => return Err(PyValueError::new_err(format!("unknown course `{s}`"))),
        },
    };
    let base = scale_factors(&PhysicalParams::default(), &PelotonConfig::default()).map_err(py_err)?;
    let scales = ScaleSet { inertia: epsilon, ..base };
    let out = py
        .detach(|| simulate(x_a, &PowerProfile::constant(power), &RiderSpec::default(), &profile, &scales, &TerrainOptions::default()))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("time_gap", out.time_gap)?;
    d.set_item("rider_finish", out.rider.finish_time)?;
    d.set_item("peloton_finish", out.peloton.finish_time)?;
    d.set_item("rider_energy", out.rider_energy)?;
    d.set_item("caught_at", out.caught_at)?;
    d.set_item("times", out.rider.times)?;
    d.set_item("positions", out.rider.positions)?;
    d.set_item("velocities", out.rider.velocities)?;
    Ok(d)
}

/// Composite layer solution against the full equation for the first `duration` (in units of epsilon).
#[pyfunction]
#[pyo3(signature = (power=2.0, epsilon=0.005, position=5.0, duration=20.0))]
fn microstructure<'py>(py: Python<'py>, power: f64, epsilon: f64, position: f64, duration: f64) -> PyResult<Bound<'py, PyDict>> {
    let p = MicroParams { power, inertia: epsilon, position, ..MicroParams::default() };
    let layers = layer_solution(&p).map_err(py_err)?;
    let series = full_ode_attack(&p, duration * epsilon).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("max_rel_deviation", composite_deviation(&layers, &series))?;
    d.set_item("terminal_speed", layers.terminal_speed)?;
    d.set_item("passage_duration", layers.passage_duration)?;
    d.set_item("composite", series.times.iter().map(|&t| layers.composite_velocity(t)).collect::<Vec<_>>())?;
    d.set_item("times", series.times)?;
    d.set_item("velocities", series.velocities)?;
    Ok(d)
}

#[pymodule]
fn breakaway(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(optimal_attack, m)?)?;
    m.add_function(wrap_pyfunction!(critical_risk, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_fatigue, m)?)?;
    m.add_function(wrap_pyfunction!(exposure, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_exposure, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_breakaway, m)?)?;
    m.add_function(wrap_pyfunction!(microstructure, m)?)?;
    Ok(())
}
