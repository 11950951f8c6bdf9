//! Python bindings. The extension module is called `rbdsde`; arrays come back
//! as numpy arrays with paths along the first axis.

use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3};
use pyo3::exceptions::{PyNotImplementedError, PyValueError};
use pyo3::prelude::*;

use rbdsde::config::RunConfig;
use rbdsde::{
    catalog, oracles, reflect_one, reflect_two, Error, Scenario, SolveOutcome, SolverSettings,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Unsupported(why) => PyNotImplementedError::new_err(why),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A scenario together with its solver settings.
#[pyclass(module = "rbdsde", frozen)]
struct Problem {
    scenario: Scenario,
    settings: SolverSettings,
}

#[pymethods]
impl Problem {
    /// Parses a JSON run configuration.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (scenario, settings) = RunConfig::from_json_str(text)
            .and_then(|c| c.build())
            .map_err(to_py)?;
        Ok(Self { scenario, settings })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let (scenario, settings) = rbdsde::load_config(path).map_err(to_py)?;
        Ok(Self { scenario, settings })
    }

    /// One of the built-in scenarios with default solver settings.
    #[staticmethod]
    #[pyo3(signature = (name, steps, paths, seed = 0))]
    fn catalog(name: &str, steps: usize, paths: usize, seed: u64) -> PyResult<Self> {
        let build = match name {
            "constant" => catalog::constant,
            "linear_drift" => catalog::linear_drift,
            "constant_g" => catalog::constant_g,
            "stopping_put" => catalog::stopping_put,
            "american_put" => catalog::american_put,
            "two_barrier" => catalog::two_barrier,
            "symmetric_band" => catalog::symmetric_band,
            other => return Err(to_py(Error::UnknownCase(other.to_string()))),
        };
        let scenario = build(steps, paths, seed).map_err(to_py)?;
        let settings = SolverSettings::defaults_for(&scenario);
        Ok(Self { scenario, settings })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.scenario.grid.steps()
    }

    #[getter]
    fn paths(&self) -> usize {
        self.scenario.mc_paths
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.scenario.grid.horizon()
    }

    /// Violated conditions as "path: message" strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        rbdsde::validate_scenario(&self.scenario)
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    /// Simulates the noise and runs the solver matching the barriers.
    fn solve(&self, py: Python<'_>) -> PyResult<Solution> {
        let (s, settings) = (&self.scenario, &self.settings);
        let outcome = py
            .detach(|| rbdsde::generate_paths(s).and_then(|p| rbdsde::solve(s, &p, settings)))
            .map_err(to_py)?;
        Ok(Solution { outcome })
    }

    /// Lattice optimal-stopping value at `lattice_steps` and twice that.
    #[pyo3(signature = (lattice_steps = oracles::DEFAULT_LATTICE_STEPS))]
    fn stopping_oracle(&self, py: Python<'_>, lattice_steps: usize) -> PyResult<(f64, f64, bool)> {
        let s = &self.scenario;
        let o = py
            .detach(|| oracles::dp_stopping_check(s, lattice_steps))
            .map_err(to_py)?;
        Ok((o.value, o.refined, o.reliable))
    }
}

#[pyclass(module = "rbdsde", frozen)]
struct Solution {
    outcome: SolveOutcome,
}

#[pymethods]
impl Solution {
    #[getter]
    fn y0(&self) -> f64 {
        self.outcome.ensemble.y_mean(0)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.outcome.converged
    }

    #[getter]
    fn pooled_se(&self) -> f64 {
        self.outcome.ensemble.pooled_se()
    }

    #[getter]
    fn mean_k_plus_terminal(&self) -> f64 {
        self.outcome.ensemble.mean_k_plus_terminal()
    }

    #[getter]
    fn mean_k_minus_terminal(&self) -> f64 {
        self.outcome.ensemble.mean_k_minus_terminal()
    }

    #[getter]
    fn y<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.outcome.ensemble.y.clone().into_pyarray(py)
    }

    #[getter]
    fn z<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray3<f64>> {
        self.outcome.ensemble.z.clone().into_pyarray(py)
    }

    #[getter]
    fn k_plus<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.outcome.ensemble.k_plus.clone().into_pyarray(py)
    }

    #[getter]
    fn k_minus<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.outcome.ensemble.k_minus.clone().into_pyarray(py)
    }

    /// Path average of Y at every grid time.
    fn y_mean<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        let e = &self.outcome.ensemble;
        (0..=e.steps())
            .map(|i| e.y_mean(i))
            .collect::<Vec<_>>()
            .into_pyarray(py)
    }

    /// The penalty ladder as a JSON string.
    fn trace_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.outcome.trace).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// One implicit penalty step `(y, dK)` against a lower barrier.
#[pyfunction]
fn penalty_step(a: f64, s: f64, n_dt: f64) -> (f64, f64) {
    reflect_one::implicit_penalty_step(a, s, n_dt)
}

/// One implicit double penalty step `(y, dK+, dK-)`.
#[pyfunction]
fn double_penalty_step(
    a: f64,
    lower: f64,
    upper: f64,
    m_dt: f64,
    n_dt: f64,
) -> PyResult<(f64, f64, f64)> {
    reflect_two::implicit_double_step(a, lower, upper, m_dt, n_dt).map_err(to_py)
}

/// `(mean, variance)` of `Y_0` for the catalog cases with a closed form.
#[pyfunction]
fn closed_form_reference(case_id: &str) -> PyResult<(f64, f64)> {
    let c = oracles::closed_form_reference(case_id).map_err(to_py)?;
    Ok((c.y0_mean, c.y0_variance))
}

#[pymodule]
#[pyo3(name = "rbdsde")]
fn rbdsde_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(penalty_step, m)?)?;
    m.add_function(wrap_pyfunction!(double_penalty_step, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_reference, m)?)?;
    Ok(())
}
