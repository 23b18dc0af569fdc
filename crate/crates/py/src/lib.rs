//! Python bindings: link formulas, scenario loading, single runs and the
//! exhaustive oracle.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use meshopt::baselines::{brute_force_optimum, BRUTE_FORCE_BUDGET};
use meshopt::harness::{run_once, ScenarioSpec, Scheme, MBPS};
use meshopt::model::Point;
use meshopt::phy::{self, PhyParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn params(wall_loss_db_per_m: f64) -> PhyParams {
    PhyParams { wall_loss_db_per_m, ..PhyParams::default() }
}

/// RSSI in dBm between two points, clamped to [-100, 40].
#[pyfunction]
#[pyo3(signature = (tx, rx, wall_loss_db_per_m = 0.0))]
fn rssi(tx: (f64, f64), rx: (f64, f64), wall_loss_db_per_m: f64) -> f64 {
    phy::rssi_at(Point::new(tx.0, tx.1), Point::new(rx.0, rx.1), &params(wall_loss_db_per_m)).dbm()
}

/// Maximum PHY rate in bit/s for a received signal strength.
#[pyfunction]
fn link_rate(rssi_dbm: f64) -> f64 {
    phy::link_rmax(phy::Rssi::new(rssi_dbm), &PhyParams::default())
}

#[pyfunction]
fn overlap(a: u8, b: u8) -> f64 {
    phy::overlap(a, b)
}

#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    spec: ScenarioSpec,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ScenarioSpec::load(&path).map(|spec| Self { spec }).map_err(value_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioSpec::from_toml(text).map(|spec| Self { spec }).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.spec.name
    }

    #[getter]
    fn epochs(&self) -> u64 {
        self.spec.epochs
    }

    #[getter]
    fn seeds(&self) -> Option<(u64, u64)> {
        self.spec.seeds
    }

    /// Runs one scheme for one seed and returns a summary dict.
    #[pyo3(signature = (scheme, seed, epochs = None))]
    fn run<'py>(&self, py: Python<'py>, scheme: &str, seed: u64, epochs: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
        let scheme: Scheme = scheme.parse().map_err(value_err)?;
        let epochs = epochs.unwrap_or(self.spec.epochs);
        let r = py.detach(|| run_once(&self.spec, scheme, seed, epochs)).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("scheme", r.scheme.name())?;
        d.set_item("seed", r.seed)?;
        d.set_item("users", r.user_names.clone())?;
        d.set_item("objective_mbps", r.rows.iter().map(|row| row.objective_bps / MBPS).collect::<Vec<_>>())?;
        d.set_item("steady_state_mbps", r.steady_state_bps / MBPS)?;
        d.set_item("per_user_mbps", r.per_user_bps() / MBPS)?;
        d.set_item("convergence", r.convergence)?;
        d.set_item("applied_total", r.applied_total)?;
        d.set_item("extenders_end", r.extender_end.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>())?;
        d.set_item("kb", r.kb.as_ref().map(|kb| kb.to_text()))?;
        Ok(d)
    }

    /// Exhaustive optimum over every channel tuple and grid location.
    fn brute_force<'py>(&self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let world = self.spec.build_world(seed).map_err(value_err)?;
        let locations: Vec<_> = world.grid().locations().collect();
        let r = py.detach(|| brute_force_optimum(&world, &locations, BRUTE_FORCE_BUDGET)).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("objective_mbps", r.best_objective() / MBPS)?;
        d.set_item("evaluations", r.evaluations)?;
        d.set_item("feasible", r.feasible)?;
        if let Some(best) = &r.best {
            d.set_item("channels", best.channels.iter().map(|(_, c)| c.clone()).collect::<Vec<_>>())?;
        }
        Ok(d)
    }
}

#[pymodule]
fn pymeshopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(rssi, m)?)?;
    m.add_function(wrap_pyfunction!(link_rate, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_class::<PyScenario>()?;
    Ok(())
}
