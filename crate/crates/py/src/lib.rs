//! Python module `kimura`: operators, grids, the solver, quadrature,
//! samplers and the experiment pipeline.

use std::path::PathBuf;
use std::sync::Arc;

use kimura_core::config::ExperimentConfig;
use kimura_core::families::OperatorFamily;
use kimura_core::grid::{Field, TensorGrid};
use kimura_core::io::{read_ensemble, read_snapshot, write_ensemble, write_snapshot};
use kimura_core::measure::{integrate_fn, IntegralOutcome, QuadratureSpec, WeightedMeasure};
use kimura_core::oracles::{sample_em, sample_model_exact, Diffusion1d, PathEnsemble};
use kimura_core::pipeline::{execute, Command, RunOptions};
use kimura_core::solver::{solve_ivp, Scheme, Trajectory};
use kimura_core::{Jet, KimuraError, KimuraOperator};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: KimuraError) -> PyErr {
    match e {
        KimuraError::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py_json(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Operator", module = "kimura", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOperator {
    inner: KimuraOperator,
}

#[pymethods]
impl PyOperator {
    /// Model operator on the cube `[0, radius]^n x [-radius, radius]^m`.
    #[staticmethod]
    #[pyo3(signature = (n, m=0, n0=None, b=0.0, radius=1.0))]
    fn model(n: usize, m: usize, n0: Option<usize>, b: f64, radius: f64) -> PyResult<Self> {
        let n0 = n0.unwrap_or(n);
        let inner = OperatorFamily::Model {
            n,
            m,
            n0,
            b,
            radius,
        }
        .build()
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (radius=1.0))]
    fn classical_kimura(radius: f64) -> PyResult<Self> {
        Ok(Self {
            inner: OperatorFamily::ClassicalKimura { radius }
                .build()
                .map_err(err)?,
        })
    }

    /// Build from a TOML table such as `family = "coupled"\nn = 2 ...`.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let fam: OperatorFamily =
            toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: fam.build().map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn n0(&self) -> usize {
        self.inner.n0
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn beta0(&self) -> f64 {
        self.inner.beta0
    }

    #[pyo3(signature = (lattice=9))]
    fn validate(&self, py: Python<'_>, lattice: usize) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.validate(lattice).map_err(err)?)
    }

    fn h_transform(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.h_transform().map_err(err)?,
        })
    }

    /// `Lu(z)` from the value, gradient and row-major Hessian of `u` at `z`.
    fn apply(&self, z: Vec<f64>, value: f64, grad: Vec<f64>, hess: Vec<f64>) -> PyResult<f64> {
        self.inner
            .apply_pointwise(&Jet::new(value, grad, hess), &z)
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Operator(n={}, m={}, n0={})",
            self.inner.n, self.inner.m, self.inner.n0
        )
    }
}

#[pyclass(name = "Grid", module = "kimura", frozen)]
struct PyGrid {
    inner: Arc<TensorGrid>,
}

#[pymethods]
impl PyGrid {
    /// Graded tensor grid on the operator's box.
    #[new]
    #[pyo3(signature = (op, cells, layers=10))]
    fn new(op: &PyOperator, cells: Vec<usize>, layers: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(
                TensorGrid::graded(op.inner.domain.clone(), &cells, layers).map_err(err)?,
            ),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn axis(&self, k: usize) -> PyResult<Vec<f64>> {
        if k >= self.inner.dim() {
            return Err(PyValueError::new_err(format!("axis {k} out of range")));
        }
        Ok(self.inner.axis(k).to_vec())
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().collect()
    }
}

#[pyclass(name = "Trajectory", module = "kimura", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// Nodal values of every saved snapshot.
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.fields.iter().map(|f| f.values.clone()).collect()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.grid.points().collect()
    }

    /// Multilinear interpolation of the snapshot nearest to `t`.
    fn value_at(&self, t: f64, z: Vec<f64>) -> f64 {
        self.inner.nearest(t).interpolate(&z)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_snapshot(&path, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_snapshot(&path).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    match s {
        "crank-nicolson" | "cn" => Ok(Scheme::CrankNicolson),
        "implicit-euler" | "ie" => Ok(Scheme::ImplicitEuler),
        _ => Err(PyValueError::new_err(format!("unknown scheme {s:?}"))),
    }
}

/// Solve `u_t = Lu` from nodal data `u0`; tangent-face values are zeroed.
#[pyfunction]
#[pyo3(signature = (op, grid, u0, t_end, dt, scheme="crank-nicolson", save_every=1))]
fn solve(
    py: Python<'_>,
    op: &PyOperator,
    grid: &PyGrid,
    u0: Vec<f64>,
    t_end: f64,
    dt: f64,
    scheme: &str,
    save_every: usize,
) -> PyResult<PyTrajectory> {
    let scheme = parse_scheme(scheme)?;
    let g = grid.inner.clone();
    let mut field = Field::new(g.clone(), u0).map_err(err)?;
    for p in 0..g.len() {
        if g.on_tangent_face(&g.multi_index(p), op.inner.n0) {
            field.values[p] = 0.0;
        }
    }
    let op = op.inner.clone();
    let traj = py
        .detach(move || solve_ivp(&op, g, &field, t_end, dt, scheme, save_every))
        .map_err(err)?;
    Ok(PyTrajectory { inner: traj })
}

/// Integrate `f(z)` against `x^alpha dmu` over the operator's box.
///
/// Returns a dict with `status` (CONVERGENT or DIVERGENT), `value` or
/// `slope`, and `spec_hash`.
#[pyfunction]
#[pyo3(signature = (op, f, alpha=None))]
fn integrate(
    py: Python<'_>,
    op: &PyOperator,
    f: Py<PyAny>,
    alpha: Option<Vec<u32>>,
) -> PyResult<Py<PyAny>> {
    let measure = match alpha {
        Some(a) => WeightedMeasure::new(&op.inner, a).map_err(err)?,
        None => WeightedMeasure::dmu(&op.inner),
    };
    let domain = op.inner.domain.clone();
    let failed = std::sync::Mutex::new(None::<PyErr>);
    let result = py.detach(|| {
        let eval = |z: &[f64]| {
            Python::attach(|py| {
                match f
                    .call1(py, (z.to_vec(),))
                    .and_then(|v| v.extract::<f64>(py))
                {
                    Ok(v) => v,
                    Err(e) => {
                        failed.lock().expect("error slot").get_or_insert(e);
                        f64::NAN
                    }
                }
            })
        };
        integrate_fn(&eval, &measure, &domain, &QuadratureSpec::default())
    });
    if let Some(e) = failed.into_inner().expect("error slot") {
        return Err(e);
    }
    let result = result.map_err(err)?;
    let out = match &result.outcome {
        IntegralOutcome::Convergent { value } => {
            serde_json::json!({"status": "CONVERGENT", "value": value})
        }
        IntegralOutcome::Divergent { slope, axes, .. } => {
            serde_json::json!({"status": "DIVERGENT", "slope": slope, "axes": axes})
        }
    };
    let mut out = out;
    out["spec_hash"] = serde_json::Value::String(result.spec_hash.clone());
    to_py_json(py, &out)
}

#[pyclass(name = "Ensemble", module = "kimura", frozen)]
struct PyEnsemble {
    inner: PathEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn terminal(&self) -> Vec<f64> {
        self.inner.terminal.clone()
    }

    #[getter]
    fn absorbed(&self) -> Vec<bool> {
        self.inner.absorbed.clone()
    }

    #[getter]
    fn absorption_time(&self) -> Vec<f64> {
        self.inner.absorption_time.clone()
    }

    #[getter]
    fn meta(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.inner.meta)
    }

    fn absorbed_fraction(&self) -> f64 {
        self.inner.absorbed_fraction()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_ensemble(&path, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_ensemble(&path).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Exact paths of `x d^2 + b d` started at `x0`, observed at `t`.
#[pyfunction]
#[pyo3(signature = (b, x0, t, n_paths, seed=0))]
fn sample_exact(
    py: Python<'_>,
    b: f64,
    x0: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> PyResult<PyEnsemble> {
    let inner = py
        .detach(|| sample_model_exact(b, x0, t, n_paths, seed))
        .map_err(err)?;
    Ok(PyEnsemble { inner })
}

/// Euler–Maruyama paths of the same model.
#[pyfunction]
#[pyo3(signature = (b, x0, t, dt, n_paths, seed=0))]
fn sample_euler(
    py: Python<'_>,
    b: f64,
    x0: f64,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> PyResult<PyEnsemble> {
    let inner = py
        .detach(|| sample_em(&Diffusion1d::model(b), x0, t, dt, n_paths, seed))
        .map_err(err)?;
    Ok(PyEnsemble { inner })
}

/// SHA-256 of a validated TOML config.
#[pyfunction]
fn config_hash(text: &str) -> PyResult<String> {
    Ok(ExperimentConfig::from_toml(text).map_err(err)?.hash())
}

/// Run a TOML config and return the report bundle as a dict.
#[pyfunction]
#[pyo3(signature = (text, out, command="run", threads=None))]
fn run_config(
    py: Python<'_>,
    text: &str,
    out: PathBuf,
    command: &str,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::from_toml(text).map_err(err)?;
    let cmd = match command {
        "validate" => Command::Validate,
        "solve" => Command::Solve,
        "verify" => Command::Verify,
        "harnack" => Command::Harnack,
        "mc-compare" => Command::McCompare,
        "run" => Command::Run,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let opts = RunOptions {
        threads,
        snapshot_dir: None,
    };
    let outcome = py.detach(|| execute(&cfg, cmd, &out, &opts)).map_err(err)?;
    to_py_json(py, &outcome.bundle)
}

#[pymodule]
fn kimura(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_exact, m)?)?;
    m.add_function(wrap_pyfunction!(sample_euler, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
