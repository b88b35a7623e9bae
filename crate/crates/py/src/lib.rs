//! Python bindings: coefficient families, cell problems, effective tensors,
//! Dirichlet solves, the Liouville family and config-driven runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stokes_homog::cell::{self, CorrectorSet, SolveOptions};
use stokes_homog::config::{ExperimentConfig, LoadError};
use stokes_homog::effective::{self, EffectiveTensor};
use stokes_homog::error::Error;
use stokes_homog::estimates::liouville_family_report;
use stokes_homog::grid::Grid;
use stokes_homog::runner;
use stokes_homog::stokes::{Coefficients, DirichletSolver, StokesProblem};
use stokes_homog::sweep::BumpForce;
use stokes_homog::tensor::{CoefficientField, FamilySpec};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Solver(_) | Error::NotConverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn options(tol: f64) -> SolveOptions {
    SolveOptions {
        tol,
        ..SolveOptions::default()
    }
}

/// A periodic coefficient family `A(y)`.
#[pyclass(name = "CoefficientField", module = "stokes_homog", frozen)]
struct PyField {
    inner: CoefficientField,
}

#[pymethods]
impl PyField {
    /// Builds a family from its JSON description, e.g.
    /// `{"family": "identity"}`.
    #[new]
    fn new(dim: usize, spec: &str) -> PyResult<Self> {
        let spec: FamilySpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: CoefficientField::new(dim, spec).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self {
            inner: CoefficientField::identity(dim),
        }
    }

    /// `(1 + ½ sin 2πy₁)·I`.
    #[staticmethod]
    fn laminate(dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CoefficientField::new(dim, FamilySpec::laminate_sine(dim)).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dimension()
    }

    /// Ellipticity constant of the family.
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    #[getter]
    fn is_constant(&self) -> bool {
        self.inner.is_constant()
    }

    /// Entries `A_ij^{αβ}(y)` flattened in `(i, j, α, β)` order.
    fn evaluate(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        if y.len() != self.inner.dimension() {
            return Err(PyValueError::new_err(format!("expected a point in {} dimensions", self.inner.dimension())));
        }
        Ok(self.inner.evaluate(&y).to_ijab())
    }

    fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint(),
        }
    }

    fn spec_json(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.spec()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let spec = serde_json::to_string(self.inner.spec()).unwrap_or_default();
        format!("CoefficientField(dim={}, spec={spec})", self.inner.dimension())
    }
}

/// Effective tensor `Â` with its ellipticity bounds.
#[pyclass(name = "EffectiveTensor", module = "stokes_homog", frozen)]
struct PyEffective {
    inner: EffectiveTensor,
}

#[pymethods]
impl PyEffective {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn mu_lower(&self) -> f64 {
        self.inner.mu_lower
    }

    #[getter]
    fn mu_upper(&self) -> f64 {
        self.inner.mu_upper
    }

    fn get(&self, i: usize, j: usize, alpha: usize, beta: usize) -> PyResult<f64> {
        let d = self.inner.dimension();
        if [i, j, alpha, beta].iter().any(|&k| k >= d) {
            return Err(PyValueError::new_err(format!("indices must be below {d}")));
        }
        Ok(self.inner.tensor.get(i, j, alpha, beta))
    }

    /// Entries flattened in `(i, j, α, β)` order.
    fn entries(&self) -> Vec<f64> {
        self.inner.tensor.to_ijab()
    }

    fn __repr__(&self) -> String {
        format!("EffectiveTensor(dim={}, mu_lower={:.6}, mu_upper={:.6})", self.inner.dimension(), self.inner.mu_lower, self.inner.mu_upper)
    }
}

/// Correctors `(χ_j^β, π_j^β)` on a periodic cell grid.
#[pyclass(name = "CorrectorSet", module = "stokes_homog", frozen)]
struct PyCorrectors {
    inner: CorrectorSet,
    field: CoefficientField,
}

impl PyCorrectors {
    fn index(&self, j: usize, beta: usize) -> PyResult<()> {
        let d = self.inner.dimension();
        if j >= d || beta >= d {
            return Err(PyValueError::new_err(format!("indices must be below {d}")));
        }
        Ok(())
    }
}

#[pymethods]
impl PyCorrectors {
    #[getter]
    fn n(&self) -> usize {
        self.inner.grid.n
    }

    #[getter]
    fn max_residual(&self) -> f64 {
        self.inner.max_residual()
    }

    /// Face values of `χ_j^β`, direction-major.
    fn chi(&self, j: usize, beta: usize) -> PyResult<Vec<f64>> {
        self.index(j, beta)?;
        Ok(self.inner.chi(j, beta).values.clone())
    }

    /// Cell values of `π_j^β`.
    fn pi(&self, j: usize, beta: usize) -> PyResult<Vec<f64>> {
        self.index(j, beta)?;
        Ok(self.inner.pi(j, beta).values.clone())
    }

    fn effective(&self) -> PyResult<PyEffective> {
        Ok(PyEffective {
            inner: effective::compute_effective(&self.field, &self.inner).map_err(py_err)?,
        })
    }

    /// Liouville family built from these correctors: rank, residuals and
    /// singular values.
    fn liouville<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rep = liouville_family_report(&self.field, &self.inner).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("rank", rep.rank)?;
        out.set_item("expected_rank", rep.expected_rank)?;
        out.set_item("singular_values", rep.singular_values.clone())?;
        out.set_item("corrector_residual", rep.corrector_residual)?;
        out.set_item("max_momentum_residual", rep.max_momentum_residual())?;
        out.set_item("max_div_defect", rep.max_div_defect())?;
        Ok(out)
    }
}

/// Solves all `d²` cell problems on an `n^d` periodic grid.
#[pyfunction]
#[pyo3(signature = (field, n, tol = 1e-10))]
fn solve_cell(py: Python<'_>, field: &PyField, n: usize, tol: f64) -> PyResult<PyCorrectors> {
    let grid = Grid::periodic(field.inner.dimension(), n).map_err(py_err)?;
    let f = field.inner.clone();
    let set = py.detach(|| cell::solve_cell_problems(&f, grid, &options(tol))).map_err(py_err)?;
    Ok(PyCorrectors { inner: set, field: f })
}

/// Effective tensor from correctors on an `n^d` cell grid.
#[pyfunction]
#[pyo3(signature = (field, n, tol = 1e-10))]
fn effective_tensor(py: Python<'_>, field: &PyField, n: usize, tol: f64) -> PyResult<PyEffective> {
    let grid = Grid::periodic(field.inner.dimension(), n).map_err(py_err)?;
    let f = field.inner.clone();
    let (_, eff) = py.detach(|| effective::effective_tensor(&f, grid, &options(tol))).map_err(py_err)?;
    Ok(PyEffective { inner: eff })
}

/// `max |(Â)* − (A*)^|` over all entries.
#[pyfunction]
#[pyo3(signature = (field, n, tol = 1e-10))]
fn duality_defect(py: Python<'_>, field: &PyField, n: usize, tol: f64) -> PyResult<f64> {
    let grid = Grid::periodic(field.inner.dimension(), n).map_err(py_err)?;
    let f = field.inner.clone();
    let rep = py.detach(|| effective::check_duality(&f, grid, &options(tol))).map_err(py_err)?;
    Ok(rep.discrepancy)
}

/// Dirichlet problem `−div(A(x/ε)∇u) + ∇p = F`, `div u = 0`, `u = 0` on the
/// boundary of the unit box, with a smooth bump force given as JSON
/// (`{"center": [..], "radius": r}`). Returns velocity face values,
/// pressure cell values and residuals.
#[pyfunction]
#[pyo3(signature = (field, eps, n, force, tol = 1e-10))]
fn solve_dirichlet<'py>(py: Python<'py>, field: &PyField, eps: f64, n: usize, force: &str, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let bump: BumpForce = serde_json::from_str(force).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = field.inner.dimension();
    let grid = Grid::boxed(d, n, 1.0).map_err(py_err)?;
    let f = field.inner.clone();
    let sol = py
        .detach(|| -> Result<_, Error> {
            let coeffs = Coefficients::oscillating(&f, eps)?;
            let problem = StokesProblem::new(grid, coeffs.clone())?.with_force(|x| bump.evaluate(x));
            DirichletSolver::new(grid, &coeffs, &options(tol))?.solve(&problem)
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("velocity", sol.velocity.values.clone())?;
    out.set_item("pressure", sol.pressure.values.clone())?;
    out.set_item("relative_residual", sol.relative_residual)?;
    out.set_item("div_residual", sol.div_residual)?;
    Ok(out)
}

/// Validation findings for a config file as `(field, message)` pairs; empty
/// when the config is valid.
#[pyfunction]
fn validate_config(path: PathBuf) -> PyResult<Vec<(String, String)>> {
    match ExperimentConfig::load(&path) {
        Ok(_) => Ok(Vec::new()),
        Err(LoadError::Io(e)) => Err(PyIOError::new_err(e.to_string())),
        Err(LoadError::Invalid(diags)) => Ok(diags.into_iter().map(|d| (d.path, d.message)).collect()),
    }
}

/// Runs a config and returns its checks and written artifacts. Failed
/// checks are reported, not raised.
#[pyfunction]
#[pyo3(signature = (path, out = None, seed = None))]
fn run_config<'py>(py: Python<'py>, path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(LoadError::Io(e)) => return Err(PyIOError::new_err(e.to_string())),
        Err(LoadError::Invalid(diags)) => {
            let text: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            return Err(PyValueError::new_err(text.join("\n")));
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out.unwrap_or_else(|| cfg.out.clone());
    let base = path.parent().map(PathBuf::from);
    let outcome = py.detach(|| runner::run(&cfg, base.as_deref(), &out_dir)).map_err(py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("kind", outcome.kind.name())?;
    dict.set_item("passed", outcome.passed())?;
    let checks: Vec<(String, bool, String)> = outcome.checks.iter().map(|c| (c.id.name().to_string(), c.pass, c.detail.clone())).collect();
    dict.set_item("checks", checks)?;
    dict.set_item("artifacts", outcome.artifacts.clone())?;
    dict.set_item("out", out_dir)?;
    Ok(dict)
}

#[pymodule(name = "stokes_homog")]
fn stokes_homog_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyEffective>()?;
    m.add_class::<PyCorrectors>()?;
    m.add_function(wrap_pyfunction!(solve_cell, m)?)?;
    m.add_function(wrap_pyfunction!(effective_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(duality_defect, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dirichlet, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
