//! Python bindings. Grid functions cross the boundary as flat lists in
//! row-major node order; `Field.shape` gives the layout.

use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nondiv::coefficients::{CoefficientFamily, EllipticOperator, FamilyKind};
use nondiv::diagnostics::{radius_ladder, sharp_inequality_check, slobodeckij_seminorm, SharpCheckConfig};
use nondiv::experiment::{self, BcKind, Command, RunOptions};
use nondiv::grid::{BoxGrid, GridFunction};
use nondiv::halfspace::{self, BoundaryCondition, HalfSpaceProblem, SolveOptions};
use nondiv::manufactured::Manufactured;
use nondiv::mode_solver::{solve_whole_space_x1, XprimeSymbol};
use nondiv::vmo::{box_centers, vmo_report as core_vmo_report};
use nondiv::whole_space;
use nondiv::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Format(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) | Error::Csv(_) => PyOSError::new_err(e.to_string()),
        Error::SingularSystem(_) | Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Tensor grid: non-periodic first axis, periodic remaining axes.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(Arc<BoxGrid>);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (dim, x1, n1, nprime, xprime = (-std::f64::consts::PI, std::f64::consts::PI)))]
    fn new(dim: usize, x1: (f64, f64), n1: usize, nprime: usize, xprime: (f64, f64)) -> PyResult<Self> {
        Ok(PyGrid(Arc::new(BoxGrid::standard(dim, x1, n1, xprime, nprime).map_err(py_err)?)))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.sizes()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn spacing(&self, axis: usize) -> PyResult<f64> {
        self.check_axis(axis)?;
        Ok(self.0.spacing(axis))
    }

    fn coords(&self, axis: usize) -> PyResult<Vec<f64>> {
        self.check_axis(axis)?;
        Ok(self.0.coords(axis))
    }

    /// Grid of the wall `x¹ = const`.
    fn trace(&self) -> Self {
        PyGrid(Arc::new(self.0.trace()))
    }

    fn __repr__(&self) -> String {
        format!("Grid(shape={:?})", self.0.sizes())
    }
}

impl PyGrid {
    fn check_axis(&self, axis: usize) -> PyResult<()> {
        if axis >= self.0.dim() {
            return Err(PyValueError::new_err(format!("axis {axis} out of range for a {}-d grid", self.0.dim())));
        }
        Ok(())
    }
}

/// Real scalar function sampled on a grid.
#[pyclass(name = "Field", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(GridFunction);

#[pymethods]
impl PyField {
    #[new]
    fn new(grid: &PyGrid, values: Vec<f64>) -> PyResult<Self> {
        let v = values.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        Ok(PyField(GridFunction::scalar(grid.0.clone(), v).map_err(py_err)?))
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid_arc().clone())
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.grid().sizes()
    }

    /// Real parts in row-major order.
    fn values(&self) -> Vec<f64> {
        self.0.real_parts()
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    fn __sub__(&self, other: &PyField) -> PyResult<PyField> {
        Ok(PyField(self.0.sub(&other.0).map_err(py_err)?))
    }

    fn __len__(&self) -> usize {
        self.0.grid().len()
    }
}

/// Elliptic operator drawn from a coefficient family.
#[pyclass(name = "Operator", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOperator(EllipticOperator);

fn family_kind(kind: &str) -> PyResult<FamilyKind> {
    Ok(match kind {
        "identity" => FamilyKind::Identity,
        "constant" => FamilyKind::Constant,
        "measurable_x1" => FamilyKind::MeasurableX1,
        "vmo_oscillatory" => FamilyKind::VmoOscillatory,
        "checkerboard_x1" => FamilyKind::CheckerboardX1,
        other => return Err(PyValueError::new_err(format!("unknown coefficient family {other:?}"))),
    })
}

#[pymethods]
impl PyOperator {
    #[staticmethod]
    #[pyo3(signature = (kind, dim = 2, seed = 0, delta = None, epsilon = 0.0, lower_order = 0.0))]
    fn draw(kind: &str, dim: usize, seed: u64, delta: Option<f64>, epsilon: f64, lower_order: f64) -> PyResult<Self> {
        let base = CoefficientFamily::default();
        let fam = CoefficientFamily {
            kind: family_kind(kind)?,
            seed,
            delta: delta.unwrap_or(base.delta),
            epsilon,
            lower_order,
            ..base
        };
        Ok(PyOperator(fam.draw(dim).map_err(py_err)?))
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        PyOperator(EllipticOperator::identity(dim))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta()
    }

    /// Leading coefficient matrix at `x`, as rows.
    fn a(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        if x.len() != self.0.dim() {
            return Err(PyValueError::new_err("point dimension does not match the operator"));
        }
        let m = self.0.a_at(&x);
        Ok((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect())
    }
}

/// `(u, f)`: a named manufactured solution and its forcing for `L u - λu`.
#[pyfunction]
fn manufactured(name: &str, grid: &PyGrid, op: &PyOperator, lam: f64) -> PyResult<(PyField, PyField)> {
    let m = Manufactured::by_name(name, &grid.0).map_err(py_err)?;
    let u = m.sample(grid.0.clone()).map_err(py_err)?;
    let f = m.forcing(&op.0, lam, grid.0.clone()).map_err(py_err)?;
    Ok((PyField(u), PyField(f)))
}

/// Finite-difference whole-space solve.
#[pyfunction]
#[pyo3(signature = (op, f, lam, tol = whole_space::DEFAULT_TOL, maxiter = None))]
fn solve<'py>(py: Python<'py>, op: &PyOperator, f: &PyField, lam: f64, tol: f64, maxiter: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let maxiter = maxiter.unwrap_or(10 * f.0.grid().len());
    let sol = py.detach(|| whole_space::solve_problem_with(&op.0, &f.0, lam, tol, maxiter)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("u", PyField(sol.u))?;
    d.set_item("residual", sol.residual)?;
    d.set_item("iterations", sol.iterations)?;
    Ok(d)
}

/// Per-frequency solve; coefficients must depend on `x¹` only.
#[pyfunction]
fn solve_modes<'py>(py: Python<'py>, op: &PyOperator, f: &PyField, lam: f64) -> PyResult<Bound<'py, PyDict>> {
    let sol = py.detach(|| solve_whole_space_x1(&op.0, &f.0, lam, XprimeSymbol::Stencil)).map_err(py_err)?;
    let modes: Vec<(Vec<f64>, f64, f64, f64)> = sol.modes.iter().map(|m| (m.xi.clone(), m.residual, m.n1, m.n2)).collect();
    let d = PyDict::new(py);
    d.set_item("u", PyField(sol.u))?;
    d.set_item("residual", sol.residual)?;
    d.set_item("modes", modes)?;
    Ok(d)
}

/// Half-space solve on a grid with `x¹ ∈ [0, X]`. `bc` is one of
/// dirichlet, neumann, oblique, robin; `g` lives on `grid.trace()`.
#[pyfunction]
#[pyo3(signature = (op, f, lam, bc = "dirichlet", ell = None, sigma = 0.0, g = None, tol = whole_space::DEFAULT_TOL))]
#[allow(clippy::too_many_arguments)]
fn solve_halfspace<'py>(
    py: Python<'py>,
    op: &PyOperator,
    f: &PyField,
    lam: f64,
    bc: &str,
    ell: Option<Vec<f64>>,
    sigma: f64,
    g: Option<&PyField>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = f.0.grid_arc().clone();
    let ell = ell.unwrap_or_else(|| {
        let mut e = vec![0.0; grid.dim()];
        e[0] = 1.0;
        e
    });
    let g = g.map(|g| g.0.clone()).unwrap_or_else(|| GridFunction::zeros(Arc::new(grid.trace())));
    let cond = match bc {
        "dirichlet" => BoundaryCondition::Dirichlet,
        "neumann" => BoundaryCondition::Neumann,
        "oblique" => BoundaryCondition::Oblique { ell, g },
        "robin" => BoundaryCondition::Robin { ell, sigma, g },
        other => return Err(PyValueError::new_err(format!("unknown boundary condition {other:?}"))),
    };
    let prob = HalfSpaceProblem::new(op.0.clone(), f.0.clone(), cond, lam).map_err(py_err)?;
    let opts = SolveOptions { tol, maxiter: None };
    let sol = py.detach(|| halfspace::solve(&prob, &opts)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("boundary_sup", sol.boundary_sup())?;
    d.set_item("residual", sol.residual)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("symmetry_defect", sol.symmetry_defect)?;
    d.set_item("mirror_defect", sol.mirror_defect)?;
    d.set_item("u", PyField(sol.u))?;
    Ok(d)
}

/// `(‖u‖ₚ, ‖Du‖ₚ, ‖D²u‖ₚ)`.
#[pyfunction]
fn sobolev_norms(u: &PyField, p: f64) -> PyResult<(f64, f64, f64)> {
    let [a, b, c] = whole_space::sobolev_norms(&u.0, p, None).map_err(py_err)?;
    Ok((a, b, c))
}

/// Left side of the whole-space a-priori estimate over `‖f‖ₚ`.
#[pyfunction]
fn apriori_ratio(u: &PyField, f: &PyField, lam: f64, p: f64) -> PyResult<f64> {
    whole_space::apriori_ratio(&u.0, &f.0, lam, p, None).map_err(py_err)
}

/// Mean-oscillation modulus in `x′` at each scale; returns
/// `(radii, modulus, stderr)`.
#[pyfunction]
#[pyo3(signature = (op, scales, lo, hi, centers_per_axis = 3, samples = 512, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn vmo_report(
    py: Python<'_>,
    op: &PyOperator,
    scales: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    centers_per_axis: usize,
    samples: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if lo.len() != op.0.dim() || hi.len() != op.0.dim() {
        return Err(PyValueError::new_err("lo and hi must match the operator dimension"));
    }
    let centers = box_centers(&lo, &hi, centers_per_axis);
    let a = |x: &[f64]| op.0.a_at(x);
    let rep = py.detach(|| core_vmo_report(&a, &scales, &centers, samples, seed)).map_err(py_err)?;
    Ok((rep.radii, rep.modulus, rep.stderr))
}

/// Empirical constant of the sharp-function inequality at `points`.
/// Returns `(n_max, modulus)`.
#[pyfunction]
#[pyo3(signature = (u, op, points, r = 0.5, mu = 2.0, seed = 0))]
fn sharp_check(py: Python<'_>, u: &PyField, op: &PyOperator, points: Vec<Vec<f64>>, r: f64, mu: f64, seed: u64) -> PyResult<(f64, f64)> {
    let radii = radius_ladder(u.0.grid());
    let mut cfg = SharpCheckConfig::new(u.0.grid().dim(), r, mu, points, radii).map_err(py_err)?;
    cfg.seed = seed;
    let rep = py.detach(|| sharp_inequality_check(&u.0, &op.0, &cfg)).map_err(py_err)?;
    Ok((rep.n_max, rep.modulus))
}

/// Gagliardo–Slobodeckij seminorm `[g]_{s,p}` over the field's grid.
#[pyfunction]
fn seminorm(py: Python<'_>, g: &PyField, s: f64, p: f64) -> PyResult<f64> {
    py.detach(|| slobodeckij_seminorm(&g.0, s, p)).map_err(py_err)
}

/// Runs a command-line experiment and returns its exit code.
#[pyfunction]
#[pyo3(signature = (command, config, output = None, bc = None))]
fn run(py: Python<'_>, command: &str, config: PathBuf, output: Option<PathBuf>, bc: Option<&str>) -> PyResult<i32> {
    let command = match command {
        "solve" => Command::Solve,
        "modes" => Command::Modes,
        "halfspace" => Command::Halfspace,
        "vmo" => Command::Vmo,
        "verify" => Command::Verify,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let bc = match bc {
        None => None,
        Some("dirichlet") => Some(BcKind::Dirichlet),
        Some("neumann") => Some(BcKind::Neumann),
        Some("oblique") => Some(BcKind::Oblique),
        Some("robin") => Some(BcKind::Robin),
        Some(other) => return Err(PyValueError::new_err(format!("unknown boundary condition {other:?}"))),
    };
    let opts = RunOptions { output_dir: output, bc, threads: None };
    Ok(py.detach(|| experiment::run(command, &config, &opts)).exit_code)
}

#[pymodule]
pub fn pynondiv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(manufactured, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_modes, m)?)?;
    m.add_function(wrap_pyfunction!(solve_halfspace, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_norms, m)?)?;
    m.add_function(wrap_pyfunction!(apriori_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(vmo_report, m)?)?;
    m.add_function(wrap_pyfunction!(sharp_check, m)?)?;
    m.add_function(wrap_pyfunction!(seminorm, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
