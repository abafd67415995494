//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use dspgd::bregman::{adjusted_bregman_div, bregman_div_standard, fundamental_identity_residual};
use dspgd::experiment::{eps_sweep, eta_sweep, verify_suite, ExperimentConfig, ReferenceKind};
use dspgd::format::{instance_checksum, read_instance, write_instance, SweepRow};
use dspgd::optimizer::{dspgd_run, gd_run};
use dspgd::problem::generate;
use dspgd::reference::min_lp_solution;
use dspgd::verify::{optimal_eta, BoundConstants};
use dspgd::{Error, GenSpec, Mat, PNorm, PreconditionerKind, ProblemInstance, RunConfig, SeparableLoss};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidDimensions(_)
        | Error::StepSizeViolation { .. }
        | Error::Format(_)
        | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Problem instance `(X, Y, W0)` with optional planted weights.
#[pyclass(name = "Problem", module = "dspgd_py", frozen)]
struct PyProblem {
    inner: ProblemInstance,
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, w0: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = ProblemInstance::new(to_mat(x)?, to_mat(y)?, to_mat(w0)?).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    /// Synthetic planted instance (Gaussian data, `W0` scaled by 0.1).
    #[staticmethod]
    #[pyo3(signature = (n, d, k=1, seed=1, noise=0.0))]
    fn generate(n: usize, d: usize, k: usize, seed: u64, noise: f64) -> PyResult<Self> {
        let spec = GenSpec { n, d, k, seed, noise };
        Ok(PyProblem {
            inner: generate(&spec).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyProblem {
            inner: read_instance(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_instance(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.x())
    }

    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.y())
    }

    #[getter]
    fn w0(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.w0())
    }

    /// `(sigma_1, sigma_n)` of `X X^T`.
    fn spectrum(&self) -> (f64, f64) {
        let s = self.inner.spectrum();
        (s.sigma1_gram, s.sigman_gram)
    }

    fn checksum(&self) -> String {
        instance_checksum(&self.inner)
    }

    fn interpolation_residual(&self, w: Vec<Vec<f64>>) -> PyResult<f64> {
        dspgd::problem::interpolation_residual(&self.inner, &to_mat(w)?).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Problem(n={}, d={}, k={})", self.inner.n(), self.inner.d(), self.inner.k())
    }
}

/// Dual reference function `K`: `normalized_gd`, `grad_clip`, `adam_like`
/// or `quadratic`.
#[pyclass(name = "Preconditioner", module = "dspgd_py", frozen)]
struct PyPreconditioner {
    inner: dspgd::Preconditioner,
}

#[pymethods]
impl PyPreconditioner {
    #[new]
    #[pyo3(signature = (name, eps=0.5))]
    fn new(name: &str, eps: f64) -> PyResult<Self> {
        let kind: PreconditionerKind = name.parse().map_err(to_py)?;
        Ok(PyPreconditioner {
            inner: dspgd::Preconditioner::new(kind, eps).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps()
    }

    #[getter]
    fn isotropic(&self) -> bool {
        self.inner.is_isotropic()
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    fn value(&self, z: Vec<Vec<f64>>) -> PyResult<f64> {
        Ok(self.inner.value(&to_mat(z)?))
    }

    fn grad(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.grad(&to_mat(z)?)))
    }

    /// Largest admissible step size on the given instance.
    fn eta_max(&self, problem: &PyProblem) -> f64 {
        self.inner.eta_max(problem.inner.n(), &problem.inner.spectrum())
    }

    fn __repr__(&self) -> String {
        format!("Preconditioner({:?}, eps={})", self.inner.name(), self.inner.eps())
    }
}

#[pyclass(name = "Trajectory", module = "dspgd_py", frozen, get_all)]
struct PyTrajectory {
    preconditioner: String,
    eta: f64,
    final_w: Vec<Vec<f64>>,
    converged: bool,
    iters_used: usize,
    loss_series: Vec<f64>,
    grad_norm_series: Vec<f64>,
    k_value_series: Vec<f64>,
}

impl From<dspgd::Trajectory> for PyTrajectory {
    fn from(t: dspgd::Trajectory) -> Self {
        PyTrajectory {
            preconditioner: t.preconditioner,
            eta: t.eta,
            final_w: to_rows(&t.final_w),
            converged: t.converged,
            iters_used: t.iters_used,
            loss_series: t.loss_series,
            grad_norm_series: t.grad_norm_series,
            k_value_series: t.k_value_series,
        }
    }
}

#[pymethods]
impl PyTrajectory {
    fn __repr__(&self) -> String {
        format!(
            "Trajectory({}, eta={}, iters={}, converged={})",
            self.preconditioner, self.eta, self.iters_used, self.converged
        )
    }
}

fn run_config(eta: f64, max_iters: usize, tol_grad_k: f64, tol_interp: f64, strict_eta: bool) -> RunConfig {
    RunConfig {
        eta,
        max_iters,
        tol_grad_k,
        tol_interp,
        // only the scalar series reach Python
        record_every: max_iters,
        strict_eta,
    }
}

/// Runs `W_i = W_{i-1} - eta grad K(grad L(W_{i-1}))` on the squared loss.
#[pyfunction]
#[pyo3(signature = (problem, preconditioner, eta=0.005, max_iters=1_000_000, tol_grad_k=1e-9, tol_interp=1e-10, strict_eta=false))]
fn run(
    py: Python<'_>,
    problem: &PyProblem,
    preconditioner: &PyPreconditioner,
    eta: f64,
    max_iters: usize,
    tol_grad_k: f64,
    tol_interp: f64,
    strict_eta: bool,
) -> PyResult<PyTrajectory> {
    let cfg = run_config(eta, max_iters, tol_grad_k, tol_interp, strict_eta);
    let loss = SeparableLoss::squared();
    let t = py
        .detach(|| dspgd_run(&problem.inner, &loss, &preconditioner.inner, &cfg))
        .map_err(to_py)?;
    Ok(t.into())
}

/// Plain gradient descent from the same initialization.
#[pyfunction]
#[pyo3(signature = (problem, eta=0.005, max_iters=1_000_000, tol_grad_k=1e-9, tol_interp=1e-10))]
fn gd(py: Python<'_>, problem: &PyProblem, eta: f64, max_iters: usize, tol_grad_k: f64, tol_interp: f64) -> PyResult<PyTrajectory> {
    let cfg = run_config(eta, max_iters, tol_grad_k, tol_interp, false);
    let loss = SeparableLoss::squared();
    let t = py.detach(|| gd_run(&problem.inner, &loss, &cfg)).map_err(to_py)?;
    Ok(t.into())
}

/// Interpolator closest to `W0` in the given norm (`l1`, `l2` or `linf`);
/// returns `(W*, objective)`.
#[pyfunction]
#[pyo3(signature = (problem, norm="l2"))]
fn reference_solution(problem: &PyProblem, norm: &str) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let p: PNorm = norm.parse().map_err(to_py)?;
    let sol = min_lp_solution(&problem.inner, p).map_err(to_py)?;
    Ok((to_rows(&sol.w_star), sol.objective))
}

/// `K(a) - K(b) - <grad K(b), a - b>`.
#[pyfunction]
fn bregman_divergence(preconditioner: &PyPreconditioner, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    bregman_div_standard(&preconditioner.inner, &to_mat(a)?, &to_mat(b)?).map_err(to_py)
}

/// Adjusted divergence of the squared loss between weight matrices.
#[pyfunction]
fn adjusted_divergence(problem: &PyProblem, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    adjusted_bregman_div(&problem.inner, &SeparableLoss::squared(), &to_mat(a)?, &to_mat(b)?).map_err(to_py)
}

/// Relative residual of the one-step identity for the probe `w` at the
/// transition `w_prev -> w_next`.
#[pyfunction]
fn identity_residual(
    problem: &PyProblem,
    preconditioner: &PyPreconditioner,
    w: Vec<Vec<f64>>,
    w_prev: Vec<Vec<f64>>,
    w_next: Vec<Vec<f64>>,
    eta: f64,
) -> PyResult<f64> {
    let loss = SeparableLoss::squared();
    let r = fundamental_identity_residual(
        &problem.inner,
        &loss,
        &preconditioner.inner,
        &to_mat(w)?,
        &to_mat(w_prev)?,
        &to_mat(w_next)?,
        eta,
    )
    .map_err(to_py)?;
    Ok(r.standard.rel_residual)
}

/// `(eta_star, contraction)` for an isotropic preconditioner.
#[pyfunction]
fn optimal_step(problem: &PyProblem, preconditioner: &PyPreconditioner) -> PyResult<(f64, f64)> {
    let c = BoundConstants::new(&problem.inner, &SeparableLoss::squared(), &preconditioner.inner).map_err(to_py)?;
    let o = optimal_eta(&c);
    Ok((o.eta_star, o.contraction))
}

/// Runs the verification suite for a TOML config (defaults when `None`);
/// returns one dict per check.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn verify<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = match config {
        Some(text) => ExperimentConfig::from_toml(text).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    let p = cfg.build_problem().map_err(to_py)?;
    let k = cfg.preconditioner.build().map_err(to_py)?;
    let loss = cfg.loss.build();
    let out = py.detach(|| verify_suite(&p, &loss, &k, &cfg.run)).map_err(to_py)?;
    out.checks
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("check", &c.check)?;
            d.set_item("holds", c.holds)?;
            d.set_item("gating", c.gating)?;
            d.set_item("worst_margin", c.worst_margin)?;
            d.set_item("detail", &c.detail)?;
            Ok(d)
        })
        .collect()
}

fn row_dict<'py>(py: Python<'py>, r: &SweepRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("param", &r.param)?;
    d.set_item("value", r.value)?;
    d.set_item("dist_l1", r.dist_l1)?;
    d.set_item("dist_l2", r.dist_l2)?;
    d.set_item("dist_linf", r.dist_linf)?;
    d.set_item("dist_gd", r.dist_gd)?;
    d.set_item("iters", r.iters)?;
    d.set_item("final_loss", r.final_loss)?;
    d.set_item("converged", r.converged)?;
    if let Some((dist, norm)) = r.reference {
        d.set_item("dist_ref", dist)?;
        d.set_item("ref_norm", norm)?;
    }
    Ok(d)
}

const ALL_REFERENCES: [ReferenceKind; 4] = [ReferenceKind::L1, ReferenceKind::L2, ReferenceKind::Linf, ReferenceKind::Gd];

/// Smoothing-parameter sweep at a fixed step size.
#[pyfunction]
#[pyo3(signature = (problem, name, eps_values, eta=0.005))]
fn sweep_eps<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    name: &str,
    eps_values: Vec<f64>,
    eta: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind: PreconditionerKind = name.parse().map_err(to_py)?;
    let loss = SeparableLoss::squared();
    let run = RunConfig::new(eta);
    let rows = py
        .detach(|| eps_sweep(&problem.inner, &loss, kind, &eps_values, &run, &ALL_REFERENCES, 0))
        .map_err(to_py)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Step-size sweep; each row carries `dist_ref` to the limit at `eta_ref`.
#[pyfunction]
#[pyo3(signature = (problem, preconditioner, eta_values, eta_ref=0.005))]
fn sweep_eta<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    preconditioner: &PyPreconditioner,
    eta_values: Vec<f64>,
    eta_ref: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let loss = SeparableLoss::squared();
    let run = RunConfig::default();
    let rows = py
        .detach(|| eta_sweep(&problem.inner, &loss, &preconditioner.inner, &eta_values, eta_ref, &run, &ALL_REFERENCES, 0))
        .map_err(to_py)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

#[pymodule]
fn dspgd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyPreconditioner>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gd, m)?)?;
    m.add_function(wrap_pyfunction!(reference_solution, m)?)?;
    m.add_function(wrap_pyfunction!(bregman_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(identity_residual, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_step, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_eps, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_eta, m)?)?;
    Ok(())
}
