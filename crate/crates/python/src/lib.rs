//! Python bindings for `eigpool`. Matrices cross the boundary as nested
//! lists of floats (row-major), so `numpy.ndarray.tolist()` works as input.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use eigpool::attribution::{self, EigSelection, SelectionMode};
use eigpool::diagnostics;
use eigpool::gcp::{self, GcpConfig};
use eigpool::harness::GradOp;
use eigpool::{Error, Mat, SpectralFn};

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_mat(rows: Rows) -> PyResult<Mat> {
    Mat::from_rows(&rows).map_err(py_err)
}

fn parse_fn(name: &str, p: u32) -> PyResult<SpectralFn> {
    match name {
        "sqrt" => Ok(SpectralFn::Sqrt),
        "proot" => Ok(SpectralFn::PRoot(p)),
        "log" => Ok(SpectralFn::Log),
        "exp_inv" => Ok(SpectralFn::ExpInv),
        other => Err(PyValueError::new_err(format!(
            "unknown spectral function {other:?}; expected sqrt, proot, log or exp_inv"
        ))),
    }
}

fn parse_selection(mode: &str, t: usize) -> PyResult<EigSelection> {
    let mode = match mode {
        "all" => SelectionMode::All,
        "large" => SelectionMode::Large,
        "small" => SelectionMode::Small,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown selection {other:?}; expected all, large or small"
            )))
        }
    };
    Ok(EigSelection::new(mode, t))
}

/// Returns `(eigenvalues, eigenvectors)` with eigenvalues non-increasing and
/// eigenvectors stored as columns.
#[pyfunction]
fn sym_eig(p: Rows) -> PyResult<(Vec<f64>, Rows)> {
    let e = eigpool::sym_eig(&to_mat(p)?).map_err(py_err)?;
    Ok((e.lambda().to_vec(), e.u().to_rows()))
}

/// Sample covariance of a `d × N` feature matrix.
#[pyfunction]
fn covariance(x: Rows) -> PyResult<Rows> {
    Ok(gcp::covariance(&to_mat(x)?).map_err(py_err)?.to_rows())
}

/// `U f(Λ) Uᵀ` for `f` in `sqrt`, `proot`, `log`, `exp_inv`.
#[pyfunction]
#[pyo3(signature = (p, f, order = 2))]
fn mat_fn(p: Rows, f: &str, order: u32) -> PyResult<Rows> {
    let f = parse_fn(f, order)?;
    let eig = eigpool::sym_eig(&to_mat(p)?).map_err(py_err)?;
    Ok(eigpool::mat_fn(&eig, f).map_err(py_err)?.to_rows())
}

/// Scaling eigen branch factor `‖Q Sᵀ‖_F` of a covariance.
#[pyfunction]
fn seb_factor(p: Rows) -> PyResult<f64> {
    let eig = eigpool::sym_eig(&to_mat(p)?).map_err(py_err)?;
    gcp::seb_factor(&eig).map_err(py_err)
}

/// `λ_max / λ_min`, or `inf` for a rank-deficient matrix.
#[pyfunction]
fn condition_number(p: Rows) -> PyResult<f64> {
    let eig = eigpool::sym_eig(&to_mat(p)?).map_err(py_err)?;
    Ok(diagnostics::condition_number(&eig).value)
}

#[pyfunction]
fn log_euclidean_dist(p1: Rows, p2: Rows) -> PyResult<f64> {
    diagnostics::log_euclidean_dist(&to_mat(p1)?, &to_mat(p2)?).map_err(py_err)
}

/// Share of the total energy held by eigenvalues after the first `t`.
#[pyfunction]
fn energy_fraction(lambda: Vec<f64>, t: usize) -> PyResult<f64> {
    diagnostics::energy_fraction(&lambda, t).map_err(py_err)
}

#[pyfunction]
fn select_eigs(lambda: Vec<f64>, mode: &str, t: usize) -> PyResult<Vec<f64>> {
    attribution::select_eigs(&lambda, parse_selection(mode, t)?).map_err(py_err)
}

#[pyfunction]
fn corr_coeff(a: Rows, b: Rows) -> PyResult<f64> {
    attribution::corr_coeff(&to_mat(a)?, &to_mat(b)?).map_err(py_err)
}

#[pyfunction]
fn mae(a: Rows, b: Rows) -> PyResult<f64> {
    attribution::mae(&to_mat(a)?, &to_mat(b)?).map_err(py_err)
}

/// `Σ λ_i(A) λ_i(B) − |tr(AB)|`, non-negative for SPSD inputs.
#[pyfunction]
fn vn_trace_gap(a: Rows, b: Rows) -> PyResult<f64> {
    attribution::vn_trace_gap(&to_mat(a)?, &to_mat(b)?).map_err(py_err)
}

/// Runs the finite-difference check for one operation and returns
/// `(passed, worst relative error)`.
#[pyfunction]
#[pyo3(signature = (op, trials = 100, seed = 0))]
fn gradcheck(op: &str, trials: usize, seed: u64) -> PyResult<(bool, f64)> {
    let op: GradOp = op.parse().map_err(py_err)?;
    let report = eigpool::harness::gradcheck(op, trials, seed).map_err(py_err)?;
    Ok((report.passed(), report.worst()))
}

/// Global covariance pooling head.
#[pyclass(name = "GcpPool", frozen)]
struct PyGcpPool {
    cfg: GcpConfig,
}

#[pymethods]
impl PyGcpPool {
    #[new]
    #[pyo3(signature = (seb = false, normalization = "sqrt", order = 2, truncate_k = None))]
    fn new(seb: bool, normalization: &str, order: u32, truncate_k: Option<usize>) -> PyResult<Self> {
        let cfg = GcpConfig::default()
            .with_seb(seb)
            .with_normalization(parse_fn(normalization, order)?)
            .with_truncation(truncate_k);
        Ok(Self { cfg })
    }

    #[getter]
    fn seb(&self) -> bool {
        self.cfg.use_seb
    }

    #[getter]
    fn truncate_k(&self) -> Option<usize> {
        self.cfg.truncate_k
    }

    fn forward(&self, x: Rows) -> PyResult<PyGcpState> {
        let state = eigpool::gcp_forward(&to_mat(x)?, &self.cfg).map_err(py_err)?;
        Ok(PyGcpState { state })
    }
}

/// Forward intermediates of one pooling pass.
#[pyclass(name = "GcpState", frozen)]
struct PyGcpState {
    state: gcp::GcpState,
}

#[pymethods]
impl PyGcpState {
    /// Pooled output.
    #[getter]
    fn output(&self) -> Rows {
        self.state.a.to_rows()
    }

    #[getter]
    fn covariance(&self) -> Rows {
        self.state.p.to_rows()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.state.eig.lambda().to_vec()
    }

    /// SEB factor, `None` when the branch is disabled.
    #[getter]
    fn factor(&self) -> Option<f64> {
        self.state.factor
    }

    /// Gradient with respect to the input features given `∂L/∂A`.
    fn backward(&self, d_a: Rows) -> PyResult<Rows> {
        Ok(eigpool::gcp_backward(&self.state, &to_mat(d_a)?).map_err(py_err)?.to_rows())
    }
}

#[pymodule]
fn eigpool_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGcpPool>()?;
    m.add_class::<PyGcpState>()?;
    m.add_function(wrap_pyfunction!(sym_eig, m)?)?;
    m.add_function(wrap_pyfunction!(covariance, m)?)?;
    m.add_function(wrap_pyfunction!(mat_fn, m)?)?;
    m.add_function(wrap_pyfunction!(seb_factor, m)?)?;
    m.add_function(wrap_pyfunction!(condition_number, m)?)?;
    m.add_function(wrap_pyfunction!(log_euclidean_dist, m)?)?;
    m.add_function(wrap_pyfunction!(energy_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(select_eigs, m)?)?;
    m.add_function(wrap_pyfunction!(corr_coeff, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(vn_trace_gap, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
