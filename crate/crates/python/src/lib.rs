//! Python bindings: instances, solves with any strategy, certification and
//! the reference solver.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vmip_core::bfgs::{self, CSchedule};
use vmip_core::runner::StrategyKind;
use vmip_core::{conditions, diagnostics, model, problems, solver, spectral};
use vmip_core::{Delta, Error, GeneratorKind, GeneratorSpec, PrimalDualPoint, ProblemInstance, SolverConfig, StrategyConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NotSpd { .. } | Error::Curvature(_) | Error::OracleFailure(_) | Error::Io(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sym(rows: Vec<Vec<f64>>) -> PyResult<spectral::SymMatrix> {
    spectral::SymMatrix::from_rows(&rows).map_err(py_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A problem `min f(x) + g(y)  s.t.  Ax + By = b`.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: ProblemInstance,
}

#[pymethods]
impl PyProblem {
    /// Generate a seeded instance: kind is "lasso", "qq" or "toy".
    #[staticmethod]
    #[pyo3(signature = (kind, n=None, rows=None, seed=42))]
    fn generate(kind: &str, n: Option<usize>, rows: Option<usize>, seed: u64) -> PyResult<Self> {
        let spec = match kind {
            "lasso" => GeneratorSpec::lasso(n.unwrap_or(200), rows.unwrap_or(100), seed),
            "qq" => GeneratorSpec::random_qq(n.unwrap_or(50), rows.unwrap_or(30), seed),
            "toy" => GeneratorSpec {
                kind: GeneratorKind::ScalarToy,
                seed,
            },
            other => return Err(PyValueError::new_err(format!("unknown generator '{other}'"))),
        };
        Ok(Self {
            inner: spec.generate().map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ProblemInstance::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// SHA-256 of the canonical JSON.
    fn fingerprint(&self) -> String {
        problems::fingerprint(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// `(primal, dual_x, dual_y)` infinity-norm KKT residuals.
    fn kkt_residual(&self, x: Vec<f64>, y: Vec<f64>, lam: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let w = PrimalDualPoint::new(DVector::from_vec(x), DVector::from_vec(y), DVector::from_vec(lam));
        let r = model::kkt_residual(&self.inner, &w).map_err(py_err)?;
        Ok((r.primal, r.dual_x, r.dual_y))
    }

    /// Reference solution `(x, y, lam)`.
    fn oracle_solve(&self) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let w = problems::oracle_solve(&self.inner).map_err(py_err)?;
        Ok((w.x.as_slice().to_vec(), w.y.as_slice().to_vec(), w.lambda.as_slice().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!("Problem(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

type Row5 = (f64, f64, f64, f64, f64);

/// Outcome of one solve with its certification.
#[pyclass(name = "SolveOutcome", frozen, get_all)]
struct PySolveOutcome {
    strategy: String,
    status: String,
    iterations: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    lam: Vec<f64>,
    kkt: (f64, f64, f64),
    certified: bool,
    worst_clause: String,
    worst_margin: f64,
    /// Per-iteration `(primal, dual_x, dual_y, Tk_min_eig, gamma)`.
    history: Vec<Row5>,
    certification_json: String,
    /// Per-iteration `(V, term1, gap, slack24, slack25)` when diagnostics ran.
    audit: Option<Vec<Row5>>,
}

#[pymethods]
impl PySolveOutcome {
    fn __repr__(&self) -> String {
        format!(
            "SolveOutcome(strategy={:?}, status={:?}, iterations={}, certified={})",
            self.strategy, self.status, self.iterations, self.certified
        )
    }
}

/// Solve with one strategy ("zero", "psd", "fixed-indef" or "bfgs").
#[pyfunction]
#[pyo3(signature = (
    problem, strategy="bfgs", beta=1.0, tau=0.8, delta=1e-4, c0=1.0, rho=0.5,
    r_factor=1.01, tol_primal=1e-6, tol_dual=1e-6, max_iter=50_000, diagnostics=false
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    strategy: &str,
    beta: f64,
    tau: f64,
    delta: f64,
    c0: f64,
    rho: f64,
    r_factor: f64,
    tol_primal: f64,
    tol_dual: f64,
    max_iter: usize,
    diagnostics: bool,
) -> PyResult<PySolveOutcome> {
    let kind = StrategyKind::parse(strategy).map_err(py_err)?;
    let p = &problem.inner;
    let sc = match kind {
        StrategyKind::Zero => Ok(StrategyConfig::Zero),
        StrategyKind::Psd => StrategyConfig::linearized_psd(p, beta, r_factor),
        StrategyKind::FixedIndef => StrategyConfig::fixed_indefinite(p, beta, tau, r_factor),
        StrategyKind::Bfgs => Ok(StrategyConfig::VariableBfgs {
            tau,
            delta: Delta::Relative(delta),
            schedule: CSchedule::Geometric { c0, rho },
        }),
    }
    .map_err(py_err)?;
    let c_const = conditions::default_c(&sc);
    let mut solver_cfg = SolverConfig::new(sc);
    solver_cfg.beta = beta;
    solver_cfg.tol_primal = tol_primal;
    solver_cfg.tol_dual = tol_dual;
    solver_cfg.max_iter = max_iter;
    solver_cfg.record_diagnostics = diagnostics;

    py.detach(|| -> Result<PySolveOutcome, Error> {
        let r = solver::solve(p, &solver_cfg)?;
        let cert = conditions::certify(p, &r.trace, c_const);
        let audit = if diagnostics {
            let ws = problems::oracle_solve(p)?;
            let a = diagnostics::audit(p, &r.trace, &ws, c_const)?;
            Some(a.rows.iter().map(|r| (r.v, r.term1, r.gap, r.slack24, r.slack25)).collect())
        } else {
            None
        };
        let status = format!("{:?}", r.status).to_lowercase();
        Ok(PySolveOutcome {
            strategy: kind.name().to_string(),
            status,
            iterations: r.iterations,
            x: r.w.x.as_slice().to_vec(),
            y: r.w.y.as_slice().to_vec(),
            lam: r.w.lambda.as_slice().to_vec(),
            kkt: (r.kkt.primal, r.kkt.dual_x, r.kkt.dual_y),
            certified: cert.summary.pass,
            worst_clause: cert.summary.worst_clause.clone(),
            worst_margin: cert.summary.worst_margin,
            history: r
                .records
                .iter()
                .map(|h| (h.kkt.primal, h.kkt.dual_x, h.kkt.dual_y, h.tk_min_eig, h.gamma))
                .collect(),
            certification_json: cert.to_json(),
            audit,
        })
    })
    .map_err(py_err)
}

/// Soft threshold `sign(v) max(|v| - kappa, 0)`.
#[pyfunction]
fn shrink(v: f64, kappa: f64) -> f64 {
    solver::shrink(v, kappa)
}

/// `c = 2 (tau - 3/4)`.
#[pyfunction]
fn choose_c(tau: f64) -> PyResult<f64> {
    conditions::choose_c(tau).map_err(py_err)
}

/// Direct BFGS update of `B` with the pair `(s, l)`.
#[pyfunction]
fn bfgs_update_b(b: Vec<Vec<f64>>, s: Vec<f64>, l: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let out = bfgs::bfgs_update_b(&sym(b)?, &DVector::from_vec(s), &DVector::from_vec(l)).map_err(py_err)?;
    Ok(rows(out.as_matrix()))
}

/// Inverse BFGS update of `H` with the pair `(s, l)`.
#[pyfunction]
fn bfgs_update_h(h: Vec<Vec<f64>>, s: Vec<f64>, l: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let out = bfgs::bfgs_update_h(&sym(h)?, &DVector::from_vec(s), &DVector::from_vec(l)).map_err(py_err)?;
    Ok(rows(out.as_matrix()))
}

/// Sorted eigenvalues of a symmetric matrix.
#[pyfunction]
fn eigenvalues(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    spectral::eigenvalues(&sym(m)?).map_err(py_err)
}

#[pymodule]
fn vmip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolveOutcome>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(shrink, m)?)?;
    m.add_function(wrap_pyfunction!(choose_c, m)?)?;
    m.add_function(wrap_pyfunction!(bfgs_update_b, m)?)?;
    m.add_function(wrap_pyfunction!(bfgs_update_h, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalues, m)?)?;
    Ok(())
}
