//! The VMIP-ADMM iteration: x-subproblem, y-subproblem with proximal term
//! `T_k`, multiplier update, and KKT-based stopping.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{kkt_residual, FSpec, GSpec, KktResidual, PrimalDualPoint, ProblemInstance};
use crate::spectral::{self, Cholesky, SymMatrix};
use crate::strategies::{ProximalTerm, Strategy, StrategyConfig, TermMatrices};

/// Soft threshold `sign(v) max(|v| - kappa, 0)`.
pub fn shrink(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Which difference feeds the BFGS secant pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Secant {
    #[default]
    Y,
    X,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub beta: f64,
    /// x-side proximal matrix; `None` picks [`default_s`].
    pub s: Option<SymMatrix>,
    pub strategy: StrategyConfig,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Keep every iterate so the run can be audited afterwards.
    pub record_diagnostics: bool,
    pub secant: Secant,
    /// Starting point; zero when `None`.
    pub initial: Option<PrimalDualPoint>,
}

impl SolverConfig {
    pub fn new(strategy: StrategyConfig) -> Self {
        Self {
            beta: 1.0,
            s: None,
            strategy,
            max_iter: 50_000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            record_diagnostics: false,
            secant: Secant::Y,
            initial: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// `S = 0` when the x-block is already strongly convex, otherwise
/// `sigma I` with `sigma = 1e-6 (1 + beta ||A^T A||)`.
pub fn default_s(p: &ProblemInstance, beta: f64) -> Result<SymMatrix> {
    let n = p.n();
    let ata = p.ata().scale(beta);
    let base = match p.f() {
        FSpec::L1 { .. } => ata.clone(),
        FSpec::Quadratic { p: pm, .. } => pm.add(&ata),
    };
    let norm = spectral::spectral_norm(&ata)?;
    let floor = 1e-12 * (1.0 + spectral::spectral_norm(&base)?);
    if spectral::min_eigenvalue(&base)? > floor {
        Ok(SymMatrix::zeros(n))
    } else {
        Ok(SymMatrix::scaled_identity(n, 1e-6 * (1.0 + norm)))
    }
}

/// Factored x-subproblem.
#[derive(Debug, Clone)]
enum XSolver {
    /// Diagonal of `beta A^T A + S` for the l1 prox.
    Shrink { d: DVector<f64>, mu: f64 },
    Linear { chol: Cholesky, q: DVector<f64> },
}

impl XSolver {
    fn new(p: &ProblemInstance, beta: f64, s: &SymMatrix) -> Result<Self> {
        let base = p.ata().scale(beta).add(s);
        match p.f() {
            FSpec::L1 { mu } => {
                if !base.is_diagonal(0.0) {
                    return Err(Error::UnsupportedStructure(
                        "l1 x-update needs beta A^T A + S to be diagonal".into(),
                    ));
                }
                let d = base.diagonal();
                if let Some((i, &v)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                    return Err(Error::NotSpd { pivot: i, value: v });
                }
                Ok(XSolver::Shrink { d, mu: *mu })
            }
            FSpec::Quadratic { p: pm, q } => Ok(XSolver::Linear {
                chol: Cholesky::factor(&pm.add(&base))?,
                q: q.clone(),
            }),
        }
    }

    fn solve(&self, p: &ProblemInstance, w: &PrimalDualPoint, beta: f64, s: &SymMatrix) -> DVector<f64> {
        let by_b = p.b_mat() * &w.y - p.rhs();
        let mut rhs = p.a().tr_mul(&(&w.lambda - by_b * beta));
        rhs += s.mul_vec(&w.x);
        match self {
            XSolver::Shrink { d, mu } => DVector::from_iterator(
                rhs.len(),
                rhs.iter().zip(d.iter()).map(|(&r, &di)| shrink(r / di, mu / di)),
            ),
            XSolver::Linear { chol, q } => chol.solve(&(rhs - q)),
        }
    }
}

/// `argmin_x L_beta(x, y^k, lambda^k) + 1/2 ||x - x^k||_S^2`.
pub fn x_update(p: &ProblemInstance, w: &PrimalDualPoint, beta: f64, s: &SymMatrix) -> Result<DVector<f64>> {
    p.check_point(w)?;
    check_square(s, p.n(), "S")?;
    Ok(XSolver::new(p, beta, s)?.solve(p, w, beta, s))
}

fn y_coefficient(p: &ProblemInstance, beta: f64, t: &SymMatrix) -> SymMatrix {
    p.g().hessian().add_scaled(beta, &p.btb()).add(t)
}

fn y_rhs(p: &ProblemInstance, x1: &DVector<f64>, w: &PrimalDualPoint, beta: f64, t: &SymMatrix) -> DVector<f64> {
    let ax_b = p.a() * x1 - p.rhs();
    let GSpec::Quadratic { q, .. } = p.g();
    p.b_mat().tr_mul(&(&w.lambda - ax_b * beta)) + t.mul_vec(&w.y) - q
}

/// `argmin_y L_beta(x^{k+1}, y, lambda^k) + 1/2 ||y - y^k||_{T_k}^2`.
pub fn y_update(
    p: &ProblemInstance,
    x1: &DVector<f64>,
    w: &PrimalDualPoint,
    beta: f64,
    term: &ProximalTerm,
) -> Result<DVector<f64>> {
    p.check_point(w)?;
    if x1.len() != p.n() {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x1.len(), p.n())));
    }
    check_square(term.t(), p.n(), "T")?;
    let chol = Cholesky::factor(&y_coefficient(p, beta, term.t()))?;
    Ok(chol.solve(&y_rhs(p, x1, w, beta, term.t())))
}

/// `lambda^k - beta (A x^{k+1} + B y^{k+1} - b)`.
pub fn lambda_update(
    p: &ProblemInstance,
    lambda: &DVector<f64>,
    x1: &DVector<f64>,
    y1: &DVector<f64>,
    beta: f64,
) -> DVector<f64> {
    lambda - p.constraint_residual(x1, y1) * beta
}

fn check_square(m: &SymMatrix, n: usize, name: &str) -> Result<()> {
    if m.dim() != n {
        return Err(Error::Dimension(format!("{name} is {0}x{0}, expected {n}x{n}", m.dim())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    NotSpd,
    Diverged,
}

/// Summary of iteration `k`, which maps `w^k` to `w^{k+1}` using `T_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Residuals at `w^{k+1}`.
    pub kkt: KktResidual,
    pub tk_min_eig: f64,
    pub tk_max_eig: f64,
    /// `gamma_k`, produced together with `T_{k+1}`.
    pub gamma: f64,
}

/// Everything the certifier and auditor need from a run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub s: SymMatrix,
    pub beta: f64,
    /// `T_0 .. T_K`; consecutive entries share storage when unchanged.
    pub terms: Vec<ProximalTerm>,
    /// `w^0 .. w^K`, present when diagnostics were requested.
    pub iterates: Vec<PrimalDualPoint>,
    pub strategy: StrategyConfig,
    pub bfgs: Option<BfgsInfo>,
}

/// Parameters of a BFGS run needed to interpret its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsInfo {
    pub tau: f64,
    pub delta: f64,
    /// Final running maximum `Q` of the correction norms.
    pub q: f64,
    /// Upper bound on the sum of the damping weights.
    pub c_sum_bound: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub w: PrimalDualPoint,
    pub status: Status,
    pub iterations: usize,
    pub kkt: KktResidual,
    pub records: Vec<IterationRecord>,
    pub trace: Trace,
    /// Final multiplier step `||lambda^K - lambda^{K-1}||_inf`.
    pub last_lambda_step: f64,
    /// Set when the run aborted.
    pub error: Option<Error>,
}

/// Cholesky of the y-coefficient, refactored only when `T_k` changes.
struct YSolver {
    cached: Option<(Arc<TermMatrices>, Cholesky)>,
}

impl YSolver {
    fn solve(
        &mut self,
        p: &ProblemInstance,
        x1: &DVector<f64>,
        w: &PrimalDualPoint,
        beta: f64,
        term: &ProximalTerm,
    ) -> Result<DVector<f64>> {
        let fresh = match &self.cached {
            Some((mats, _)) => !Arc::ptr_eq(mats, &term.mats),
            None => true,
        };
        if fresh {
            let chol = Cholesky::factor(&y_coefficient(p, beta, term.t()))?;
            self.cached = Some((Arc::clone(&term.mats), chol));
        }
        let (_, chol) = self.cached.as_ref().expect("factor cached above");
        Ok(chol.solve(&y_rhs(p, x1, w, beta, term.t())))
    }
}

const DIVERGENCE_BOUND: f64 = 1e100;

pub fn solve(p: &ProblemInstance, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let beta = cfg.beta;
    let n = p.n();
    let s = match &cfg.s {
        Some(s) => {
            check_square(s, n, "S")?;
            s.clone()
        }
        None => default_s(p, beta)?,
    };
    let mut strategy = Strategy::init(&cfg.strategy, p, beta)?;
    let xs = XSolver::new(p, beta, &s)?;
    let mut ys = YSolver { cached: None };
    let mut w = cfg.initial.clone().unwrap_or_else(|| PrimalDualPoint::zeros(n, p.m()));
    p.check_point(&w)?;

    let mut trace = Trace {
        s: s.clone(),
        beta,
        terms: vec![strategy.current().clone()],
        iterates: Vec::new(),
        strategy: cfg.strategy.clone(),
        bfgs: None,
    };
    if cfg.record_diagnostics {
        trace.iterates.push(w.clone());
    }
    let mut records = Vec::new();
    let mut kkt = kkt_residual(p, &w)?;
    let mut last_lambda_step = 0.0;
    let mut eig_cache: Option<(Arc<TermMatrices>, f64, f64)> = None;

    let done = |r: &KktResidual| r.primal <= cfg.tol_primal && r.dual() <= cfg.tol_dual;
    let mut status = if done(&kkt) { Status::Converged } else { Status::MaxIter };
    let mut error = None;
    let mut k = 0;

    while status != Status::Converged && k < cfg.max_iter {
        let term = strategy.current().clone();
        let step = (|| -> Result<PrimalDualPoint> {
            let x1 = xs.solve(p, &w, beta, &s);
            let y1 = ys.solve(p, &x1, &w, beta, &term)?;
            let l1 = lambda_update(p, &w.lambda, &x1, &y1, beta);
            Ok(PrimalDualPoint::new(x1, y1, l1))
        })();
        let next = match step {
            Ok(next) if next.is_finite() && next.u().amax() < DIVERGENCE_BOUND => next,
            Ok(_) => {
                status = Status::Diverged;
                error = Some(Error::InvalidInput(format!("iterates blew up at k = {k}")));
                break;
            }
            Err(e) => {
                status = if matches!(e, Error::NotSpd { .. }) { Status::NotSpd } else { Status::Diverged };
                error = Some(e);
                break;
            }
        };

        let (tk_min, tk_max) = match &eig_cache {
            Some((mats, lo, hi)) if Arc::ptr_eq(mats, &term.mats) => (*lo, *hi),
            _ => {
                let (lo, hi) = spectral::eigen_range(term.t())?;
                eig_cache = Some((Arc::clone(&term.mats), lo, hi));
                (lo, hi)
            }
        };

        let sec = match cfg.secant {
            Secant::Y => &next.y - &w.y,
            Secant::X => &next.x - &w.x,
        };
        let reference = match cfg.secant {
            Secant::Y => next.y.norm().max(w.y.norm()),
            Secant::X => next.x.norm().max(w.x.norm()),
        };
        let new_term = match strategy.next_term(&sec, reference) {
            Ok(t) => t,
            Err(e) => {
                status = Status::Diverged;
                error = Some(e);
                break;
            }
        };

        last_lambda_step = (&next.lambda - &w.lambda).amax();
        kkt = kkt_residual(p, &next)?;
        records.push(IterationRecord {
            k,
            kkt,
            tk_min_eig: tk_min,
            tk_max_eig: tk_max,
            gamma: new_term.gamma,
        });
        trace.terms.push(new_term);
        if cfg.record_diagnostics {
            trace.iterates.push(next.clone());
        }
        w = next;
        k += 1;
        if done(&kkt) {
            status = Status::Converged;
        }
    }

    trace.bfgs = strategy.bfgs().map(|b| BfgsInfo {
        tau: b.tau(),
        delta: b.delta(),
        q: b.q(),
        c_sum_bound: b.schedule().sum_bound(),
    });
    Ok(SolveResult {
        w,
        status,
        iterations: k,
        kkt,
        records,
        trace,
        last_lambda_step,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use nalgebra::DMatrix;

    fn toy_l1() -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            FSpec::L1 { mu: 1.0 },
            GSpec::Quadratic {
                mbar: SymMatrix::identity(1),
                q: DVector::zeros(1),
            },
        )
        .unwrap()
    }

    fn scalar_qq() -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 2.0),
            FSpec::Quadratic {
                p: SymMatrix::identity(1),
                q: DVector::zeros(1),
            },
            GSpec::Quadratic {
                mbar: SymMatrix::identity(1),
                q: DVector::zeros(1),
            },
        )
        .unwrap()
    }

    fn point(x: f64, y: f64, l: f64) -> PrimalDualPoint {
        PrimalDualPoint::new(DVector::from_element(1, x), DVector::from_element(1, y), DVector::from_element(1, l))
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(0.5, 1.0), 0.0);
        assert_eq!(shrink(3.0, 1.0), 2.0);
        assert_eq!(shrink(-3.0, 1.0), -2.0);
    }

    #[test]
    fn scalar_l1_x_update() {
        let p = toy_l1();
        let x = x_update(&p, &point(0.0, 3.0, 0.0), 1.0, &SymMatrix::zeros(1)).unwrap();
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn l1_needs_diagonal_structure() {
        let p = ProblemInstance::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            -DMatrix::identity(2, 2),
            DVector::zeros(2),
            FSpec::L1 { mu: 1.0 },
            GSpec::Quadratic {
                mbar: SymMatrix::identity(2),
                q: DVector::zeros(2),
            },
        )
        .unwrap();
        let w = PrimalDualPoint::zeros(2, 2);
        assert!(matches!(
            x_update(&p, &w, 1.0, &SymMatrix::zeros(2)),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn scalar_y_update() {
        let p = toy_l1();
        let term = Strategy::init(&StrategyConfig::Zero, &p, 1.0).unwrap().current().clone();
        let y = y_update(&p, &DVector::from_element(1, 2.0), &point(0.0, 0.0, 0.0), 1.0, &term).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn y_update_reports_not_spd() {
        let p = toy_l1();
        let cfg = StrategyConfig::FixedPsd {
            t: SymMatrix::zeros(1),
        };
        let mut term = Strategy::init(&cfg, &p, 1.0).unwrap().current().clone();
        term.mats = Arc::new(TermMatrices {
            t: SymMatrix::from_diagonal(&[-5.0]),
            t_plus: SymMatrix::zeros(1),
            t_minus: Arc::new(SymMatrix::from_diagonal(&[5.0])),
        });
        let r = y_update(&p, &DVector::zeros(1), &point(0.0, 0.0, 0.0), 1.0, &term);
        assert!(matches!(r, Err(Error::NotSpd { pivot: 0, .. })));
    }

    #[test]
    fn lambda_update_examples() {
        let p = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            FSpec::L1 { mu: 1.0 },
            GSpec::Quadratic {
                mbar: SymMatrix::zeros(2),
                q: DVector::zeros(2),
            },
        )
        .unwrap();
        let l = lambda_update(
            &p,
            &DVector::zeros(2),
            &DVector::from_vec(vec![1.0, -1.0]),
            &DVector::zeros(2),
            2.0,
        );
        assert_eq!(l.as_slice(), &[-2.0, 2.0]);
        let l0 = DVector::from_vec(vec![0.3, -0.7]);
        let l = lambda_update(&p, &l0, &DVector::zeros(2), &DVector::zeros(2), 2.0);
        assert_eq!(l, l0);
    }

    #[test]
    fn start_at_kkt_point_converges_immediately() {
        let p = scalar_qq();
        let mut cfg = SolverConfig::new(StrategyConfig::Zero);
        cfg.initial = Some(point(1.0, 1.0, 1.0));
        let r = solve(&p, &cfg).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn scalar_qq_reaches_closed_form() {
        let p = scalar_qq();
        for cfg in [
            StrategyConfig::Zero,
            StrategyConfig::fixed_indefinite(&p, 1.0, 0.8, 1.01).unwrap(),
        ] {
            let mut sc = SolverConfig::new(cfg);
            sc.tol_primal = 1e-12;
            sc.tol_dual = 1e-12;
            let r = solve(&p, &sc).unwrap();
            assert_eq!(r.status, Status::Converged);
            assert!(r.w.max_abs_diff(&point(1.0, 1.0, 1.0)) < 1e-8);
        }
    }

    #[test]
    fn fixed_point_of_subproblems() {
        let p = scalar_qq();
        let w = point(1.0, 1.0, 1.0);
        let s = SymMatrix::scaled_identity(1, 0.5);
        let x = x_update(&p, &w, 1.0, &s).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
        let term = Strategy::init(&StrategyConfig::Zero, &p, 1.0).unwrap().current().clone();
        let y = y_update(&p, &x, &w, 1.0, &term).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bfgs_coefficient_is_bk() {
        let mut rng = Rng::seed(3);
        let n = 6;
        let mbar = rng.spd(n, 0.5, 5.0);
        let b = rng.normal_matrix(n, n);
        let p = ProblemInstance::new(
            DMatrix::identity(n, n),
            b,
            rng.normal_vector(n),
            FSpec::L1 { mu: 0.1 },
            GSpec::Quadratic {
                mbar,
                q: rng.normal_vector(n),
            },
        )
        .unwrap();
        let cfg = StrategyConfig::VariableBfgs {
            tau: 0.8,
            delta: crate::strategies::Delta::default(),
            schedule: crate::bfgs::CSchedule::default(),
        };
        let mut st = Strategy::init(&cfg, &p, 1.3).unwrap();
        for _ in 0..5 {
            st.next_term(&rng.normal_vector(n), 1.0).unwrap();
            let coeff = y_coefficient(&p, 1.3, st.current().t());
            assert!(coeff.max_abs_diff(st.bfgs().unwrap().b()) < 1e-12);
        }
    }

    #[test]
    fn default_s_rules() {
        let p = toy_l1();
        assert_eq!(default_s(&p, 1.0).unwrap().max_abs(), 0.0);
        let p = ProblemInstance::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::zeros(1),
            FSpec::L1 { mu: 1.0 },
            GSpec::Quadratic {
                mbar: SymMatrix::identity(2),
                q: DVector::zeros(2),
            },
        )
        .unwrap();
        let s = default_s(&p, 2.0).unwrap();
        assert!(s.max_abs_diff(&SymMatrix::scaled_identity(2, 3e-6)) < 1e-18);
    }
}
