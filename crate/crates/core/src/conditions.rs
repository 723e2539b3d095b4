//! Numerical certification of the convergence conditions (a)-(g) on `S` and
//! the proximal sequence, and the block matrices used by the contraction
//! analysis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PrimalDualPoint, ProblemInstance};
use crate::solver::Trace;
use crate::spectral::{self, EigenTracker, SymMatrix};
use crate::strategies::{ProximalTerm, StrategyConfig};

/// Allowed negativity for the semidefinite clauses.
pub const PSD_CLAUSE_TOL: f64 = 1e-8;
/// Required margin for the strict clauses (b) and (d).
pub const STRICT_CLAUSE_TOL: f64 = 1e-12;
/// Allowed entrywise error in `T_k = T_+^k - T_-`.
pub const DECOMPOSITION_TOL: f64 = 1e-12;
/// Drift budget of the lazily refreshed eigenvalue bounds.
const EIG_BUDGET: f64 = 1e-10;

/// `c = 2 (tau - 3/4)`.
pub fn choose_c(tau: f64) -> Result<f64> {
    if !(tau > 0.75 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0.75, 1), got {tau}")));
    }
    Ok(2.0 * (tau - 0.75))
}

/// `choose_c(tau)` for the tau-parameterized strategies, 0.1 otherwise
/// (including `tau = 1`).
pub fn default_c(strategy: &StrategyConfig) -> f64 {
    strategy.tau().and_then(|t| choose_c(t).ok()).unwrap_or(0.1)
}

/// Blocks of `P_k`, `D_k`, `G_k` together with `Gamma_k`, `Lambda_k` and
/// `Delta_k`.
#[derive(Debug, Clone)]
pub struct AuxMatrices {
    pub s: SymMatrix,
    pub t: SymMatrix,
    /// `S + Sigma_f`, block (1,1) of `G_k`.
    pub g_x: SymMatrix,
    /// `T_k + Sigma_g + beta B^T B`, block (2,2) of `G_k`.
    pub g_y: SymMatrix,
    pub beta: f64,
    pub m: usize,
    pub gamma: SymMatrix,
    pub lambda: SymMatrix,
    pub delta: SymMatrix,
}

#[allow(clippy::too_many_arguments)]
pub fn build_aux(
    s: &SymMatrix,
    term: &ProximalTerm,
    gamma_prev: f64,
    sigma_f: &SymMatrix,
    sigma_g: &SymMatrix,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    beta: f64,
    c_const: f64,
) -> Result<AuxMatrices> {
    let n = s.dim();
    if term.t().dim() != n || sigma_f.dim() != n || sigma_g.dim() != n || a.ncols() != n || b.ncols() != n {
        return Err(Error::Dimension("auxiliary matrix inputs disagree in size".into()));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension("A and B differ in row count".into()));
    }
    if !(c_const > 0.0 && c_const < 0.5) {
        return Err(Error::Config(format!("c must lie in (0, 0.5), got {c_const}")));
    }
    let btb = SymMatrix::gram(b).scale(beta);
    Ok(aux_from_parts(s, term, gamma_prev, sigma_f, sigma_g, &btb, b.nrows(), beta, c_const))
}

#[allow(clippy::too_many_arguments)]
fn aux_from_parts(
    s: &SymMatrix,
    term: &ProximalTerm,
    gamma_prev: f64,
    sigma_f: &SymMatrix,
    sigma_g: &SymMatrix,
    beta_btb: &SymMatrix,
    m: usize,
    beta: f64,
    c: f64,
) -> AuxMatrices {
    let t_plus = term.t_plus();
    let t_minus = term.t_minus();
    let lambda = t_plus
        .scale(-0.5 * gamma_prev)
        .add_scaled(-2.0, t_minus)
        .add(sigma_g);
    let delta = term
        .t()
        .add_scaled(1.5, sigma_g)
        .add_scaled(-0.5 * gamma_prev, t_plus)
        .add_scaled(-2.0, t_minus)
        .add_scaled(0.75 - 0.5 * c, beta_btb);
    AuxMatrices {
        s: s.clone(),
        t: term.t().clone(),
        g_x: s.add(sigma_f),
        g_y: term.t().add(sigma_g).add(beta_btb),
        beta,
        m,
        gamma: t_plus.add(t_minus),
        lambda,
        delta,
    }
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

impl AuxMatrices {
    /// `diag(S, T_k)`.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        block_diag(&[self.s.as_matrix(), self.t.as_matrix()])
    }

    /// `diag(S, T_k, I / beta)`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        let inv = DMatrix::identity(self.m, self.m) / self.beta;
        block_diag(&[self.s.as_matrix(), self.t.as_matrix(), &inv])
    }

    /// `diag(S + Sigma_f, T_k + Sigma_g + beta B^T B, I / beta)`.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        let inv = DMatrix::identity(self.m, self.m) / self.beta;
        block_diag(&[self.g_x.as_matrix(), self.g_y.as_matrix(), &inv])
    }

    /// `||v||^2_{G_k}` for `v = (x, y, lambda)`, evaluated blockwise.
    pub fn g_norm_sq(&self, v: &PrimalDualPoint) -> f64 {
        self.g_x.quad_form(&v.x) + self.g_y.quad_form(&v.y) + v.lambda.norm_squared() / self.beta
    }
}

/// Clause margins at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub k: usize,
    /// `lambda_min(S + Sigma_f / 2)`.
    pub a: f64,
    /// `lambda_min(S + Sigma_f + beta A^T A)`.
    pub b: f64,
    /// Largest entry of `|T_k - (T_+^k - T_-)|`.
    pub c: f64,
    /// `lambda_min(T_k + Sigma_g + beta B^T B)`.
    pub d: f64,
    /// `lambda_min((1 + gamma_k) T_+^k - T_+^{k+1})`.
    pub e_upper: Option<f64>,
    /// `lambda_min(T_+^{k+1} - T_+^k / (1 + gamma_k))`.
    pub e_lower: Option<f64>,
    /// `lambda_min((1 + gamma_k) G_y^k - G_y^{k+1})` with
    /// `G_y = T + Sigma_g + beta B^T B`.
    pub f: Option<f64>,
    /// `lambda_min(Delta_k)`.
    pub g: f64,
    /// `lambda_min(Gamma_k)`; informational.
    pub gamma_mat: f64,
    pub gamma: f64,
    pub gamma_partial_sum: f64,
    pub gamma_partial_product: f64,
    pub c_const: f64,
    pub pass: bool,
}

impl ConditionReport {
    /// `(clause, raw margin, slack against its threshold)`; negative slack
    /// fails.
    pub fn slacks(&self) -> Vec<(&'static str, f64, f64)> {
        let mut out = vec![
            ("a", self.a, self.a + PSD_CLAUSE_TOL),
            ("b", self.b, self.b - STRICT_CLAUSE_TOL),
            ("c", self.c, DECOMPOSITION_TOL - self.c),
            ("d", self.d, self.d - STRICT_CLAUSE_TOL),
        ];
        for (name, v) in [("e_upper", self.e_upper), ("e_lower", self.e_lower), ("f", self.f)] {
            if let Some(v) = v {
                out.push((name, v, v + PSD_CLAUSE_TOL));
            }
        }
        out.push(("g", self.g, self.g + PSD_CLAUSE_TOL));
        out
    }

    fn evaluate(&mut self) {
        self.pass = self.slacks().iter().all(|&(_, _, s)| s >= 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationSummary {
    pub pass: bool,
    pub worst_clause: String,
    pub worst_margin: f64,
    pub worst_k: usize,
    /// Number of iterations with at least one failing clause.
    pub failing_iterations: usize,
    pub gamma_sum: f64,
    pub gamma_product: f64,
    /// `Q sum(c_k) / (tau delta)` for BFGS runs.
    pub gamma_sum_bound: Option<f64>,
    pub c_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub reports: Vec<ConditionReport>,
    pub summary: CertificationSummary,
}

impl Certification {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }
}

fn lower(tracker: &mut EigenTracker, m: &SymMatrix) -> f64 {
    tracker.min(m).unwrap_or(f64::NAN)
}

/// Checks every clause at every recorded iteration.
///
/// Iteration-dependent eigenvalues come from lazily refreshed Weyl bounds,
/// so each reported margin is a lower bound within `1e-10` of the exact one.
pub fn certify(p: &ProblemInstance, trace: &Trace, c_const: f64) -> Certification {
    let beta = trace.beta;
    let s = &trace.s;
    let sigma_f = p.sigma_f();
    let sigma_g = p.sigma_g();
    let beta_btb = p.btb().scale(beta);
    let g_base = sigma_g.add(&beta_btb);
    let min_eig = |m: &SymMatrix| spectral::min_eigenvalue(m).unwrap_or(f64::NAN);
    let a_margin = min_eig(&s.add_scaled(0.5, sigma_f));
    let b_margin = min_eig(&s.add(sigma_f).add(&p.ata().scale(beta)));

    let mut trackers: Vec<EigenTracker> = (0..6).map(|_| EigenTracker::new(EIG_BUDGET)).collect();
    let iterations = trace.terms.len().saturating_sub(1).max(1);
    let mut reports = Vec::with_capacity(iterations);
    let (mut sum, mut product) = (0.0, 1.0);

    for k in 0..iterations.min(trace.terms.len()) {
        let term = &trace.terms[k];
        let next = trace.terms.get(k + 1);
        let gy = term.t().add(&g_base);
        let d = lower(&mut trackers[0], &gy);
        let aux = aux_from_parts(s, term, term.gamma, sigma_f, sigma_g, &beta_btb, p.m(), beta, c_const);
        let g = lower(&mut trackers[1], &aux.delta);
        let gamma_mat = lower(&mut trackers[2], &aux.gamma);

        let (mut e_upper, mut e_lower, mut f, mut gamma) = (None, None, None, 0.0);
        if let Some(next) = next {
            gamma = next.gamma;
            let scale = 1.0 + gamma;
            e_upper = Some(lower(&mut trackers[3], &term.t_plus().scale(scale).sub(next.t_plus())));
            e_lower = Some(lower(&mut trackers[4], &next.t_plus().add_scaled(-1.0 / scale, term.t_plus())));
            let gy_next = next.t().add(&g_base);
            f = Some(lower(&mut trackers[5], &gy.scale(scale).sub(&gy_next)));
            sum += gamma;
            product *= scale;
        }

        let mut report = ConditionReport {
            k,
            a: a_margin,
            b: b_margin,
            c: term.decomposition_error(),
            d,
            e_upper,
            e_lower,
            f,
            g,
            gamma_mat,
            gamma,
            gamma_partial_sum: sum,
            gamma_partial_product: product,
            c_const,
            pass: false,
        };
        report.evaluate();
        reports.push(report);
    }

    let summary = summarize(&reports, trace, c_const, sum, product);
    Certification { reports, summary }
}

fn summarize(reports: &[ConditionReport], trace: &Trace, c_const: f64, sum: f64, product: f64) -> CertificationSummary {
    let mut worst = ("none", f64::INFINITY, f64::INFINITY, 0);
    for r in reports {
        for (name, margin, slack) in r.slacks() {
            // NaN slack sorts as worst.
            if !(slack >= worst.2) {
                worst = (name, margin, slack, r.k);
            }
        }
    }
    CertificationSummary {
        pass: reports.iter().all(|r| r.pass),
        worst_clause: worst.0.to_string(),
        worst_margin: worst.1,
        worst_k: worst.3,
        failing_iterations: reports.iter().filter(|r| !r.pass).count(),
        gamma_sum: sum,
        gamma_product: product,
        gamma_sum_bound: trace.bfgs.map(|b| b.q * b.c_sum_bound / (b.tau * b.delta)),
        c_const,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfgs::CSchedule;
    use crate::model::{FSpec, GSpec};
    use crate::solver::{solve, SolverConfig};
    use crate::strategies::{Delta, Strategy};
    use nalgebra::DVector;

    fn scalar_problem(mbar: f64) -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            FSpec::L1 { mu: 1.0 },
            GSpec::Quadratic {
                mbar: SymMatrix::from_diagonal(&[mbar]),
                q: DVector::zeros(1),
            },
        )
        .unwrap()
    }

    #[test]
    fn choose_c_examples() {
        assert!((choose_c(0.8).unwrap() - 0.1).abs() < 1e-15);
        assert!((choose_c(0.9).unwrap() - 0.3).abs() < 1e-15);
        assert!(choose_c(0.75 + 1e-9).unwrap() < 1e-8);
        assert!(matches!(choose_c(0.75), Err(Error::Config(_))));
        assert!(matches!(choose_c(1.0), Err(Error::Config(_))));
    }

    #[test]
    fn all_zero_aux() {
        let p = scalar_problem(0.0);
        let term = Strategy::init(&StrategyConfig::Zero, &p, 1.0).unwrap().current().clone();
        let z = SymMatrix::zeros(1);
        let aux = build_aux(&z, &term, 0.0, &z, &z, &DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1), 1.0, 0.1).unwrap();
        let d = aux.d_matrix();
        assert_eq!(d, DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0])));
        assert_eq!(aux.gamma.max_abs(), 0.0);
        assert_eq!(aux.lambda.max_abs(), 0.0);
        assert_eq!(aux.delta.max_abs(), 0.0);
    }

    #[test]
    fn lambda_reduces_to_sigma_g() {
        let p = scalar_problem(2.0);
        let term = Strategy::init(&StrategyConfig::Zero, &p, 1.0).unwrap().current().clone();
        let z = SymMatrix::zeros(1);
        let sg = SymMatrix::from_diagonal(&[2.0]);
        let aux = build_aux(&z, &term, 0.0, &z, &sg, p.a(), p.b_mat(), 1.0, 0.1).unwrap();
        assert_eq!(aux.lambda, sg);
    }

    #[test]
    fn scalar_fixed_indefinite_delta() {
        let p = scalar_problem(0.0);
        let cfg = StrategyConfig::FixedIndefinite { tau: 0.8, r: 1.1 };
        let term = Strategy::init(&cfg, &p, 1.0).unwrap().current().clone();
        let z = SymMatrix::zeros(1);
        let aux = build_aux(&z, &term, 0.0, &z, &z, p.a(), p.b_mat(), 1.0, 0.1).unwrap();
        assert!((aux.delta.get(0, 0) - 0.18).abs() < 1e-14);
        let g = aux.g_matrix();
        assert!((g[(1, 1)] - 0.88).abs() < 1e-15 && g[(2, 2)] == 1.0);
    }

    #[test]
    fn block_structure() {
        let p = scalar_problem(1.0);
        let term = Strategy::init(&StrategyConfig::Zero, &p, 2.0).unwrap().current().clone();
        let s = SymMatrix::from_diagonal(&[0.5]);
        let aux = build_aux(&s, &term, 0.0, p.sigma_f(), p.sigma_g(), p.a(), p.b_mat(), 2.0, 0.1).unwrap();
        let pm = aux.p_matrix();
        assert_eq!((pm.nrows(), pm[(0, 0)], pm[(1, 1)]), (2, 0.5, 0.0));
        assert_eq!(aux.d_matrix()[(2, 2)], 0.5);
        assert_eq!(aux.g_matrix()[(1, 1)], 3.0);
        let v = PrimalDualPoint::new(DVector::from_element(1, 1.0), DVector::from_element(1, 2.0), DVector::from_element(1, 3.0));
        let dense = aux.g_matrix();
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((aux.g_norm_sq(&v) - u.dot(&(&dense * &u))).abs() < 1e-12);
    }

    #[test]
    fn build_aux_rejects_bad_input() {
        let p = scalar_problem(1.0);
        let term = Strategy::init(&StrategyConfig::Zero, &p, 1.0).unwrap().current().clone();
        let z = SymMatrix::zeros(1);
        assert!(matches!(
            build_aux(&z, &term, 0.0, &z, &z, p.a(), p.b_mat(), 1.0, 0.5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_aux(&SymMatrix::zeros(2), &term, 0.0, &z, &z, p.a(), p.b_mat(), 1.0, 0.1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_strategy_certifies() {
        let p = scalar_problem(0.0);
        let mut cfg = SolverConfig::new(StrategyConfig::Zero);
        cfg.initial = Some(PrimalDualPoint::new(
            DVector::from_element(1, 3.0),
            DVector::from_element(1, -1.0),
            DVector::zeros(1),
        ));
        let run = solve(&p, &cfg).unwrap();
        let cert = certify(&p, &run.trace, 0.1);
        assert!(cert.summary.pass, "{:?}", cert.summary);
        assert_eq!(cert.reports.len(), run.iterations);
    }

    #[test]
    fn fixed_indefinite_clause_g_matches_closed_form() {
        let p = scalar_problem(0.7);
        let (tau, beta, r) = (0.8, 1.0, 1.2);
        let cfg = StrategyConfig::FixedIndefinite { tau, r };
        let mut sc = SolverConfig::new(cfg.clone());
        sc.beta = beta;
        sc.initial = Some(PrimalDualPoint::new(
            DVector::from_element(1, 3.0),
            DVector::from_element(1, -1.0),
            DVector::zeros(1),
        ));
        let run = solve(&p, &sc).unwrap();
        let c = default_c(&cfg);
        let cert = certify(&p, &run.trace, c);
        let expected = tau * r - beta + 1.5 * 0.7 - 2.0 * (1.0 - tau) * beta + (0.75 - 0.5 * c) * beta;
        assert!((cert.reports[0].g - expected).abs() < 1e-12);
        assert!(cert.summary.pass);
    }

    #[test]
    fn bfgs_margins_on_random_instance() {
        let p = crate::problems::GeneratorSpec::random_qq(8, 5, 4).generate().unwrap();
        let cfg = StrategyConfig::VariableBfgs {
            tau: 0.8,
            delta: Delta::default(),
            schedule: CSchedule::default(),
        };
        let mut sc = SolverConfig::new(cfg.clone());
        sc.max_iter = 200;
        let run = solve(&p, &sc).unwrap();
        let cert = certify(&p, &run.trace, default_c(&cfg));
        let info = run.trace.bfgs.unwrap();
        for r in &cert.reports {
            assert!(r.c <= DECOMPOSITION_TOL);
            assert!(r.d >= info.tau * info.delta - 1e-8);
            for v in [r.e_upper, r.e_lower, r.f].into_iter().flatten() {
                assert!(v >= -PSD_CLAUSE_TOL, "k = {}: {v:e}", r.k);
            }
            assert!(r.gamma_mat >= -1e-10);
            assert!(r.gamma_partial_product <= r.gamma_partial_sum.exp() * (1.0 + 1e-12));
        }
        let bound = cert.summary.gamma_sum_bound.unwrap();
        assert!(cert.summary.gamma_sum <= bound * (1.0 + 1e-12));
    }
}
