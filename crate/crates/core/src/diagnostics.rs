//! Per-iteration audit of the contraction argument: the Lyapunov value,
//! Term1, the two cross-term bounds and the inflated descent inequality.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditions::{build_aux, AuxMatrices};
use crate::error::{Error, Result};
use crate::model::{PrimalDualPoint, ProblemInstance};
use crate::solver::Trace;
use crate::spectral::{self, SymMatrix, PSD_TOL};

/// Relative tolerance of the Lyapunov checks.
pub const CONTRACTION_TOL: f64 = 1e-6;
/// Relative tolerance of the sign and cross-term checks.
pub const SLACK_TOL: f64 = 1e-8;

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// `||dx||^2_{S + Sigma_f / 2} + ||dy||^2_{Delta_k} + (c / beta) ||dl||^2`.
#[allow(clippy::too_many_arguments)]
pub fn term1(
    dx: &DVector<f64>,
    dy: &DVector<f64>,
    dl: &DVector<f64>,
    s: &SymMatrix,
    sigma_f: &SymMatrix,
    delta: &SymMatrix,
    beta: f64,
    c_const: f64,
) -> Result<f64> {
    check_len(dx, s.dim(), "x step")?;
    check_len(dy, delta.dim(), "y step")?;
    if sigma_f.dim() != s.dim() {
        return Err(Error::Dimension("S and Sigma_f differ in size".into()));
    }
    Ok(s.add_scaled(0.5, sigma_f).quad_form(dx) + delta.quad_form(dy) + c_const / beta * dl.norm_squared())
}

fn diff(a: &PrimalDualPoint, b: &PrimalDualPoint) -> PrimalDualPoint {
    PrimalDualPoint::new(&a.x - &b.x, &a.y - &b.y, &a.lambda - &b.lambda)
}

/// Left side of the contraction inequality:
/// `||w^k - w*||^2_G + 1/2 ||y^{k-1} - y^k||^2_{Gamma_{k-1}}
///  - ||w^{k+1} - w*||^2_G - 1/2 ||y^{k+1} - y^k||^2_{Gamma_k}`,
/// with the same `G = G_k` in both `w` terms.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_gap(
    w_k: &PrimalDualPoint,
    w_k1: &PrimalDualPoint,
    w_star: &PrimalDualPoint,
    y_prev: &DVector<f64>,
    g_k: &AuxMatrices,
    gamma_prev: &SymMatrix,
    gamma_k: &SymMatrix,
) -> Result<f64> {
    let n = g_k.g_y.dim();
    for w in [w_k, w_k1, w_star] {
        check_len(&w.x, n, "x")?;
        check_len(&w.y, n, "y")?;
        check_len(&w.lambda, g_k.m, "lambda")?;
    }
    check_len(y_prev, n, "y^{k-1}")?;
    if gamma_prev.dim() != n || gamma_k.dim() != n {
        return Err(Error::Dimension("Gamma matrices disagree with y".into()));
    }
    let before = g_k.g_norm_sq(&diff(w_k, w_star)) + 0.5 * gamma_prev.quad_form(&(y_prev - &w_k.y));
    let after = g_k.g_norm_sq(&diff(w_k1, w_star)) + 0.5 * gamma_k.quad_form(&(&w_k1.y - &w_k.y));
    Ok(before - after)
}

/// Slacks of the two upper bounds on `(B dy)^T (lambda^k - lambda^{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstermSlacks {
    pub lhs: f64,
    /// `1/2 ||y^{k-1} - y^k||^2_{Gamma_{k-1}} - 1/2 ||dy||^2_{Gamma_k}
    ///  - ||dy||^2_{Lambda_k} - lhs`.
    pub slack24: f64,
    /// `(1/4 + c/2) beta ||B dy||^2 + (1 - c) / beta ||dl||^2 - lhs`.
    pub slack25: f64,
    /// Magnitude of the terms involved, for relative tolerances.
    pub scale: f64,
}

/// `dy_prev = y^k - y^{k-1}`, `dy = y^{k+1} - y^k`,
/// `dl = lambda^{k+1} - lambda^k`.
#[allow(clippy::too_many_arguments)]
pub fn crossterm_bounds(
    dy_prev: &DVector<f64>,
    dy: &DVector<f64>,
    dl: &DVector<f64>,
    b: &DMatrix<f64>,
    gamma_prev: &SymMatrix,
    gamma_k: &SymMatrix,
    lambda_k: &SymMatrix,
    beta: f64,
    c_const: f64,
) -> Result<CrosstermSlacks> {
    let n = b.ncols();
    check_len(dy_prev, n, "previous y step")?;
    check_len(dy, n, "y step")?;
    check_len(dl, b.nrows(), "lambda step")?;
    if gamma_prev.dim() != n || gamma_k.dim() != n || lambda_k.dim() != n {
        return Err(Error::Dimension("Gamma/Lambda matrices disagree with B".into()));
    }
    let bdy = b * dy;
    let lhs = -bdy.dot(dl);
    let t24 = [
        0.5 * gamma_prev.quad_form(dy_prev),
        -0.5 * gamma_k.quad_form(dy),
        -lambda_k.quad_form(dy),
    ];
    let t25 = [
        (0.25 + 0.5 * c_const) * beta * bdy.norm_squared(),
        (1.0 - c_const) / beta * dl.norm_squared(),
    ];
    let scale = 1.0 + lhs.abs() + t24.iter().chain(t25.iter()).map(|v| v.abs()).sum::<f64>();
    Ok(CrosstermSlacks {
        lhs,
        slack24: t24.iter().sum::<f64>() - lhs,
        slack25: t25.iter().sum::<f64>() - lhs,
        scale,
    })
}

/// `1/2 a^T (M1 + M2) a + 1/2 b^T (M1 + M2) b - (a^T M1 b - a^T M2 b)` for
/// positive semidefinite `M1`, `M2`.
pub fn lemma_tech_check(a: &DVector<f64>, b: &DVector<f64>, m1: &SymMatrix, m2: &SymMatrix) -> Result<f64> {
    let n = m1.dim();
    check_len(a, n, "a")?;
    check_len(b, n, "b")?;
    if m2.dim() != n {
        return Err(Error::Dimension("M1 and M2 differ in size".into()));
    }
    for (name, m) in [("M1", m1), ("M2", m2)] {
        let check = spectral::is_psd(m, PSD_TOL)?;
        if !check.psd {
            return Err(Error::InvalidInput(format!(
                "{name} is not positive semidefinite (lambda_min = {:e})",
                check.margin
            )));
        }
    }
    let sum = m1.add(m2);
    let lhs = m1.bilinear(a, b) - m2.bilinear(a, b);
    Ok(0.5 * sum.quad_form(a) + 0.5 * sum.quad_form(b) - lhs)
}

/// One audited iteration `k` (the step `w^k -> w^{k+1}`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub k: usize,
    /// `V_k` measured with `G_k`.
    #[serde(rename = "V")]
    pub v: f64,
    pub term1: f64,
    /// Left side of the contraction inequality minus Term1.
    pub gap: f64,
    pub slack24: f64,
    pub slack25: f64,
    #[serde(rename = "Cs_partial")]
    pub cs_partial: f64,
    #[serde(rename = "Cp_partial")]
    pub cp_partial: f64,
    /// `gamma_k`.
    #[serde(skip)]
    pub gamma: f64,
    /// `V_{k+1}` measured with `G_{k+1}`.
    #[serde(skip)]
    pub v_next: f64,
    /// `||w^{k+1} - w^k||^2`.
    #[serde(skip)]
    pub step_sq: f64,
    #[serde(skip)]
    pub crossterm_scale: f64,
}

impl AuditRow {
    /// Nonnegative when `gap >= -1e-6 (1 + |V_k|)`.
    pub fn contraction_margin(&self) -> f64 {
        self.gap + CONTRACTION_TOL * (1.0 + self.v.abs())
    }

    /// Nonnegative when `term1 >= -1e-8 (1 + ||step||^2)`.
    pub fn term1_margin(&self) -> f64 {
        self.term1 + SLACK_TOL * (1.0 + self.step_sq)
    }

    /// Nonnegative when
    /// `V_{k+1} <= (1 + gamma_k) V_k - term1 + 1e-6 (1 + |V_k|)`.
    pub fn descent_margin(&self) -> f64 {
        (1.0 + self.gamma) * self.v - self.term1 + CONTRACTION_TOL * (1.0 + self.v.abs()) - self.v_next
    }

    pub fn slack24_margin(&self) -> f64 {
        self.slack24 + SLACK_TOL * self.crossterm_scale
    }

    pub fn slack25_margin(&self) -> f64 {
        self.slack25 + SLACK_TOL * self.crossterm_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub rows: Vec<AuditRow>,
    /// `V_0`.
    pub v0: f64,
    pub term1_sum: f64,
    /// `C_s = sum gamma_k`.
    pub cs: f64,
    /// `C_p = prod (1 + gamma_k)`.
    pub cp: f64,
}

impl ContractionTrace {
    /// Nonnegative when `sum term1 <= (1 + C_s C_p) V_0 (1 + 1e-6)`.
    pub fn summation_margin(&self) -> f64 {
        (1.0 + self.cs * self.cp) * self.v0 * (1.0 + CONTRACTION_TOL) - self.term1_sum
    }

    /// Writes the CSV trace `k,V,term1,gap,slack24,slack25,Cs_partial,Cp_partial`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Audits a run recorded with diagnostics against a reference solution.
///
/// `y^{-1}` is taken to be `y^0` and `Gamma_{-1}` to be `Gamma_0`, so the
/// history term vanishes at `k = 0`.
pub fn audit(p: &ProblemInstance, trace: &Trace, w_star: &PrimalDualPoint, c_const: f64) -> Result<ContractionTrace> {
    let iters = &trace.iterates;
    if iters.len() != trace.terms.len() {
        return Err(Error::InvalidInput(
            "audit needs a trace recorded with diagnostics enabled".into(),
        ));
    }
    p.check_point(w_star)?;
    let beta = trace.beta;
    let aux_at = |k: usize| {
        let term = &trace.terms[k];
        build_aux(&trace.s, term, term.gamma, p.sigma_f(), p.sigma_g(), p.a(), p.b_mat(), beta, c_const)
    };

    let mut rows = Vec::with_capacity(iters.len().saturating_sub(1));
    let mut aux = if iters.is_empty() { None } else { Some(aux_at(0)?) };
    let mut gamma_prev_mat = aux.as_ref().map(|a| a.gamma.clone());
    let (mut cs, mut cp, mut term1_sum) = (0.0, 1.0, 0.0);
    let mut v0 = 0.0;

    for k in 0..iters.len().saturating_sub(1) {
        let cur = aux.take().expect("aux built for every k");
        let next = aux_at(k + 1)?;
        let gamma_prev = gamma_prev_mat.take().expect("set with aux");
        let (wk, wk1) = (&iters[k], &iters[k + 1]);
        let y_prev = if k == 0 { &wk.y } else { &iters[k - 1].y };

        let step = diff(wk1, wk);
        let t1 = term1(&step.x, &step.y, &step.lambda, &trace.s, p.sigma_f(), &cur.delta, beta, c_const)?;
        let v = cur.g_norm_sq(&diff(wk, w_star)) + 0.5 * gamma_prev.quad_form(&(y_prev - &wk.y));
        let lhs = lyapunov_gap(wk, wk1, w_star, y_prev, &cur, &gamma_prev, &cur.gamma)?;
        let v_next = next.g_norm_sq(&diff(wk1, w_star)) + 0.5 * cur.gamma.quad_form(&step.y);
        let cross = crossterm_bounds(
            &(&wk.y - y_prev),
            &step.y,
            &step.lambda,
            p.b_mat(),
            &gamma_prev,
            &cur.gamma,
            &cur.lambda,
            beta,
            c_const,
        )?;
        let gamma = trace.terms[k + 1].gamma;
        cs += gamma;
        cp *= 1.0 + gamma;
        term1_sum += t1;
        if k == 0 {
            v0 = v;
        }
        rows.push(AuditRow {
            k,
            v,
            term1: t1,
            gap: lhs - t1,
            slack24: cross.slack24,
            slack25: cross.slack25,
            cs_partial: cs,
            cp_partial: cp,
            gamma,
            v_next,
            step_sq: step.x.norm_squared() + step.y.norm_squared() + step.lambda.norm_squared(),
            crossterm_scale: cross.scale,
        });
        gamma_prev_mat = Some(cur.gamma.clone());
        aux = Some(next);
    }

    Ok(ContractionTrace {
        rows,
        v0,
        term1_sum,
        cs,
        cp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn term1_examples() {
        let z2 = SymMatrix::zeros(2);
        let zero = term1(&v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0]), &z2, &z2, &SymMatrix::identity(2), 1.0, 0.1);
        assert_eq!(zero.unwrap(), 0.0);
        let t = term1(
            &v(&[1.0, 0.0]),
            &v(&[0.0, 2.0]),
            &v(&[3.0]),
            &z2,
            &z2,
            &SymMatrix::identity(2),
            1.0,
            0.1,
        )
        .unwrap();
        assert!((t - 4.9).abs() < 1e-14);
    }

    #[test]
    fn term1_matches_explicit_sums() {
        let mut rng = Rng::seed(17);
        for _ in 0..20 {
            let n = 4;
            let s = rng.spd(n, 0.1, 2.0);
            let sf = rng.spd(n, 0.1, 2.0);
            let delta = SymMatrix::symmetrized(rng.normal_matrix(n, n));
            let (dx, dy, dl) = (rng.normal_vector(n), rng.normal_vector(n), rng.normal_vector(3));
            let (beta, c) = (1.7, 0.2);
            let mut want = 0.0;
            for i in 0..n {
                for j in 0..n {
                    want += dx[i] * (s.get(i, j) + 0.5 * sf.get(i, j)) * dx[j];
                    want += dy[i] * delta.get(i, j) * dy[j];
                }
            }
            want += c / beta * dl.iter().map(|x| x * x).sum::<f64>();
            let got = term1(&dx, &dy, &dl, &s, &sf, &delta, beta, c).unwrap();
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn crossterm_examples() {
        let b = DMatrix::identity(2, 2);
        let z = SymMatrix::zeros(2);
        let zero = v(&[0.0, 0.0]);
        let r = crossterm_bounds(&zero, &zero, &zero, &b, &z, &z, &z, 1.0, 0.1).unwrap();
        assert_eq!((r.slack24, r.slack25), (0.0, 0.0));
        let dy = v(&[1.0, -2.0]);
        let r = crossterm_bounds(&zero, &dy, &zero, &b, &z, &z, &z, 2.0, 0.1).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!((r.slack25 - 0.3 * 2.0 * 5.0).abs() < 1e-14);
    }

    #[test]
    fn lemma_tech_examples() {
        let mut rng = Rng::seed(2);
        let m1 = rng.spd(3, 0.5, 2.0);
        let a = rng.normal_vector(3);
        let s = lemma_tech_check(&a, &a, &m1, &m1).unwrap();
        assert!((s - 2.0 * m1.quad_form(&a)).abs() < 1e-12);
        let m2 = rng.spd(3, 0.5, 2.0);
        let s = lemma_tech_check(&a, &(-&a), &SymMatrix::zeros(3), &m2).unwrap();
        assert!(s.abs() < 1e-12);
        let bad = SymMatrix::from_diagonal(&[1.0, -1.0, 0.0]);
        assert!(matches!(lemma_tech_check(&a, &a, &bad, &m2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn stationary_gap_is_zero() {
        let p = crate::problems::scalar_toy();
        let term = crate::strategies::Strategy::init(&crate::StrategyConfig::Zero, &p, 1.0)
            .unwrap()
            .current()
            .clone();
        let z = SymMatrix::zeros(1);
        let aux = build_aux(&z, &term, 0.0, p.sigma_f(), p.sigma_g(), p.a(), p.b_mat(), 1.0, 0.1).unwrap();
        let w = PrimalDualPoint::new(v(&[1.0]), v(&[1.0]), v(&[1.0]));
        let g = lyapunov_gap(&w, &w, &w, &w.y, &aux, &aux.gamma, &aux.gamma).unwrap();
        assert_eq!(g, 0.0);
    }
}
