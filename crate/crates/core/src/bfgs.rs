//! BFGS updates of a Hessian approximation, the damped convex-combination
//! update with a summable weight schedule, and the inflation bookkeeping that
//! goes with it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, Cholesky, SymMatrix};

/// Summable weights `c_k in [0, 1]` for the damped update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CSchedule {
    /// `c_k = c0 * rho^k`.
    Geometric { c0: f64, rho: f64 },
    /// `c_k = c0 / (k + 1)^2`.
    InverseSquare { c0: f64 },
    /// `c_k = c0` for `k < until`, zero afterwards.
    ConstantUntil { c0: f64, until: usize },
}

impl Default for CSchedule {
    fn default() -> Self {
        CSchedule::Geometric { c0: 1.0, rho: 0.5 }
    }
}

impl CSchedule {
    pub fn validate(&self) -> Result<()> {
        let c0 = match *self {
            CSchedule::Geometric { c0, rho } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::Config(format!("geometric ratio must lie in [0, 1), got {rho}")));
                }
                c0
            }
            CSchedule::InverseSquare { c0 } | CSchedule::ConstantUntil { c0, .. } => c0,
        };
        if !(0.0..=1.0).contains(&c0) {
            return Err(Error::Config(format!("c0 must lie in [0, 1], got {c0}")));
        }
        Ok(())
    }

    pub fn weight(&self, k: usize) -> f64 {
        match *self {
            CSchedule::Geometric { c0, rho } => c0 * rho.powi(k.min(i32::MAX as usize) as i32),
            CSchedule::InverseSquare { c0 } => {
                let d = (k as f64) + 1.0;
                c0 / (d * d)
            }
            CSchedule::ConstantUntil { c0, until } => {
                if k < until {
                    c0
                } else {
                    0.0
                }
            }
        }
    }

    /// Closed-form bound on `sum_k c_k`.
    pub fn sum_bound(&self) -> f64 {
        match *self {
            CSchedule::Geometric { c0, rho } => c0 / (1.0 - rho),
            CSchedule::InverseSquare { c0 } => c0 * std::f64::consts::PI.powi(2) / 6.0,
            CSchedule::ConstantUntil { c0, until } => c0 * until as f64,
        }
    }
}

fn check_step(s: &DVector<f64>, l: &DVector<f64>, n: usize) -> Result<f64> {
    if s.len() != n || l.len() != n {
        return Err(Error::Dimension(format!(
            "step vectors have lengths {} and {}, matrix is {n}x{n}",
            s.len(),
            l.len()
        )));
    }
    let ls = l.dot(s);
    if !(ls > 0.0) {
        return Err(Error::Curvature(format!("l^T s = {ls:e} is not positive")));
    }
    Ok(ls)
}

/// `M + alpha u u^T + beta v v^T`, built from the upper triangle so the
/// result is exactly symmetric.
fn rank_two(m: &DMatrix<f64>, alpha: f64, u: &DVector<f64>, beta: f64, v: &DVector<f64>) -> SymMatrix {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..n {
        for i in 0..=j {
            let e = m[(i, j)] + (alpha * u[i] * u[j] + beta * v[i] * v[j]);
            out[(i, j)] = e;
            out[(j, i)] = e;
        }
    }
    SymMatrix::symmetrized(out)
}

/// Direct BFGS update of a Hessian approximation:
/// `B + l l^T / (l^T s) - (Bs)(Bs)^T / (s^T B s)`.
pub fn bfgs_update_b(b: &SymMatrix, s: &DVector<f64>, l: &DVector<f64>) -> Result<SymMatrix> {
    let ls = check_step(s, l, b.dim())?;
    let bs = b.mul_vec(s);
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return Err(Error::Curvature(format!("s^T B s = {sbs:e} is not positive")));
    }
    Ok(rank_two(b.as_matrix(), 1.0 / ls, l, -1.0 / sbs, &bs))
}

/// Inverse BFGS update:
/// `(I - s l^T / s^T l) H (I - l s^T / s^T l) + s s^T / s^T l`.
pub fn bfgs_update_h(h: &SymMatrix, s: &DVector<f64>, l: &DVector<f64>) -> Result<SymMatrix> {
    let ls = check_step(s, l, h.dim())?;
    // Expanded: H - (s (Hl)^T + (Hl) s^T)/ls + (1 + l^T H l / ls) s s^T / ls
    let hl = h.mul_vec(l);
    let lhl = l.dot(&hl);
    let n = h.dim();
    let src = h.as_matrix();
    let mut out = src.clone();
    let coef = (1.0 + lhl / ls) / ls;
    for j in 0..n {
        for i in 0..=j {
            let e = src[(i, j)] - (s[i] * hl[j] + hl[i] * s[j]) / ls + coef * s[i] * s[j];
            out[(i, j)] = e;
            out[(j, i)] = e;
        }
    }
    Ok(SymMatrix::symmetrized(out))
}

/// Margin of `H <= tau1 M^{-1}`: `lambda_min(tau1 M^{-1} - H)`.
pub fn check_dominance(h: &SymMatrix, m: &SymMatrix, tau1: f64) -> Result<f64> {
    if h.dim() != m.dim() {
        return Err(Error::Dimension("H and M differ in size".into()));
    }
    let chol = Cholesky::factor(m)?;
    let n = m.dim();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = chol.solve(&DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }));
        inv.set_column(j, &col);
    }
    let inv = SymMatrix::symmetrized(inv);
    spectral::min_eigenvalue(&inv.scale(tau1).sub(h))
}

/// Spectral norm of the BFGS correction `l l^T / (l^T s) - (Bs)(Bs)^T / (s^T B s)`
/// from the 2x2 eigenproblem of its range, without forming the matrix.
pub fn correction_norm(ls: f64, l: &DVector<f64>, sbs: f64, bs: &DVector<f64>) -> f64 {
    // D = a a^T - c c^T with a = l / sqrt(ls), c = Bs / sqrt(sbs); its
    // nonzero eigenvalues are those of [[a.a, a.c], [-a.c, -c.c]].
    let aa = l.norm_squared() / ls;
    let cc = bs.norm_squared() / sbs;
    let ac = l.dot(bs) / (ls * sbs).sqrt();
    let half_trace = 0.5 * (aa - cc);
    let det = ac * ac - aa * cc;
    let disc = (half_trace * half_trace - det).max(0.0).sqrt();
    (half_trace + disc).abs().max((half_trace - disc).abs())
}

/// What a single damped update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedStep {
    /// Weight `c_k` consumed by this iteration.
    pub c: f64,
    /// False when the step was numerically zero and `B` was left unchanged.
    pub updated: bool,
    /// `||B^BFGS - B||` for this step (zero when skipped).
    pub correction_norm: f64,
}

/// State of the damped BFGS approximation of `M^delta = M + delta I`.
#[derive(Debug, Clone)]
pub struct BfgsState {
    b: SymMatrix,
    m: SymMatrix,
    m_delta: SymMatrix,
    delta: f64,
    tau: f64,
    k: usize,
    q: f64,
    last_c: f64,
    schedule: CSchedule,
}

impl BfgsState {
    /// Starts from `B_0 = xi I` with `xi = tau * lambda_max(M^delta)`.
    pub fn new(m: SymMatrix, tau: f64, delta: f64, schedule: CSchedule) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        schedule.validate()?;
        let m_delta = m.add_diagonal(delta);
        let xi = tau * spectral::max_eigenvalue(&m_delta)?;
        let b = SymMatrix::scaled_identity(m.dim(), xi);
        Self::with_initial(m, b, tau, delta, schedule)
    }

    /// Starts from a caller-supplied `B_0`, which must dominate `tau M^delta`.
    pub fn with_initial(m: SymMatrix, b0: SymMatrix, tau: f64, delta: f64, schedule: CSchedule) -> Result<Self> {
        if b0.dim() != m.dim() {
            return Err(Error::Dimension("B_0 and M differ in size".into()));
        }
        let m_delta = m.add_diagonal(delta);
        let margin = spectral::min_eigenvalue(&b0.sub(&m_delta.scale(tau)))?;
        if margin < -1e-8 {
            return Err(Error::Config(format!(
                "B_0 must dominate tau * M^delta (margin {margin:e})"
            )));
        }
        Ok(Self {
            b: b0,
            m,
            m_delta,
            delta,
            tau,
            k: 0,
            q: 0.0,
            last_c: 0.0,
            schedule,
        })
    }

    pub fn b(&self) -> &SymMatrix {
        &self.b
    }

    pub fn m(&self) -> &SymMatrix {
        &self.m
    }

    pub fn m_delta(&self) -> &SymMatrix {
        &self.m_delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of damped updates consumed so far.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Running maximum of `||B^BFGS_{k+1} - B_k||`.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn schedule(&self) -> &CSchedule {
        &self.schedule
    }

    /// `gamma_k = Q c_k / (tau delta)` for the most recent update; zero
    /// before the first one.
    pub fn gamma(&self) -> f64 {
        self.q * self.last_c / (self.tau * self.delta)
    }

    /// `lambda_min(B_k - tau M^delta)`.
    pub fn dominance_margin(&self) -> Result<f64> {
        spectral::min_eigenvalue(&self.b.sub(&self.m_delta.scale(self.tau)))
    }

    /// `B_{k+1} = B_k + c_k (B^BFGS_{k+1} - B_k)` with `l = M^delta s`.
    ///
    /// A step with `||s|| <= 1e-14 (1 + reference_norm)` leaves `B` unchanged
    /// but still consumes `c_k`.
    pub fn damped_update(&mut self, s: &DVector<f64>, reference_norm: f64) -> Result<DampedStep> {
        let n = self.b.dim();
        if s.len() != n {
            return Err(Error::Dimension(format!("step has length {}, expected {n}", s.len())));
        }
        let c = self.schedule.weight(self.k);
        self.k += 1;
        self.last_c = c;
        if s.norm() <= 1e-14 * (1.0 + reference_norm) {
            return Ok(DampedStep {
                c,
                updated: false,
                correction_norm: 0.0,
            });
        }
        let l = self.m_delta.mul_vec(s);
        let ls = check_step(s, &l, n)?;
        let bs = self.b.mul_vec(s);
        let sbs = s.dot(&bs);
        if !(sbs > 0.0) {
            return Err(Error::Curvature(format!(
                "s^T B s = {sbs:e}: B lost positive definiteness"
            )));
        }
        let norm = correction_norm(ls, &l, sbs, &bs);
        self.q = self.q.max(norm);
        if c > 0.0 {
            self.b = rank_two(self.b.as_matrix(), c / ls, &l, -c / sbs, &bs);
        }
        Ok(DampedStep {
            c,
            updated: true,
            correction_norm: norm,
        })
    }
}
