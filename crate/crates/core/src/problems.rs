//! Seeded instance generators, the reference solver and instance
//! fingerprints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{kkt_residual, FSpec, GSpec, PrimalDualPoint, ProblemInstance};
use crate::rng::Rng;
use crate::solver::{self, SolverConfig, Status};
use crate::spectral::SymMatrix;
use crate::strategies::StrategyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `min 1/2 ||Cz - d||^2 + mu ||z||_1` split as `x - y = 0`.
    Lasso {
        n: usize,
        m_rows: usize,
        density: f64,
        /// `None` selects `0.1 ||C^T d||_inf`.
        mu: Option<f64>,
        noise_sigma: f64,
    },
    /// Strongly convex quadratics in both blocks with `m` coupling rows.
    RandomQq { n: usize, m: usize, cond_target: f64 },
    /// `f = x^2/2`, `g = y^2/2`, `x + y = 2`.
    ScalarToy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn lasso(n: usize, m_rows: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Lasso {
                n,
                m_rows,
                density: 0.1,
                mu: None,
                noise_sigma: 0.01,
            },
            seed,
        }
    }

    pub fn random_qq(n: usize, m: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::RandomQq { n, m, cond_target: 10.0 },
            seed,
        }
    }

    pub fn scalar_toy() -> Self {
        Self {
            kind: GeneratorKind::ScalarToy,
            seed: 0,
        }
    }

    pub fn generate(&self) -> Result<ProblemInstance> {
        match &self.kind {
            GeneratorKind::Lasso { .. } => gen_lasso(self),
            GeneratorKind::RandomQq { .. } => gen_random_qq(self),
            GeneratorKind::ScalarToy => Ok(scalar_toy()),
        }
    }
}

/// Fraction of nonzero coordinates in the planted LASSO solution.
pub const LASSO_SUPPORT_FRACTION: f64 = 0.1;

/// Draw order: `C` row-major, one normal then one uniform per entry (the
/// entry is kept when the uniform is below `density`); the planted support
/// by a partial Fisher-Yates shuffle (one uniform per pick); the support
/// values (one normal each, in pick order); the noise (one normal per row).
pub fn gen_lasso(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    let GeneratorKind::Lasso {
        n,
        m_rows,
        density,
        mu,
        noise_sigma,
    } = spec.kind
    else {
        return Err(Error::Config("not a lasso spec".into()));
    };
    if n == 0 || m_rows == 0 {
        return Err(Error::Config("lasso dimensions must be positive".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density must lie in (0, 1], got {density}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be nonnegative, got {noise_sigma}")));
    }
    if let Some(mu) = mu {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {mu}")));
        }
    }

    let mut rng = Rng::seed(spec.seed);
    let mut c = DMatrix::zeros(m_rows, n);
    for i in 0..m_rows {
        for j in 0..n {
            let v = rng.normal();
            if rng.uniform() < density {
                c[(i, j)] = v;
            }
        }
    }
    let k = ((LASSO_SUPPORT_FRACTION * n as f64).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + ((rng.uniform() * (n - i) as f64) as usize).min(n - i - 1);
        idx.swap(i, j);
    }
    let mut z = DVector::zeros(n);
    for &i in &idx[..k] {
        z[i] = rng.normal();
    }
    let noise = rng.normal_vector(m_rows) * noise_sigma;
    let d = &c * &z + noise;

    let ctd = c.tr_mul(&d);
    let mu = match mu {
        Some(mu) => mu,
        None => 0.1 * ctd.amax(),
    };
    if !(mu > 0.0) {
        return Err(Error::Config("lasso data give mu = 0; supply mu explicitly".into()));
    }
    ProblemInstance::new(
        DMatrix::identity(n, n),
        -DMatrix::identity(n, n),
        DVector::zeros(n),
        FSpec::L1 { mu },
        GSpec::Quadratic {
            mbar: SymMatrix::gram(&c),
            q: -ctd,
        },
    )
}

/// Draw order: `P` then `Mbar` (each `Q diag Q^T` with eigenvalues
/// geometrically spaced on `[1, cond_target]`), then `A`, `B` (row-major
/// normals), `b`, `q_f`, `q_g`.
pub fn gen_random_qq(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    let GeneratorKind::RandomQq { n, m, cond_target } = spec.kind else {
        return Err(Error::Config("not a random_qq spec".into()));
    };
    if n == 0 || m == 0 {
        return Err(Error::Config("random_qq dimensions must be positive".into()));
    }
    if !(cond_target >= 1.0 && cond_target.is_finite()) {
        return Err(Error::Config(format!("cond_target must be >= 1, got {cond_target}")));
    }
    let mut rng = Rng::seed(spec.seed);
    let p = rng.spd(n, 1.0, cond_target);
    let mbar = rng.spd(n, 1.0, cond_target);
    let a = rng.normal_matrix(m, n);
    let b_mat = rng.normal_matrix(m, n);
    let b = rng.normal_vector(m);
    let qf = rng.normal_vector(n);
    let qg = rng.normal_vector(n);
    ProblemInstance::new(a, b_mat, b, FSpec::Quadratic { p, q: qf }, GSpec::Quadratic { mbar, q: qg })
}

pub fn scalar_toy() -> ProblemInstance {
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
    .expect("fixed toy data are valid")
}

/// Hex SHA-256 of the canonical JSON form.
pub fn fingerprint(p: &ProblemInstance) -> String {
    hex::encode(Sha256::digest(p.to_json().as_bytes()))
}

pub const ORACLE_TOL_QQ: f64 = 1e-12;
pub const ORACLE_TOL_L1: f64 = 1e-10;
const ORACLE_MAX_ITER: usize = 1_000_000;
const POLISH_EVERY: usize = 50;

/// High-accuracy reference solution.
///
/// Quadratic `f`: LU solve of the KKT system. `l1` `f`: ADMM with the zero
/// semidefinite proximal term; every few iterations the sign pattern of `x`
/// is frozen and the resulting linear KKT system is solved exactly, and the
/// candidate is accepted once it passes the residual test.
pub fn oracle_solve(p: &ProblemInstance) -> Result<PrimalDualPoint> {
    match p.f() {
        FSpec::Quadratic { .. } => {
            let w = kkt_solve(p, None)?;
            let r = kkt_residual(p, &w)?.max();
            if r <= ORACLE_TOL_QQ {
                Ok(w)
            } else {
                Err(Error::OracleFailure(format!("KKT solve residual {r:e}")))
            }
        }
        FSpec::L1 { .. } => oracle_l1(p),
    }
}

fn oracle_l1(p: &ProblemInstance) -> Result<PrimalDualPoint> {
    let n = p.n();
    let mut cfg = SolverConfig::new(StrategyConfig::FixedPsd {
        t: SymMatrix::zeros(n),
    });
    cfg.tol_primal = ORACLE_TOL_L1;
    cfg.tol_dual = ORACLE_TOL_L1;
    cfg.max_iter = POLISH_EVERY;
    let mut w = PrimalDualPoint::zeros(n, p.m());
    let mut done = 0;
    while done < ORACLE_MAX_ITER {
        cfg.initial = Some(w);
        let run = solver::solve(p, &cfg)?;
        if let Some(e) = run.error {
            return Err(Error::OracleFailure(format!("reference run aborted: {e}")));
        }
        w = run.w;
        if run.status == Status::Converged {
            return Ok(w);
        }
        done += run.iterations;
        if let Ok(cand) = kkt_solve(p, Some(&w.x)) {
            if kkt_residual(p, &cand)?.max() <= ORACLE_TOL_L1 {
                return Ok(cand);
            }
        }
    }
    Err(Error::OracleFailure(format!(
        "no {ORACLE_TOL_L1:e}-accurate point after {ORACLE_MAX_ITER} iterations"
    )))
}

/// Solves the KKT equations as a linear system. With `support = Some(x)`
/// the l1 term is linearized at the sign pattern of `x`: coordinates where
/// `x` is zero are fixed at zero and the rest satisfy
/// `mu sign(x_i) = (A^T lambda)_i`.
fn kkt_solve(p: &ProblemInstance, support: Option<&DVector<f64>>) -> Result<PrimalDualPoint> {
    let (n, m) = (p.n(), p.m());
    let GSpec::Quadratic { mbar, q: qg } = p.g();
    let free: Vec<usize> = match support {
        Some(x) => (0..n).filter(|&i| x[i] != 0.0).collect(),
        None => (0..n).collect(),
    };
    let nf = free.len();
    let dim = nf + n + m;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let (a, bm) = (p.a(), p.b_mat());

    // x rows: P x_F - A_F^T lambda = -q  (or  -A_F^T lambda = -mu sign).
    for (r, &i) in free.iter().enumerate() {
        match p.f() {
            FSpec::Quadratic { p: pm, q } => {
                for (c, &j) in free.iter().enumerate() {
                    k[(r, c)] = pm.get(i, j);
                }
                rhs[r] = -q[i];
            }
            FSpec::L1 { mu } => {
                let x = support.expect("l1 needs a sign pattern");
                rhs[r] = -mu * x[i].signum();
            }
        }
        for l in 0..m {
            k[(r, nf + n + l)] = -a[(l, i)];
        }
    }
    // y rows: Mbar y - B^T lambda = -q_g.
    for i in 0..n {
        for j in 0..n {
            k[(nf + i, nf + j)] = mbar.get(i, j);
        }
        for l in 0..m {
            k[(nf + i, nf + n + l)] = -bm[(l, i)];
        }
        rhs[nf + i] = -qg[i];
    }
    // Constraint rows: A_F x_F + B y = b.
    for l in 0..m {
        for (c, &j) in free.iter().enumerate() {
            k[(nf + n + l, c)] = a[(l, j)];
        }
        for j in 0..n {
            k[(nf + n + l, nf + j)] = bm[(l, j)];
        }
        rhs[nf + n + l] = p.rhs()[l];
    }

    let lu = k.clone().lu();
    let mut z = lu
        .solve(&rhs)
        .ok_or_else(|| Error::OracleFailure("singular KKT system".into()))?;
    let corr = lu
        .solve(&(&rhs - &k * &z))
        .ok_or_else(|| Error::OracleFailure("singular KKT system".into()))?;
    z += corr;
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::OracleFailure("KKT solve produced non-finite values".into()));
    }
    let mut x = DVector::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        x[i] = z[r];
    }
    Ok(PrimalDualPoint::new(
        x,
        z.rows(nf, n).into_owned(),
        z.rows(nf + n, m).into_owned(),
    ))
}
