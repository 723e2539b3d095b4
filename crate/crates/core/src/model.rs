//! Two-block problem `min f(x) + g(y)  s.t.  Ax + By = b`, its augmented
//! Lagrangian and KKT residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, dense_from_rows, dense_to_rows, SymMatrix};

/// The x-block objective.
#[derive(Debug, Clone, PartialEq)]
pub enum FSpec {
    /// `f(x) = mu * ||x||_1`.
    L1 { mu: f64 },
    /// `f(x) = 1/2 x^T P x + q^T x`.
    Quadratic { p: SymMatrix, q: DVector<f64> },
}

/// The y-block objective. Only convex quadratics are supported.
#[derive(Debug, Clone, PartialEq)]
pub enum GSpec {
    /// `g(y) = 1/2 y^T Mbar y + q^T y`.
    Quadratic { mbar: SymMatrix, q: DVector<f64> },
}

impl FSpec {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            FSpec::L1 { mu } => mu * x.lp_norm(1),
            FSpec::Quadratic { p, q } => 0.5 * p.quad_form(x) + q.dot(x),
        }
    }

    /// Monotonicity modulus of the subdifferential: zero for the l1 norm,
    /// the Hessian for a quadratic.
    pub fn modulus(&self, n: usize) -> SymMatrix {
        match self {
            FSpec::L1 { .. } => SymMatrix::zeros(n),
            FSpec::Quadratic { p, .. } => p.clone(),
        }
    }
}

impl GSpec {
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match self {
            GSpec::Quadratic { mbar, q } => 0.5 * mbar.quad_form(y) + q.dot(y),
        }
    }

    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            GSpec::Quadratic { mbar, q } => mbar.mul_vec(y) + q,
        }
    }

    pub fn hessian(&self) -> &SymMatrix {
        match self {
            GSpec::Quadratic { mbar, .. } => mbar,
        }
    }
}

/// A problem instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    a: DMatrix<f64>,
    b_mat: DMatrix<f64>,
    b: DVector<f64>,
    f: FSpec,
    g: GSpec,
    sigma_f: SymMatrix,
    sigma_g: SymMatrix,
}

impl ProblemInstance {
    pub fn new(a: DMatrix<f64>, b_mat: DMatrix<f64>, b: DVector<f64>, f: FSpec, g: GSpec) -> Result<Self> {
        let (m, n) = a.shape();
        if b_mat.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "A is {m}x{n} but B is {}x{}",
                b_mat.nrows(),
                b_mat.ncols()
            )));
        }
        if b.len() != m {
            return Err(Error::Dimension(format!("b has length {}, expected {m}", b.len())));
        }
        if a.iter().chain(b_mat.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite problem data".into()));
        }
        match &f {
            FSpec::L1 { mu } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::InvalidInput(format!("l1 weight must be positive, got {mu}")));
                }
            }
            FSpec::Quadratic { p, q } => {
                if p.dim() != n || q.len() != n {
                    return Err(Error::Dimension("f quadratic term does not match x dimension".into()));
                }
                require_psd(p, "P")?;
            }
        }
        match &g {
            GSpec::Quadratic { mbar, q } => {
                if mbar.dim() != n || q.len() != n {
                    return Err(Error::Dimension("g quadratic term does not match y dimension".into()));
                }
                require_psd(mbar, "Mbar")?;
            }
        }
        let sigma_f = f.modulus(n);
        let sigma_g = g.hessian().clone();
        Ok(Self {
            a,
            b_mat,
            b,
            f,
            g,
            sigma_f,
            sigma_g,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// The y-block constraint matrix `B`.
    pub fn b_mat(&self) -> &DMatrix<f64> {
        &self.b_mat
    }

    /// The right-hand side `b`.
    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn f(&self) -> &FSpec {
        &self.f
    }

    pub fn g(&self) -> &GSpec {
        &self.g
    }

    pub fn sigma_f(&self) -> &SymMatrix {
        &self.sigma_f
    }

    pub fn sigma_g(&self) -> &SymMatrix {
        &self.sigma_g
    }

    /// Number of constraint rows.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Dimension of each of x and y.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn ata(&self) -> SymMatrix {
        SymMatrix::gram(&self.a)
    }

    pub fn btb(&self) -> SymMatrix {
        SymMatrix::gram(&self.b_mat)
    }

    /// `Ax + By - b`.
    pub fn constraint_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b_mat * y - &self.b
    }

    pub fn objective(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.f.value(x) + self.g.value(y)
    }

    pub(crate) fn check_point(&self, w: &PrimalDualPoint) -> Result<()> {
        let (m, n) = (self.m(), self.n());
        if w.x.len() != n || w.y.len() != n || w.lambda.len() != m {
            return Err(Error::Dimension(format!(
                "point has dims (x {}, y {}, lambda {}), problem expects ({n}, {n}, {m})",
                w.x.len(),
                w.y.len(),
                w.lambda.len()
            )));
        }
        Ok(())
    }
}

fn require_psd(m: &SymMatrix, name: &str) -> Result<()> {
    let check = spectral::is_psd(m, 1e-10 * (1.0 + m.max_abs()))?;
    if check.psd {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive semidefinite (lambda_min = {:e})",
            check.margin
        )))
    }
}

/// A primal-dual point `w = (x, y, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: DVector<f64>, y: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, y, lambda }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            lambda: DVector::zeros(m),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    /// The primal part `u = (x, y)` stacked.
    pub fn u(&self) -> DVector<f64> {
        let n = self.x.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.x[i] } else { self.y[i - n] })
    }

    /// Largest componentwise difference over x, y and lambda.
    pub fn max_abs_diff(&self, other: &PrimalDualPoint) -> f64 {
        let d = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax();
        d(&self.x, &other.x).max(d(&self.y, &other.y)).max(d(&self.lambda, &other.lambda))
    }
}

/// `f(x) + g(y) - lambda^T (Ax + By - b) + beta/2 ||Ax + By - b||^2`.
pub fn augmented_lagrangian(p: &ProblemInstance, w: &PrimalDualPoint, beta: f64) -> Result<f64> {
    p.check_point(w)?;
    let r = p.constraint_residual(&w.x, &w.y);
    Ok(p.objective(&w.x, &w.y) - w.lambda.dot(&r) + 0.5 * beta * r.norm_squared())
}

/// Infinity-norm violations of the KKT system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub primal: f64,
    pub dual_x: f64,
    pub dual_y: f64,
}

impl KktResidual {
    pub fn dual(&self) -> f64 {
        self.dual_x.max(self.dual_y)
    }

    pub fn max(&self) -> f64 {
        self.primal.max(self.dual())
    }
}

pub fn kkt_residual(p: &ProblemInstance, w: &PrimalDualPoint) -> Result<KktResidual> {
    p.check_point(w)?;
    let primal = p.constraint_residual(&w.x, &w.y).amax();
    let at_lambda = p.a.tr_mul(&w.lambda);
    let bt_lambda = p.b_mat.tr_mul(&w.lambda);
    let dual_y = (p.g.gradient(&w.y) - bt_lambda).amax();
    let dual_x = match &p.f {
        FSpec::L1 { mu } => l1_stationarity(&w.x, &at_lambda, *mu),
        FSpec::Quadratic { p: pm, q } => (pm.mul_vec(&w.x) + q - at_lambda).amax(),
    };
    Ok(KktResidual { primal, dual_x, dual_y })
}

/// Distance of `v` to the subdifferential of `mu ||.||_1` at `x`, max over
/// coordinates.
fn l1_stationarity(x: &DVector<f64>, v: &DVector<f64>, mu: f64) -> f64 {
    x.iter()
        .zip(v.iter())
        .map(|(&xi, &vi)| {
            if xi == 0.0 {
                (vi.abs() - mu).max(0.0)
            } else {
                (vi - mu * xi.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Hessian of the augmented Lagrangian in y: `Mbar + beta B^T B`.
pub fn build_m(p: &ProblemInstance, beta: f64) -> Result<SymMatrix> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    match &p.g {
        GSpec::Quadratic { mbar, .. } => Ok(mbar.add_scaled(beta, &p.btb())),
    }
}

// ---------------------------------------------------------------------------
// JSON problem file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum FFile {
    L1 { mu: f64 },
    Quadratic {
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
        q: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GFile {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "Mbar")]
    mbar: Vec<Vec<f64>>,
    q: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b_mat: Vec<Vec<f64>>,
    b: Vec<f64>,
    f: FFile,
    g: GFile,
}

fn dense_with_cols(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_if_empty));
    }
    dense_from_rows(rows)
}

impl ProblemInstance {
    /// Parses the JSON problem format:
    /// `{"A": [[..]], "B": [[..]], "b": [..], "f": {...}, "g": {...}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        if file.g.kind != "quadratic" {
            return Err(Error::UnsupportedG(format!("g of type '{}'", file.g.kind)));
        }
        let n = file.g.q.len();
        let a = dense_with_cols(&file.a, n)?;
        let b_mat = dense_with_cols(&file.b_mat, n)?;
        let b = DVector::from_vec(file.b);
        let f = match file.f {
            FFile::L1 { mu } => FSpec::L1 { mu },
            FFile::Quadratic { p, q } => FSpec::Quadratic {
                p: SymMatrix::from_rows(&p)?,
                q: DVector::from_vec(q),
            },
        };
        let g = GSpec::Quadratic {
            mbar: SymMatrix::from_rows(&file.g.mbar)?,
            q: DVector::from_vec(file.g.q),
        };
        Self::new(a, b_mat, b, f, g)
    }

    /// Serializes to the JSON problem format. Key order and number formatting
    /// are fixed, so the output doubles as the canonical form.
    pub fn to_json(&self) -> String {
        let f = match &self.f {
            FSpec::L1 { mu } => FFile::L1 { mu: *mu },
            FSpec::Quadratic { p, q } => FFile::Quadratic {
                p: dense_to_rows(p.as_matrix()),
                q: q.iter().copied().collect(),
            },
        };
        let g = match &self.g {
            GSpec::Quadratic { mbar, q } => GFile {
                kind: "quadratic".into(),
                mbar: dense_to_rows(mbar.as_matrix()),
                q: q.iter().copied().collect(),
            },
        };
        let file = ProblemFile {
            a: dense_to_rows(&self.a),
            b_mat: dense_to_rows(&self.b_mat),
            b: self.b.iter().copied().collect(),
            f,
            g,
        };
        serde_json::to_string(&file).expect("problem data is finite")
    }
}
