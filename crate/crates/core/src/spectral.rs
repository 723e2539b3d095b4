//! Dense symmetric kernels: eigenvalue bounds, definiteness tests and SPD
//! factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default absolute tolerance for "is positive semidefinite" tests.
pub const PSD_TOL: f64 = 1e-8;

/// A dense real symmetric matrix.
///
/// Construction rejects non-finite entries and inputs whose asymmetry exceeds
/// `1e-12 * (1 + max|M|)`; accepted inputs are replaced by `(M + M^T) / 2` so
/// every stored value is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let n = m.nrows();
        let mut asym = 0.0_f64;
        for j in 0..n {
            for i in (j + 1)..n {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asym > 1e-12 * (1.0 + scale) {
            return Err(Error::InvalidMatrix(format!(
                "asymmetry {asym:e} exceeds tolerance"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(dense_from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self {
            data: DMatrix::from_diagonal_element(n, n, s),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    /// `A^T A`, mirrored so the result is exactly symmetric.
    pub fn gram(a: &DMatrix<f64>) -> Self {
        Self::symmetrized(a.transpose() * a)
    }

    /// `a a^T`.
    pub fn outer(a: &DVector<f64>) -> Self {
        Self::symmetrized(a * a.transpose())
    }

    // Averages with the transpose; only used on values already known to be
    // symmetric up to roundoff.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { data: m }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.data.diagonal()
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.data[(i, j)].abs() <= tol))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            data: &self.data - &other.data,
        }
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            data: &self.data * s,
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            data: &self.data + &other.data * s,
        }
    }

    pub fn add_diagonal(&self, s: f64) -> SymMatrix {
        let mut data = self.data.clone();
        for i in 0..data.nrows() {
            data[(i, i)] += s;
        }
        SymMatrix { data }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.data * v
    }

    /// `v^T M v`; for indefinite `M` this may be negative.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.data * v))
    }

    /// `u^T M v`.
    pub fn bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.data * v))
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Bitwise equality of all entries.
    pub fn bitwise_eq(&self, other: &SymMatrix) -> bool {
        self.dim() == other.dim()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn dense_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn dense_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn check_finite(m: &SymMatrix) -> Result<()> {
    if m.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

/// All eigenvalues in ascending order.
pub fn eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    check_finite(m)?;
    if m.dim() == 0 {
        return Ok(Vec::new());
    }
    let mut ev: Vec<f64> = m.data.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// `(lambda_min, lambda_max)`.
pub fn eigen_range(m: &SymMatrix) -> Result<(f64, f64)> {
    let ev = eigenvalues(m)?;
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Ok((0.0, 0.0)),
    }
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    eigen_range(m).map(|(lo, _)| lo)
}

pub fn max_eigenvalue(m: &SymMatrix) -> Result<f64> {
    eigen_range(m).map(|(_, hi)| hi)
}

/// Largest eigenvalue magnitude.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    eigen_range(m).map(|(lo, hi)| lo.abs().max(hi.abs()))
}

/// Outcome of a semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdCheck {
    pub psd: bool,
    /// The smallest eigenvalue.
    pub margin: f64,
}

pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<PsdCheck> {
    let margin = min_eigenvalue(m)?;
    Ok(PsdCheck {
        psd: margin >= -tol,
        margin,
    })
}

/// Lower-triangular Cholesky factor `L` with `M = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Fails with [`Error::NotSpd`] carrying the first non-positive pivot.
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        check_finite(m)?;
        let n = m.dim();
        let a = &m.data;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotSpd { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.l;
        let mut z = rhs.clone();
        for i in 0..n {
            let mut v = z[i];
            for k in 0..i {
                v -= l[(i, k)] * z[k];
            }
            z[i] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = z[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * z[k];
            }
            z[i] = v / l[(i, i)];
        }
        z
    }
}

/// Solves `m z = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &SymMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != m.dim() {
        return Err(Error::Dimension(format!(
            "rhs has length {}, matrix is {}x{}",
            rhs.len(),
            m.dim(),
            m.dim()
        )));
    }
    Ok(Cholesky::factor(m)?.solve(rhs))
}

/// Lazily refreshed eigenvalue bounds for a slowly drifting matrix sequence.
///
/// Holds one exact eigen-decomposition of a reference matrix. A query for a
/// nearby matrix `X` returns Weyl bounds `lambda(ref) -/+ ||X - ref||_F`
/// without decomposing `X`, as long as the Frobenius distance stays below the
/// drift budget; otherwise `X` becomes the new reference. Reported lower
/// bounds never exceed the true smallest eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenTracker {
    budget: f64,
    reference: Option<(SymMatrix, f64, f64)>,
    refreshes: usize,
}

impl EigenTracker {
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            reference: None,
            refreshes: 0,
        }
    }

    /// Returns `(lower bound on lambda_min, upper bound on lambda_max)`.
    pub fn range(&mut self, m: &SymMatrix) -> Result<(f64, f64)> {
        if let Some((r, lo, hi)) = &self.reference {
            if r.dim() == m.dim() {
                let drift = (m.as_matrix() - r.as_matrix()).norm();
                if drift <= self.budget {
                    return Ok((lo - drift, hi + drift));
                }
            }
        }
        let (lo, hi) = eigen_range(m)?;
        self.reference = Some((m.clone(), lo, hi));
        self.refreshes += 1;
        Ok((lo, hi))
    }

    pub fn min(&mut self, m: &SymMatrix) -> Result<f64> {
        self.range(m).map(|(lo, _)| lo)
    }

    /// Number of exact decompositions performed so far.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }
}
