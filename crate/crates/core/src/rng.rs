//! Reproducible random streams.
//!
//! The generator is xoshiro256++ whose 256-bit state is filled by SplitMix64
//! from the 64-bit seed. Derived draws are fixed so another implementation
//! can replay them:
//!
//! * `uniform()` = `(next_u64 >> 11) * 2^-53`, in `[0, 1)`;
//! * `normal()` consumes two uniforms `u1, u2` and returns
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` (one Box-Muller branch);
//! * vectors and matrices are filled element by element, matrices row-major.

use nalgebra::{DMatrix, DVector};
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::spectral::SymMatrix;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.normal()))
    }

    /// Row-major standard normal matrix.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.normal()).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }

    /// Orthogonal matrix from the QR factorization of a normal matrix, with
    /// column signs fixed so that `diag(R) > 0`.
    pub fn orthogonal(&mut self, n: usize) -> DMatrix<f64> {
        let g = self.normal_matrix(n, n);
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q
    }

    /// `Q diag(d) Q^T` with eigenvalues geometrically spaced from `lo` to
    /// `hi` (just `lo` when `n = 1`).
    pub fn spd(&mut self, n: usize, lo: f64, hi: f64) -> SymMatrix {
        let q = self.orthogonal(n);
        let d: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    lo
                } else {
                    lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        let dm = DMatrix::from_diagonal(&DVector::from_vec(d));
        SymMatrix::symmetrized(&q * dm * q.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = {
            let mut r = Rng::seed(42);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::seed(42);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, {
            let mut r = Rng::seed(43);
            (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
        });
    }

    #[test]
    fn uniform_in_unit_interval_and_normal_moments() {
        let mut r = Rng::seed(1);
        let xs: Vec<f64> = (0..20_000).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
        assert!((0..1000).all(|_| (0.0..1.0).contains(&r.uniform())));
    }

    #[test]
    fn spd_has_requested_spectrum() {
        let mut r = Rng::seed(9);
        let m = r.spd(12, 1.0, 10.0);
        let (lo, hi) = spectral::eigen_range(&m).unwrap();
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 10.0).abs() < 1e-10);
    }
}
