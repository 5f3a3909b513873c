//! Exact-rational square matrices and the factorial Hankel matrix `S_n`.

use std::fmt;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Largest chart dimension accepted; beyond this the float solve of `S_n`
/// is meaningless.
pub const MAX_CHART_DIM: usize = 12;

#[derive(Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    dim: usize,
    data: Vec<BigRational>,
}

impl fmt::Debug for RationalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<String>> = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j).to_string()).collect())
            .collect();
        f.debug_struct("RationalMatrix")
            .field("rows", &rows)
            .finish()
    }
}

impl RationalMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![BigRational::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, BigRational::one());
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> BigRational) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: BigRational) {
        self.data[i * self.dim + j] = value;
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.get(i, j).to_f64().unwrap_or(f64::NAN)
        })
    }

    pub fn mul(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.dim, other.dim, "rational matrix dimensions differ");
        Self::from_fn(self.dim, |i, j| {
            (0..self.dim).fold(BigRational::zero(), |acc, k| {
                acc + self.get(i, k) * other.get(k, j)
            })
        })
    }

    /// Gauss-Jordan elimination on `[self | I]`; returns the determinant and,
    /// when it is non-zero, the inverse.
    fn eliminate(&self) -> (BigRational, Option<RationalMatrix>) {
        let n = self.dim;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let mut det = BigRational::one();
        for col in 0..n {
            let Some(pivot) = (col..n).find(|&r| !a.get(r, col).is_zero()) else {
                return (BigRational::zero(), None);
            };
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a.get(col, col).clone();
            det *= &p;
            for j in 0..n {
                let v = a.get(col, j) / &p;
                a.set(col, j, v);
                let v = inv.get(col, j) / &p;
                inv.set(col, j, v);
            }
            for r in 0..n {
                if r == col || a.get(r, col).is_zero() {
                    continue;
                }
                let factor = a.get(r, col).clone();
                for j in 0..n {
                    let v = a.get(r, j) - &factor * a.get(col, j);
                    a.set(r, j, v);
                    let v = inv.get(r, j) - &factor * inv.get(col, j);
                    inv.set(r, j, v);
                }
            }
        }
        (det, Some(inv))
    }

    pub fn determinant(&self) -> BigRational {
        self.eliminate().0
    }

    pub fn inverse(&self) -> Option<RationalMatrix> {
        self.eliminate().1
    }

    pub fn max_abs_entry(&self) -> BigRational {
        self.data
            .iter()
            .map(|x| x.abs())
            .max()
            .unwrap_or_else(BigRational::zero)
    }
}

pub fn factorial(k: usize) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

pub fn inverse_factorial(k: usize) -> BigRational {
    BigRational::new(BigInt::one(), factorial(k))
}

/// The `(n-2) x (n-2)` matrix with entry `(i, j) = 1/(i+j)!` (1-indexed).
pub fn s_matrix(n: usize) -> Result<RationalMatrix> {
    if n < 3 {
        return Err(Error::DimensionTooSmall(n));
    }
    Ok(RationalMatrix::from_fn(n - 2, |i, j| {
        inverse_factorial(i + j + 2)
    }))
}
