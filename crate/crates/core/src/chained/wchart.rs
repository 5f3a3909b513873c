//! The discontinuous chart `w = f_w(z)`.
//!
//! The chart is given by its smooth inverse
//!
//! ```text
//! z_1 = w_1
//! z_2 = w_1 w_2 + sum_{i=3..n} w_1^{i-2} w_i / (i-2)!
//! z_j = sum_{i=3..n} w_1^{i+j-4} w_i / (i+j-4)!        (j >= 3)
//! ```
//!
//! which sends the whole hyperplane `w_1 = 0` to `z = 0`. Writing
//! `z' = (z_3..z_n)`, `w' = (w_3..w_n)` and `N = diag(w_1, .., w_1^{n-2})`
//! the tail satisfies `z' = N S_n N w'`, so the forward map exists for every
//! `z_1 != 0` and is undefined on `z_1 = 0`.

use nalgebra::{Dyn, LU};
use num_traits::ToPrimitive;

use super::smatrix::{inverse_factorial, s_matrix, RationalMatrix, MAX_CHART_DIM};
use crate::error::{Error, Result};
use crate::ph::{check_len, Matrix, Vector};

/// Default `|z_1|` below which the forward map refuses to evaluate.
pub const DEFAULT_CHART_GUARD: f64 = 1e-12;

#[derive(Clone)]
pub struct WChart {
    n: usize,
    s_exact: RationalMatrix,
    s_inverse_exact: RationalMatrix,
    s: Matrix,
    lu: LU<f64, Dyn, Dyn>,
    /// `inv_fact[k] = 1/k!`, correctly rounded.
    inv_fact: Vec<f64>,
    guard: f64,
}

impl std::fmt::Debug for WChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WChart")
            .field("n", &self.n)
            .field("guard", &self.guard)
            .finish_non_exhaustive()
    }
}

impl WChart {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_guard(n, DEFAULT_CHART_GUARD)
    }

    pub fn with_guard(n: usize, guard: f64) -> Result<Self> {
        if n > MAX_CHART_DIM {
            return Err(Error::DimensionTooLarge(n));
        }
        if !(guard >= 0.0) {
            return Err(Error::InvalidParameter {
                field: "chart_guard",
                reason: format!("must be non-negative, got {guard}"),
            });
        }
        let s_exact = s_matrix(n)?;
        let s_inverse_exact = s_exact
            .inverse()
            .ok_or(Error::Singular { context: "S_n" })?;
        let s = s_exact.to_f64();
        let lu = s.clone().lu();
        let inv_fact = (0..=2 * n)
            .map(|k| inverse_factorial(k).to_f64().unwrap_or(0.0))
            .collect();
        Ok(Self {
            n,
            s_exact,
            s_inverse_exact,
            s,
            lu,
            inv_fact,
            guard,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    pub fn s_matrix(&self) -> &RationalMatrix {
        &self.s_exact
    }

    pub fn s_inverse(&self) -> &RationalMatrix {
        &self.s_inverse_exact
    }

    /// Tail length `n - 2`.
    fn tail(&self) -> usize {
        self.n - 2
    }

    /// `z = f_w^{-1}(w)`; smooth everywhere.
    pub fn inverse(&self, w: &Vector) -> Result<Vector> {
        check_len(w, self.n, "w")?;
        let d = self.tail();
        let w1 = w[0];
        let mut z = Vector::zeros(self.n);
        z[0] = w1;
        z[1] = w1 * w[1]
            + (0..d)
                .map(|a| w1.powi(a as i32 + 1) * w[a + 2] * self.inv_fact[a + 1])
                .sum::<f64>();
        for c in 0..d {
            z[c + 2] = (0..d)
                .map(|a| {
                    let e = a + c + 2;
                    w1.powi(e as i32) * w[a + 2] * self.inv_fact[e]
                })
                .sum();
        }
        Ok(z)
    }

    fn check_z1(&self, z1: f64) -> Result<()> {
        if z1.is_finite() && z1.abs() > self.guard {
            Ok(())
        } else {
            Err(Error::NearSingularChart { z1 })
        }
    }

    /// Solve `S y = b` with one step of iterative refinement.
    fn solve_s(&self, b: &Vector) -> Vector {
        let mut y = self.lu.solve(b).expect("S_n is invertible");
        let r = b - &self.s * &y;
        if let Some(dy) = self.lu.solve(&r) {
            y += dy;
        }
        y
    }

    /// `w = f_w(z)`, defined for `|z_1| > guard`.
    pub fn forward(&self, z: &Vector) -> Result<Vector> {
        check_len(z, self.n, "z")?;
        let z1 = z[0];
        self.check_z1(z1)?;
        let d = self.tail();
        // S y = N^{-1} z', then w' = N^{-1} y.
        let b = Vector::from_fn(d, |a, _| z[a + 2] / z1.powi(a as i32 + 1));
        let y = self.solve_s(&b);
        let mut w = Vector::zeros(self.n);
        w[0] = z1;
        for a in 0..d {
            w[a + 2] = y[a] / z1.powi(a as i32 + 1);
        }
        w[1] = z[1] / z1
            - (0..d)
                .map(|a| z1.powi(a as i32) * w[a + 2] * self.inv_fact[a + 1])
                .sum::<f64>();
        if w.iter().all(|x| x.is_finite()) {
            Ok(w)
        } else {
            Err(Error::NumericalFailure("f_w"))
        }
    }

    /// Residual `||N S N w' - z'|| / ||z'||` of the tail solve.
    pub fn tail_residual(&self, z: &Vector, w: &Vector) -> f64 {
        let d = self.tail();
        let z1 = z[0];
        let nw = Vector::from_fn(d, |a, _| z1.powi(a as i32 + 1) * w[a + 2]);
        let snw = &self.s * nw;
        let lhs = Vector::from_fn(d, |a, _| z1.powi(a as i32 + 1) * snw[a]);
        let zt = z.rows(2, d).into_owned();
        (lhs - &zt).norm() / zt.norm()
    }

    /// `dz/dw`, the Jacobian of the smooth inverse map.
    pub fn jacobian_inverse(&self, w: &Vector) -> Result<Matrix> {
        check_len(w, self.n, "w")?;
        let d = self.tail();
        let w1 = w[0];
        let mut j = Matrix::zeros(self.n, self.n);
        j[(0, 0)] = 1.0;
        j[(1, 0)] = w[1]
            + (0..d)
                .map(|a| w1.powi(a as i32) * w[a + 2] * self.inv_fact[a])
                .sum::<f64>();
        j[(1, 1)] = w1;
        for a in 0..d {
            j[(1, a + 2)] = w1.powi(a as i32 + 1) * self.inv_fact[a + 1];
        }
        for c in 0..d {
            j[(c + 2, 0)] = (0..d)
                .map(|a| {
                    let e = a + c + 1;
                    w1.powi(e as i32) * w[a + 2] * self.inv_fact[e]
                })
                .sum();
            for a in 0..d {
                let e = a + c + 2;
                j[(c + 2, a + 2)] = w1.powi(e as i32) * self.inv_fact[e];
            }
        }
        Ok(j)
    }

    /// `dw/dz`, evaluated analytically at `z` (`|z_1| > guard`).
    pub fn jacobian_forward(&self, z: &Vector) -> Result<Matrix> {
        let w = self.forward(z)?;
        let z1 = z[0];
        let d = self.tail();
        let n_pow = |a: usize| z1.powi(a as i32 + 1);

        // dw'/dz' = N^{-1} S^{-1} N^{-1}
        let mut dtail_dz = Matrix::zeros(d, d);
        for b in 0..d {
            let mut e = Vector::zeros(d);
            e[b] = 1.0 / n_pow(b);
            let y = self.solve_s(&e);
            for a in 0..d {
                dtail_dz[(a, b)] = y[a] / n_pow(a);
            }
        }
        // dw'/dz1 = -N^{-1} [S^{-1} E S N w' + N E w'] / z1, E = diag(1..d)
        let nw = Vector::from_fn(d, |a, _| n_pow(a) * w[a + 2]);
        let esnw = {
            let snw = &self.s * &nw;
            Vector::from_fn(d, |a, _| (a + 1) as f64 * snw[a])
        };
        let first = self.solve_s(&esnw);
        let dtail_dz1 = Vector::from_fn(d, |a, _| {
            -(first[a] + (a + 1) as f64 * nw[a]) / (n_pow(a) * z1)
        });

        let mut j = Matrix::zeros(self.n, self.n);
        j[(0, 0)] = 1.0;
        for a in 0..d {
            j[(a + 2, 0)] = dtail_dz1[a];
            for b in 0..d {
                j[(a + 2, b + 2)] = dtail_dz[(a, b)];
            }
        }
        // w_2 = z_2/z_1 - sum_a z_1^a w_{a+3} / (a+1)!
        let mut dw2_dz1 = -z[1] / (z1 * z1);
        for a in 0..d {
            let coeff = self.inv_fact[a + 1];
            let power_term = if a == 0 {
                0.0
            } else {
                a as f64 * z1.powi(a as i32 - 1) * w[a + 2]
            };
            dw2_dz1 -= coeff * (power_term + z1.powi(a as i32) * dtail_dz1[a]);
        }
        j[(1, 0)] = dw2_dz1;
        j[(1, 1)] = 1.0 / z1;
        for b in 0..d {
            j[(1, b + 2)] = -(0..d)
                .map(|a| self.inv_fact[a + 1] * z1.powi(a as i32) * dtail_dz[(a, b)])
                .sum::<f64>();
        }
        if crate::linalg::all_finite(&j) {
            Ok(j)
        } else {
            Err(Error::NumericalFailure("df_w/dz"))
        }
    }
}
