//! Discontinuous potential-energy shaping with damping injection.
//!
//! In `w` coordinates the control law
//!
//! ```text
//! u = -G_w^{-1} { Q_w^T [L w - grad_w V_w]
//!                 + [D^ + (k / w1^2) Q_w^T e1 e1^T Q_w] M_w^{-1} p }
//! ```
//!
//! replaces the open-loop potential with `V_d = 1/2 w^T L w` and raises the
//! damping to `D_d = D_w + D^ + (k / w1^2) Q_w^T e1 e1^T Q_w`. The shaped
//! Hamiltonian `H_d = 1/2 p^T M_w^{-1} p + V_d` then satisfies
//! `dH_d/dt = -v^T D_d v <= 0` with `v = M_w^{-1} p`, and the singular
//! damping keeps `w1` from reaching zero in finite time.

use nalgebra::RowDVector;

use crate::chained::ChainedSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ph::{check_len, Matrix, MatrixMap, ReducedPHSystem, StateDerivative, Vector};

/// Default guard on `|w1|`.
pub const DEFAULT_EPS_W1: f64 = 1e-9;

/// Smallest `|det G|` accepted when inverting the input matrix.
pub const INPUT_DET_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    /// Diagonal of the shaping gain `L`.
    pub gains: Vec<f64>,
    /// Gain of the singular damping term.
    pub k: f64,
    /// Injected damping `D^`, 2 x 2 positive definite.
    pub damping_injection: Matrix,
    pub eps_w1: f64,
}

impl ControllerParams {
    pub fn new(gains: Vec<f64>, k: f64, damping_injection: Matrix, eps_w1: f64) -> Result<Self> {
        let params = Self {
            gains,
            k,
            damping_injection,
            eps_w1,
        };
        params.validate()?;
        Ok(params)
    }

    /// Gains used for the car reproduction run, with `D^ = I`.
    pub fn car_reference() -> Self {
        Self {
            gains: vec![1.0, 10.0, 0.01, 0.0001],
            k: 0.01,
            damping_injection: Matrix::identity(2, 2),
            eps_w1: DEFAULT_EPS_W1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() {
            return Err(Error::InvalidParameter {
                field: "gains",
                reason: "must not be empty".into(),
            });
        }
        if let Some(g) = self.gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidParameter {
                field: "gains",
                reason: format!("all entries must be strictly positive, got {g}"),
            });
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidParameter {
                field: "k",
                reason: format!("must be strictly positive, got {}", self.k),
            });
        }
        let d = &self.damping_injection;
        if d.nrows() != 2 || d.ncols() != 2 || !linalg::is_spd(d, 1e-12) {
            return Err(Error::InvalidParameter {
                field: "damping_injection",
                reason: "must be a symmetric positive definite 2 x 2 matrix".into(),
            });
        }
        if !(self.eps_w1.is_finite() && self.eps_w1 > 0.0) {
            return Err(Error::InvalidParameter {
                field: "eps_w1",
                reason: format!("must be strictly positive, got {}", self.eps_w1),
            });
        }
        Ok(())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.gains.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: n,
                actual: self.gains.len(),
                context: "shaping gains",
            })
        }
    }

    fn check_guard(&self, w1: f64) -> Result<()> {
        if w1.is_finite() && w1.abs() > self.eps_w1 {
            Ok(())
        } else {
            Err(Error::ChartGuard { w1 })
        }
    }

    /// `L w`.
    pub fn shaped_potential_gradient(&self, w: &Vector) -> Vector {
        Vector::from_fn(w.len(), |i, _| self.gains[i] * w[i])
    }

    /// `V_d = 1/2 w^T L w`.
    pub fn shaped_potential(&self, w: &Vector) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.gains)
            .map(|(x, g)| g * x * x)
            .sum::<f64>()
    }

    /// `D^ + (k / w1^2) r^T r`, `r = e1^T Q`.
    fn injected_damping(&self, first_row: &RowDVector<f64>, w1: f64) -> Matrix {
        &self.damping_injection + first_row.transpose() * first_row * (self.k / (w1 * w1))
    }
}

/// Energy bookkeeping of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedEnergy {
    pub h_d: f64,
    pub v_d: f64,
    pub kinetic: f64,
    /// `dH_d/dt = -v^T D_d v`.
    pub dissipation_rate: f64,
}

fn solve_input(g: &Matrix, rhs: &Vector) -> Result<Vector> {
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    if !(det.abs() >= INPUT_DET_GUARD) {
        return Err(Error::SingularInput { det });
    }
    Ok(Vector::from_vec(vec![
        (g[(1, 1)] * rhs[0] - g[(0, 1)] * rhs[1]) / det,
        (g[(0, 0)] * rhs[1] - g[(1, 0)] * rhs[0]) / det,
    ]))
}

fn assemble(
    shaping: Vector,
    first_row: &RowDVector<f64>,
    w1: f64,
    v: &Vector,
    g: &Matrix,
    params: &ControllerParams,
) -> Result<Vector> {
    let damping = params.injected_damping(first_row, w1) * v;
    let u = -solve_input(g, &(shaping + damping))?;
    if u.iter().all(|x| x.is_finite()) {
        Ok(u)
    } else {
        Err(Error::NumericalFailure("control"))
    }
}

fn check_two_inputs(sys: &ReducedPHSystem) -> Result<()> {
    if sys.m == 2 {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: 2,
            actual: sys.m,
            context: "controller inputs",
        })
    }
}

/// Control law evaluated from `(w, p)` on the model in `w` coordinates.
pub fn control_w(
    sys_w: &ReducedPHSystem,
    w: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<Vector> {
    check_two_inputs(sys_w)?;
    params.check_dim(sys_w.n)?;
    check_len(w, sys_w.n, "w")?;
    params.check_guard(w[0])?;
    let q_w = sys_w.annihilator_at(w)?;
    let v = sys_w.velocity(w, p)?;
    control_w_with_velocity(sys_w, &q_w, w, &v, params)
}

fn control_w_with_velocity(
    sys_w: &ReducedPHSystem,
    q_w: &Matrix,
    w: &Vector,
    v: &Vector,
    params: &ControllerParams,
) -> Result<Vector> {
    let shaping =
        q_w.transpose() * (params.shaped_potential_gradient(w) - sys_w.potential_gradient_at(w)?);
    assemble(
        shaping,
        &q_w.row(0).into_owned(),
        w[0],
        v,
        &sys_w.input_at(w)?,
        params,
    )
}

/// The same law with `M_w^{-1} p` recovered from `wdot` through `Q_w`;
/// no mass matrix is involved.
pub fn control_w_from_velocity(
    sys_w: &ReducedPHSystem,
    w: &Vector,
    wdot: &Vector,
    params: &ControllerParams,
) -> Result<Vector> {
    check_two_inputs(sys_w)?;
    params.check_dim(sys_w.n)?;
    check_len(w, sys_w.n, "w")?;
    check_len(wdot, sys_w.n, "wdot")?;
    params.check_guard(w[0])?;
    let q_w = sys_w.annihilator_at(w)?;
    let v = linalg::solve(
        &(q_w.transpose() * &q_w),
        &(q_w.transpose() * wdot),
        "Q_w^T Q_w",
    )?;
    control_w_with_velocity(sys_w, &q_w, w, &v, params)
}

/// Control law evaluated in chained coordinates `(z, p)`.
///
/// The shaping force is `Q_z^T [(df_w/dz)^T L w - grad_z V_z]` with
/// `w = f_w(z)`; since `w1 = z1`, `e1^T Q_w = e1^T Q_z`.
pub fn control_z(
    sys: &ChainedSystem,
    z: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<Vector> {
    let zsys = &sys.z_system;
    check_two_inputs(zsys)?;
    params.check_dim(zsys.n)?;
    check_len(z, zsys.n, "z")?;
    params.check_guard(z[0])?;
    let w = sys.wchart.forward(z)?;
    let jacobian = sys.wchart.jacobian_forward(z)?;
    let q_z = zsys.annihilator_at(z)?;
    let v = zsys.velocity(z, p)?;
    let shaping = q_z.transpose()
        * (jacobian.transpose() * params.shaped_potential_gradient(&w)
            - zsys.potential_gradient_at(z)?);
    assemble(
        shaping,
        &q_z.row(0).into_owned(),
        z[0],
        &v,
        &zsys.input_at(z)?,
        params,
    )
}

/// `D_d = D_w + D^ + (k / w1^2) Q_w^T e1 e1^T Q_w`.
pub fn closed_loop_damping(
    sys_w: &ReducedPHSystem,
    w: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<Matrix> {
    check_len(w, sys_w.n, "w")?;
    params.check_guard(w[0])?;
    let q_w = sys_w.annihilator_at(w)?;
    Ok(sys_w.damping_at(w, p)? + params.injected_damping(&q_w.row(0).into_owned(), w[0]))
}

/// Closed-loop vector field written directly in terms of `H_d` and `D_d`.
pub fn closed_loop_dynamics(
    sys_w: &ReducedPHSystem,
    w: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<StateDerivative> {
    params.check_dim(sys_w.n)?;
    let d_d = closed_loop_damping(sys_w, w, p, params)?;
    let q_w = sys_w.annihilator_at(w)?;
    let v = sys_w.velocity(w, p)?;
    let grad = sys_w.kinetic_gradient_at(w, p)? + params.shaped_potential_gradient(w);
    Ok(StateDerivative {
        qdot: &q_w * &v,
        pdot: -(q_w.transpose() * grad) + (sys_w.coriolis_at(w, p)? - d_d) * v,
    })
}

pub fn shaped_hamiltonian(
    sys_w: &ReducedPHSystem,
    w: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<ShapedEnergy> {
    params.check_dim(sys_w.n)?;
    let d_d = closed_loop_damping(sys_w, w, p, params)?;
    let v = sys_w.velocity(w, p)?;
    let kinetic = 0.5 * p.dot(&v);
    let v_d = params.shaped_potential(w);
    Ok(ShapedEnergy {
        h_d: kinetic + v_d,
        v_d,
        kinetic,
        dissipation_rate: -v.dot(&(d_d * &v)),
    })
}

/// [`shaped_hamiltonian`] evaluated from chained coordinates.
pub fn shaped_energy_z(
    sys: &ChainedSystem,
    z: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<ShapedEnergy> {
    let zsys = &sys.z_system;
    params.check_dim(zsys.n)?;
    check_len(z, zsys.n, "z")?;
    params.check_guard(z[0])?;
    let w = sys.wchart.forward(z)?;
    let q_z = zsys.annihilator_at(z)?;
    let v = zsys.velocity(z, p)?;
    let d_d = zsys.damping_at(z, p)? + params.injected_damping(&q_z.row(0).into_owned(), z[0]);
    let kinetic = 0.5 * p.dot(&v);
    let v_d = params.shaped_potential(&w);
    Ok(ShapedEnergy {
        h_d: kinetic + v_d,
        v_d,
        kinetic,
        dissipation_rate: -v.dot(&(d_d * &v)),
    })
}

/// Checks that the control law depends on `(w, wdot)` only.
///
/// `p` is rescaled to `M_alt M_w^{-1} p` so that `wdot` is unchanged, and the
/// law is evaluated on the original model, on the model with `alternate_mass`,
/// and from `(w, wdot)` directly. Returns `true` iff all three agree to
/// `1e-12 * max(1, |u|)`.
pub fn mass_matrix_independence_check(
    sys_w: &ReducedPHSystem,
    alternate_mass: MatrixMap,
    w: &Vector,
    p: &Vector,
    params: &ControllerParams,
) -> Result<bool> {
    let v = sys_w.velocity(w, p)?;
    let wdot = sys_w.annihilator_at(w)? * &v;
    let reference = control_w(sys_w, w, p, params)?;

    let mut alternate = sys_w.clone();
    alternate.mass = alternate_mass;
    let p_alt = alternate.mass_at(w)? * &v;
    let moved = control_w(&alternate, w, &p_alt, params)?;
    let from_velocity = control_w_from_velocity(sys_w, w, &wdot, params)?;

    let tol = 1e-12 * linalg::norm_inf(&reference).max(1.0);
    Ok(linalg::norm_inf(&(moved - &reference)) <= tol
        && linalg::norm_inf(&(from_velocity - &reference)) <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_fields() {
        let base = ControllerParams::car_reference();
        let cases = [
            (
                ControllerParams {
                    k: 0.0,
                    ..base.clone()
                },
                "k",
            ),
            (
                ControllerParams {
                    gains: vec![1.0, -1.0, 1.0, 1.0],
                    ..base.clone()
                },
                "gains",
            ),
            (
                ControllerParams {
                    damping_injection: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
                    ..base.clone()
                },
                "damping_injection",
            ),
            (
                ControllerParams {
                    eps_w1: 0.0,
                    ..base.clone()
                },
                "eps_w1",
            ),
        ];
        for (params, expected) in cases {
            match params.validate() {
                Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, expected),
                other => panic!("{expected}: unexpected {other:?}"),
            }
        }
        base.validate().unwrap();
    }

    #[test]
    fn shaped_potential_is_quadratic() {
        let params = ControllerParams::car_reference();
        let w = Vector::from_vec(vec![1.0, 1.0, 10.0, 100.0]);
        assert!((params.shaped_potential(&w) - 0.5 * (1.0 + 10.0 + 1.0 + 1.0)).abs() < 1e-14);
        assert_eq!(
            params.shaped_potential_gradient(&w),
            Vector::from_vec(vec![1.0, 10.0, 0.1, 0.01])
        );
    }

    #[test]
    fn singular_input_is_rejected() {
        let g = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 1.0]);
        assert!(matches!(
            solve_input(&g, &Vector::zeros(2)),
            Err(Error::SingularInput { .. })
        ));
    }
}
