//! Car-like vehicle: rear wheel at `(x1, y1)`, heading `theta`, steering
//! angle `phi` of the front wheel at distance `l`.
//!
//! Configuration ordering is `q = (x1, y1, theta, phi)`. Inputs are a force
//! along the heading on the rear wheel and a steering torque. Both wheels
//! roll without slipping, which gives two Pfaffian constraints.
//!
//! The annihilator `Q` used by [`car_reduced`] contains `tan`/`sec` terms,
//! so that model (and the chained chart built on it) is only valid for
//! `|theta|, |phi| < pi/2`. [`global_car_annihilator`] rescales the first
//! column so it is smooth everywhere.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chained::{ChainedSystem, CoordinateChart};
use crate::error::{Error, Result};
use crate::ph::{
    check_len, reduce, ConstrainedPHSystem, Matrix, MatrixMap, MomentumSplit, ReducedPHSystem,
    StateMatrixMap, StateVectorMap, Vector, VectorMap,
};

/// Distance from `pi/2` at which the chart-local model stops evaluating.
pub const ANGLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarParams {
    /// Rear wheel mass.
    pub m1: f64,
    /// Front wheel mass.
    pub m2: f64,
    pub j1: f64,
    pub j2: f64,
    /// Wheelbase.
    pub l: f64,
    /// Viscous damping along `x1` and `y1`.
    pub du: f64,
    pub dtheta: f64,
    pub dphi: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            m1: 0.5,
            m2: 2.0,
            j1: 1.0,
            j2: 1.0,
            l: 1.5,
            du: 4.0,
            dtheta: 1.0,
            dphi: 2.0,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("j1", self.j1),
            ("j2", self.j2),
            ("l", self.l),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be strictly positive, got {value}"),
                });
            }
        }
        let damping = [
            ("du", self.du),
            ("dtheta", self.dtheta),
            ("dphi", self.dphi),
        ];
        for (field, value) in damping {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be non-negative, got {value}"),
                });
            }
        }
        Ok(())
    }

    pub fn with_damping_scaled(self, factor: f64) -> Self {
        Self {
            du: self.du * factor,
            dtheta: self.dtheta * factor,
            dphi: self.dphi * factor,
            ..self
        }
    }

    pub fn with_masses_scaled(self, factor: f64) -> Self {
        Self {
            m1: self.m1 * factor,
            m2: self.m2 * factor,
            ..self
        }
    }

    fn chart_denominator(&self, theta: f64, phi: f64) -> f64 {
        let (ct, cp) = (theta.cos(), phi.cos());
        self.l * self.l * ct * ct * cp * cp
    }

    fn inertia_numerator(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let l2 = self.l * self.l;
        self.j1 * s * s + l2 * self.m2 + l2 * self.m1 * c * c
    }

    /// Reduced inertia `a(q)` along the driving direction.
    pub fn inertia_coefficient(&self, theta: f64, phi: f64) -> f64 {
        self.inertia_numerator(phi) / self.chart_denominator(theta, phi)
    }

    /// Reduced damping `b(q)` along the driving direction.
    pub fn damping_coefficient(&self, theta: f64, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        let l2 = self.l * self.l;
        (self.dtheta * s * s + self.du * l2 * c * c) / self.chart_denominator(theta, phi)
    }

    /// Gyroscopic coefficient `c(q)`; `C = [[0, c p1], [-c p1, 0]]`.
    pub fn coriolis_coefficient(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        (self.m2 * self.l * self.l + self.j1) * s / (c * self.inertia_numerator(phi))
    }

    /// `(da/dtheta, da/dphi)`.
    pub fn inertia_coefficient_gradient(&self, theta: f64, phi: f64) -> (f64, f64) {
        let a = self.inertia_coefficient(theta, phi);
        let (s, c) = phi.sin_cos();
        let numerator_slope = 2.0 * s * c * (self.j1 - self.l * self.l * self.m1);
        (
            2.0 * a * theta.tan(),
            numerator_slope / self.chart_denominator(theta, phi) + 2.0 * a * phi.tan(),
        )
    }

    /// Front wheel position from the holonomic constraints.
    pub fn front_wheel(&self, q: &Vector) -> (f64, f64) {
        (q[0] + self.l * q[2].cos(), q[1] + self.l * q[2].sin())
    }
}

fn check_angles(q: &Vector) -> Result<()> {
    let limit = FRAC_PI_2 - ANGLE_MARGIN;
    if q[2].abs() < limit && q[3].abs() < limit {
        Ok(())
    } else {
        Err(Error::DomainViolation(format!(
            "|theta| and |phi| must stay below pi/2 - {ANGLE_MARGIN:e}: theta = {}, phi = {}",
            q[2], q[3]
        )))
    }
}

fn guarded(q: &Vector) -> Result<()> {
    check_len(q, 4, "car configuration")?;
    check_angles(q)
}

/// The car as a constrained model: `n = 4`, `k = 2`, `V = 0`.
pub fn build_car(params: CarParams) -> Result<ConstrainedPHSystem> {
    params.validate()?;
    let p = params;
    let mass: MatrixMap = Arc::new(move |q| {
        check_len(q, 4, "car configuration")?;
        let (s, c) = q[2].sin_cos();
        let mt = p.m1 + p.m2;
        let ml = p.m2 * p.l;
        Ok(Matrix::from_row_slice(
            4,
            4,
            &[
                mt,
                0.0,
                -ml * s,
                0.0, //
                0.0,
                mt,
                ml * c,
                0.0, //
                -ml * s,
                ml * c,
                ml * p.l + p.j1,
                0.0, //
                0.0,
                0.0,
                0.0,
                p.j2,
            ],
        ))
    });
    let damping: StateMatrixMap = Arc::new(move |_, _| {
        Ok(Matrix::from_diagonal(&Vector::from_vec(vec![
            p.du, p.du, p.dtheta, p.dphi,
        ])))
    });
    let input: MatrixMap = Arc::new(move |q| {
        check_len(q, 4, "car configuration")?;
        let (s, c) = q[2].sin_cos();
        Ok(Matrix::from_row_slice(
            4,
            2,
            &[c, 0.0, s, 0.0, 0.0, 0.0, 0.0, 1.0],
        ))
    });
    let constraint: MatrixMap = Arc::new(move |q| {
        check_len(q, 4, "car configuration")?;
        let (s, c) = q[2].sin_cos();
        let (s2, c2) = (q[2] + q[3]).sin_cos();
        Ok(
            Matrix::from_row_slice(2, 4, &[s, -c, 0.0, 0.0, s2, -c2, -p.l * q[3].cos(), 0.0])
                .transpose(),
        )
    });
    Ok(ConstrainedPHSystem {
        n: 4,
        k: 2,
        mass,
        damping,
        potential: Arc::new(|_| Ok(0.0)),
        potential_gradient: Arc::new(|_| Ok(Vector::zeros(4))),
        input,
        constraint,
    })
}

/// `Q = [[1, 0], [tan th, 0], [sec th tan phi / l, 0], [0, 1]]`.
pub fn car_annihilator(params: CarParams) -> MatrixMap {
    Arc::new(move |q| {
        guarded(q)?;
        let (theta, phi) = (q[2], q[3]);
        Ok(Matrix::from_row_slice(
            4,
            2,
            &[
                1.0,
                0.0,
                theta.tan(),
                0.0,
                phi.tan() / (params.l * theta.cos()),
                0.0,
                0.0,
                1.0,
            ],
        ))
    })
}

/// `Q diag(l cos th cos phi, 1)`: spans the same velocities, smooth everywhere.
pub fn global_car_annihilator(params: CarParams) -> MatrixMap {
    Arc::new(move |q| {
        check_len(q, 4, "car configuration")?;
        let (st, ct) = q[2].sin_cos();
        let (sp, cp) = q[3].sin_cos();
        Ok(Matrix::from_row_slice(
            4,
            2,
            &[
                params.l * ct * cp,
                0.0,
                params.l * st * cp,
                0.0,
                sp,
                0.0,
                0.0,
                1.0,
            ],
        ))
    })
}

/// Probe configurations used when validating a car reduction.
pub fn car_probes() -> Vec<Vector> {
    [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, -2.0, 0.4, -0.3],
        [-3.0, 0.5, -1.1, 0.9],
    ]
    .iter()
    .map(|q| Vector::from_row_slice(q))
    .collect()
}

/// Generic reduction of [`build_car`] with the smooth annihilator; valid on
/// the whole configuration space, with `C` and `grad_q T` by finite differences.
pub fn car_reduced_global(params: CarParams) -> Result<ReducedPHSystem> {
    let split = MomentumSplit::new(
        Arc::new(build_car(params)?),
        global_car_annihilator(params),
        None,
    );
    reduce(split, &car_probes())
}

/// Closed-form reduced car model with the chart-local annihilator.
pub fn car_reduced(params: CarParams) -> Result<ReducedPHSystem> {
    let source = Arc::new(build_car(params)?);
    let split = MomentumSplit::new(source, car_annihilator(params), None);
    for q in car_probes() {
        split.check_at(&q)?;
    }
    let p = params;
    let mass: MatrixMap = Arc::new(move |q| {
        guarded(q)?;
        Ok(Matrix::from_row_slice(
            2,
            2,
            &[p.inertia_coefficient(q[2], q[3]), 0.0, 0.0, p.j2],
        ))
    });
    let damping: StateMatrixMap = Arc::new(move |q, _| {
        guarded(q)?;
        Ok(Matrix::from_row_slice(
            2,
            2,
            &[p.damping_coefficient(q[2], q[3]), 0.0, 0.0, p.dphi],
        ))
    });
    let coriolis: StateMatrixMap = Arc::new(move |q, mom| {
        guarded(q)?;
        check_len(mom, 2, "momentum")?;
        let c = p.coriolis_coefficient(q[3]) * mom[0];
        Ok(Matrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]))
    });
    // G = Q^T G0
    let input: MatrixMap = Arc::new(move |q| {
        guarded(q)?;
        Ok(Matrix::from_row_slice(
            2,
            2,
            &[1.0 / q[2].cos(), 0.0, 0.0, 1.0],
        ))
    });
    let kinetic_gradient: StateVectorMap = Arc::new(move |q, mom| {
        guarded(q)?;
        check_len(mom, 2, "momentum")?;
        let a = p.inertia_coefficient(q[2], q[3]);
        let (da_dtheta, da_dphi) = p.inertia_coefficient_gradient(q[2], q[3]);
        let v1 = mom[0] / a;
        Ok(Vector::from_vec(vec![
            0.0,
            0.0,
            -0.5 * v1 * v1 * da_dtheta,
            -0.5 * v1 * v1 * da_dphi,
        ]))
    });
    Ok(ReducedPHSystem {
        n: 4,
        m: 2,
        annihilator: car_annihilator(params),
        mass,
        damping,
        coriolis,
        input,
        potential: Arc::new(|_| Ok(0.0)),
        potential_gradient: Arc::new(|_| Ok(Vector::zeros(4))),
        kinetic_gradient,
        split: Some(split),
    })
}

/// `z = (x1, sec^3(th) tan(phi) / l, tan(th), y1)`.
pub fn car_fz(params: CarParams, q: &Vector) -> Result<Vector> {
    guarded(q)?;
    let (theta, phi) = (q[2], q[3]);
    let sec = 1.0 / theta.cos();
    Ok(Vector::from_vec(vec![
        q[0],
        sec.powi(3) * phi.tan() / params.l,
        theta.tan(),
        q[1],
    ]))
}

pub fn car_fz_inv(params: CarParams, z: &Vector) -> Result<Vector> {
    check_len(z, 4, "car z coordinates")?;
    let theta = z[2].atan();
    let phi = (params.l * z[1] / (1.0 + z[2] * z[2]).powf(1.5)).atan();
    let q = Vector::from_vec(vec![z[0], z[3], theta, phi]);
    check_angles(&q)?;
    Ok(q)
}

/// `dz/dq` at `q`.
pub fn car_jfz(params: CarParams, q: &Vector) -> Result<Matrix> {
    guarded(q)?;
    let (theta, phi) = (q[2], q[3]);
    let sec_t = 1.0 / theta.cos();
    let sec_p = 1.0 / phi.cos();
    let sec3 = sec_t.powi(3);
    let mut j = Matrix::zeros(4, 4);
    j[(0, 0)] = 1.0;
    j[(1, 2)] = 3.0 * sec3 * theta.tan() * phi.tan() / params.l;
    j[(1, 3)] = sec3 * sec_p * sec_p / params.l;
    j[(2, 2)] = sec_t * sec_t;
    j[(3, 1)] = 1.0;
    Ok(j)
}

/// `dq/dz` at `z`.
pub fn car_jfz_inv(params: CarParams, z: &Vector) -> Result<Matrix> {
    check_len(z, 4, "car z coordinates")?;
    let r = 1.0 + z[2] * z[2];
    let u = params.l * z[1] * r.powf(-1.5);
    let du = 1.0 / (1.0 + u * u);
    let mut j = Matrix::zeros(4, 4);
    j[(0, 0)] = 1.0;
    j[(1, 3)] = 1.0;
    j[(2, 2)] = 1.0 / r;
    j[(3, 1)] = params.l * r.powf(-1.5) * du;
    j[(3, 2)] = -3.0 * params.l * z[1] * z[2] * r.powf(-2.5) * du;
    Ok(j)
}

pub fn car_chart(params: CarParams) -> CoordinateChart {
    let forward: VectorMap = Arc::new(move |q| car_fz(params, q));
    let inverse: VectorMap = Arc::new(move |z| car_fz_inv(params, z));
    let jacobian: MatrixMap = Arc::new(move |q| car_jfz(params, q));
    let inverse_jacobian: MatrixMap = Arc::new(move |z| car_jfz_inv(params, z));
    CoordinateChart {
        forward,
        inverse,
        jacobian,
        inverse_jacobian: Some(inverse_jacobian),
    }
}

/// The car in chained coordinates, ready for the controller.
pub fn car_chained(params: CarParams) -> Result<ChainedSystem> {
    let base = car_reduced(params)?;
    let constraint = build_car(params)?.constraint;
    ChainedSystem::new(base, car_chart(params), Some(constraint))
}
