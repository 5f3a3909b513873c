//! Chained structure and the coordinate changes used by the controller.
//!
//! A reduced system in coordinates `z` has chained structure when its
//! velocity matrix `Q_z(z)` is annihilated by the fixed matrix returned by
//! [`qz_perp`]. Such systems admit the discontinuous chart [`WChart`].

mod smatrix;
mod wchart;

use std::sync::Arc;

pub use smatrix::{factorial, inverse_factorial, s_matrix, RationalMatrix, MAX_CHART_DIM};
pub use wchart::{WChart, DEFAULT_CHART_GUARD};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ph::{
    check_len, Matrix, MatrixMap, ReducedPHSystem, ScalarMap, StateMatrixMap, StateVectorMap,
    Vector, VectorMap,
};

/// Tolerance for `Q_z^perp Q_z = 0` in [`is_chained`].
pub const CHAINED_TOLERANCE: f64 = 1e-10;

/// The `(n-2) x n` annihilator of chained-form velocity fields.
///
/// Row `i` is `-z_{i+1} e_1 + e_{i+2}` (1-indexed).
pub fn qz_perp(z: &Vector) -> Result<Matrix> {
    let n = z.len();
    if n < 3 {
        return Err(Error::DimensionTooSmall(n));
    }
    let mut a = Matrix::zeros(n - 2, n);
    for r in 0..n - 2 {
        a[(r, 0)] = -z[r + 1];
        a[(r, r + 2)] = 1.0;
    }
    Ok(a)
}

/// Velocity matrix of the two-input chained form.
pub fn chained_form_q(z: &Vector) -> Matrix {
    let n = z.len();
    let mut q = Matrix::zeros(n, 2);
    q[(0, 0)] = 1.0;
    q[(1, 1)] = 1.0;
    for i in 2..n {
        q[(i, 0)] = z[i - 1];
    }
    q
}

/// `true` iff `max |Q_z^perp(z) Q_z(z)| < 1e-10` at every sample.
pub fn is_chained(sys: &ReducedPHSystem, samples: &[Vector]) -> bool {
    if sys.m != 2 || sys.n < 3 {
        return false;
    }
    samples
        .iter()
        .all(|z| match (qz_perp(z), sys.annihilator_at(z)) {
            (Ok(perp), Ok(q_z)) => linalg::max_abs(&(perp * q_z)) < CHAINED_TOLERANCE,
            _ => false,
        })
}

/// An invertible change of configuration coordinates `x = f(q)`.
#[derive(Clone)]
pub struct CoordinateChart {
    pub forward: VectorMap,
    pub inverse: VectorMap,
    /// `df/dq` evaluated at `q`.
    pub jacobian: MatrixMap,
    /// `d f^{-1}/dx` evaluated at `x`; used instead of a solve when present.
    pub inverse_jacobian: Option<MatrixMap>,
}

impl CoordinateChart {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: Arc::new(|q| Ok(q.clone())),
            inverse: Arc::new(|x| Ok(x.clone())),
            jacobian: Arc::new(move |_| Ok(Matrix::identity(n, n))),
            inverse_jacobian: Some(Arc::new(move |_| Ok(Matrix::identity(n, n)))),
        }
    }

    /// The chart `x = f_w(z)` for the given w-chart.
    pub fn from_wchart(chart: Arc<WChart>) -> Self {
        let c = chart.clone();
        let forward: VectorMap = Arc::new(move |z| c.forward(z));
        let c = chart.clone();
        let inverse: VectorMap = Arc::new(move |w| c.inverse(w));
        let c = chart.clone();
        let jacobian: MatrixMap = Arc::new(move |z| c.jacobian_forward(z));
        let c = chart;
        let inverse_jacobian: MatrixMap = Arc::new(move |w| c.jacobian_inverse(w));
        Self {
            forward,
            inverse,
            jacobian,
            inverse_jacobian: Some(inverse_jacobian),
        }
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &CoordinateChart) -> Self {
        let (f1, f2) = (self.forward.clone(), outer.forward.clone());
        let forward: VectorMap = Arc::new(move |q| f2(&f1(q)?));
        let (i1, i2) = (self.inverse.clone(), outer.inverse.clone());
        let inverse: VectorMap = Arc::new(move |x| i1(&i2(x)?));
        let (f1, j1, j2) = (
            self.forward.clone(),
            self.jacobian.clone(),
            outer.jacobian.clone(),
        );
        let jacobian: MatrixMap = Arc::new(move |q| Ok(j2(&f1(q)?)? * j1(q)?));
        let inverse_jacobian = match (&self.inverse_jacobian, &outer.inverse_jacobian) {
            (Some(ij1), Some(ij2)) => {
                let (ij1, ij2, i2) = (ij1.clone(), ij2.clone(), outer.inverse.clone());
                let map: MatrixMap = Arc::new(move |x| Ok(ij1(&i2(x)?)? * ij2(x)?));
                Some(map)
            }
            _ => None,
        };
        Self {
            forward,
            inverse,
            jacobian,
            inverse_jacobian,
        }
    }

    fn to_source(&self, x: &Vector) -> Result<Vector> {
        (self.inverse)(x).map_err(chart_error)
    }

    /// `(d f^{-1}/dx)^T g`, pulling a q-gradient back to x-coordinates.
    fn pull_gradient(&self, x: &Vector, q: &Vector, g: &Vector) -> Result<Vector> {
        match &self.inverse_jacobian {
            Some(ij) => Ok(ij(x).map_err(chart_error)?.transpose() * g),
            None => {
                let j = (self.jacobian)(q).map_err(chart_error)?;
                linalg::solve(&j.transpose(), g, "chart Jacobian")
            }
        }
    }
}

fn chart_error(e: Error) -> Error {
    match e {
        Error::ChartViolation(_) => e,
        other => Error::ChartViolation(other.to_string()),
    }
}

/// Express `sys` in the coordinates `x = f(q)` of `chart`.
///
/// `Q` becomes `(df/dq) Q`, gradients are pulled back through `f^{-1}`, and
/// all other maps are composed with `f^{-1}`. The momentum is unchanged.
pub fn pushforward(sys: &ReducedPHSystem, chart: &CoordinateChart) -> ReducedPHSystem {
    let (s, c) = (sys.clone(), chart.clone());
    let annihilator: MatrixMap = Arc::new(move |x| {
        check_len(x, s.n, "chart coordinates")?;
        let q = c.to_source(x)?;
        let j = (c.jacobian)(&q).map_err(chart_error)?;
        Ok(j * s.annihilator_at(&q)?)
    });
    let (s, c) = (sys.clone(), chart.clone());
    let mass: MatrixMap = Arc::new(move |x| s.mass_at(&c.to_source(x)?));
    let (s, c) = (sys.clone(), chart.clone());
    let damping: StateMatrixMap = Arc::new(move |x, p| s.damping_at(&c.to_source(x)?, p));
    let (s, c) = (sys.clone(), chart.clone());
    let coriolis: StateMatrixMap = Arc::new(move |x, p| s.coriolis_at(&c.to_source(x)?, p));
    let (s, c) = (sys.clone(), chart.clone());
    let input: MatrixMap = Arc::new(move |x| s.input_at(&c.to_source(x)?));
    let (s, c) = (sys.clone(), chart.clone());
    let potential: ScalarMap = Arc::new(move |x| s.potential_at(&c.to_source(x)?));
    let (s, c) = (sys.clone(), chart.clone());
    let potential_gradient: VectorMap = Arc::new(move |x| {
        let q = c.to_source(x)?;
        c.pull_gradient(x, &q, &s.potential_gradient_at(&q)?)
    });
    let (s, c) = (sys.clone(), chart.clone());
    let kinetic_gradient: StateVectorMap = Arc::new(move |x, p| {
        let q = c.to_source(x)?;
        c.pull_gradient(x, &q, &s.kinetic_gradient_at(&q, p)?)
    });
    ReducedPHSystem {
        n: sys.n,
        m: sys.m,
        annihilator,
        mass,
        damping,
        coriolis,
        input,
        potential,
        potential_gradient,
        kinetic_gradient,
        split: None,
    }
}

/// A reduced system together with a chart `z = f_z(q)` in which it has
/// chained structure, and the w-chart built on top of it.
#[derive(Clone)]
pub struct ChainedSystem {
    /// Model in the original configuration coordinates `q`.
    pub base: ReducedPHSystem,
    pub chart: CoordinateChart,
    /// Model in `z` coordinates.
    pub z_system: ReducedPHSystem,
    pub wchart: Arc<WChart>,
    /// `Gc(q)`, when known, for constraint-residual diagnostics.
    pub constraint: Option<MatrixMap>,
}

impl std::fmt::Debug for ChainedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainedSystem")
            .field("n", &self.base.n)
            .field("m", &self.base.m)
            .finish_non_exhaustive()
    }
}

impl ChainedSystem {
    pub fn new(
        base: ReducedPHSystem,
        chart: CoordinateChart,
        constraint: Option<MatrixMap>,
    ) -> Result<Self> {
        if base.m != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: base.m,
                context: "chained systems have two inputs",
            });
        }
        let wchart = Arc::new(WChart::new(base.n)?);
        let z_system = pushforward(&base, &chart);
        Ok(Self {
            base,
            chart,
            z_system,
            wchart,
            constraint,
        })
    }

    pub fn n(&self) -> usize {
        self.base.n
    }

    pub fn to_z(&self, q: &Vector) -> Result<Vector> {
        (self.chart.forward)(q)
    }

    pub fn to_q(&self, z: &Vector) -> Result<Vector> {
        (self.chart.inverse)(z)
    }

    pub fn w_chart(&self) -> CoordinateChart {
        CoordinateChart::from_wchart(self.wchart.clone())
    }

    /// The model in `w` coordinates.
    pub fn w_system(&self) -> ReducedPHSystem {
        pushforward(&self.z_system, &self.w_chart())
    }

    pub fn is_chained(&self, samples: &[Vector]) -> bool {
        is_chained(&self.z_system, samples)
    }
}
