//! Constrained and reduced port-Hamiltonian mechanical systems.
//!
//! A [`ConstrainedPHSystem`] carries the Pfaffian constraint matrix `Gc(q)`
//! whose reaction forces enter the canonical dynamics through Lagrange
//! multipliers. [`reduce`] removes the multipliers by splitting the canonical
//! momentum `p0` into `(mu, p) = (A^T p0, Q^T p0)`, where `Q^T` annihilates
//! `Gc`. The constraint fixes `mu` as a function of `p`, so only the
//! `m = n - k` dimensional momentum `p` is kept.
//!
//! Every matrix-valued field is an evaluation map. Maps are fallible so that
//! chart-local models can report domain violations instead of producing
//! garbage.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub type MatrixMap = Arc<dyn Fn(&Vector) -> Result<Matrix> + Send + Sync>;
pub type StateMatrixMap = Arc<dyn Fn(&Vector, &Vector) -> Result<Matrix> + Send + Sync>;
pub type VectorMap = Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync>;
pub type StateVectorMap = Arc<dyn Fn(&Vector, &Vector) -> Result<Vector> + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(&Vector) -> Result<f64> + Send + Sync>;

/// Relative step for the finite-difference derivatives of generic models.
pub const FD_SCALE: f64 = 1e-6;

/// Probe-point tolerance for `Gc^T Q = 0`.
pub const ANNIHILATOR_TOLERANCE: f64 = 1e-10;

pub(crate) fn check_len(v: &Vector, expected: usize, context: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            actual: v.len(),
            context,
        })
    }
}

pub(crate) fn check_shape(
    a: &Matrix,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if a.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            actual: a.nrows(),
            context,
        });
    }
    if a.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            actual: a.ncols(),
            context,
        });
    }
    if !linalg::all_finite(a) {
        return Err(Error::NumericalFailure(context));
    }
    Ok(())
}

/// Mechanical system with `k` Pfaffian constraints `Gc(q)^T qdot = 0`,
/// written with canonical momentum `p0`.
#[derive(Clone)]
pub struct ConstrainedPHSystem {
    pub n: usize,
    pub k: usize,
    pub mass: MatrixMap,
    /// `D0(q, p0)`.
    pub damping: StateMatrixMap,
    pub potential: ScalarMap,
    pub potential_gradient: VectorMap,
    /// `G0(q)`, n x m.
    pub input: MatrixMap,
    /// `Gc(q)`, n x k.
    pub constraint: MatrixMap,
}

impl fmt::Debug for ConstrainedPHSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstrainedPHSystem")
            .field("n", &self.n)
            .field("k", &self.k)
            .finish_non_exhaustive()
    }
}

impl ConstrainedPHSystem {
    pub fn m(&self) -> usize {
        self.n - self.k
    }

    pub fn mass_at(&self, q: &Vector) -> Result<Matrix> {
        check_len(q, self.n, "configuration")?;
        let m0 = (self.mass)(q)?;
        check_shape(&m0, self.n, self.n, "M0")?;
        Ok(m0)
    }

    pub fn damping_at(&self, q: &Vector, p0: &Vector) -> Result<Matrix> {
        let d0 = (self.damping)(q, p0)?;
        check_shape(&d0, self.n, self.n, "D0")?;
        Ok(d0)
    }

    pub fn input_at(&self, q: &Vector) -> Result<Matrix> {
        let g0 = (self.input)(q)?;
        check_shape(&g0, self.n, self.m(), "G0")?;
        Ok(g0)
    }

    pub fn constraint_at(&self, q: &Vector) -> Result<Matrix> {
        let gc = (self.constraint)(q)?;
        check_shape(&gc, self.n, self.k, "Gc")?;
        Ok(gc)
    }

    /// `H0 = 1/2 p0^T M0^{-1} p0 + V`.
    pub fn hamiltonian(&self, q: &Vector, p0: &Vector) -> Result<f64> {
        check_len(p0, self.n, "canonical momentum")?;
        let v = linalg::solve(&self.mass_at(q)?, p0, "M0")?;
        Ok(0.5 * p0.dot(&v) + (self.potential)(q)?)
    }

    /// Gradient of `1/2 p0^T M0(q)^{-1} p0` with respect to `q`.
    pub fn kinetic_gradient(&self, q: &Vector, p0: &Vector) -> Result<Vector> {
        linalg::gradient_fd(
            |x| {
                let v = linalg::solve(&self.mass_at(x)?, p0, "M0")?;
                Ok(0.5 * p0.dot(&v))
            },
            q,
            FD_SCALE,
        )
    }
}

/// The momentum change `p~ = Q0^T p0` with `Q0 = [A  Q]`.
///
/// `Q` spans the admissible velocities (`Gc^T Q = 0`) and `A` pairs with
/// `Gc` (`Gc^T A` invertible). When `A` is omitted it defaults to
/// `M0^{-1} Gc`, which makes the cross momentum `mu` vanish identically.
#[derive(Clone)]
pub struct MomentumSplit {
    pub source: Arc<ConstrainedPHSystem>,
    pub annihilator: MatrixMap,
    pub pairing: Option<MatrixMap>,
}

impl MomentumSplit {
    pub fn new(
        source: Arc<ConstrainedPHSystem>,
        annihilator: MatrixMap,
        pairing: Option<MatrixMap>,
    ) -> Self {
        Self {
            source,
            annihilator,
            pairing,
        }
    }

    pub fn annihilator_at(&self, q: &Vector) -> Result<Matrix> {
        let q_mat = (self.annihilator)(q)?;
        check_shape(&q_mat, self.source.n, self.source.m(), "Q")?;
        Ok(q_mat)
    }

    pub fn pairing_at(&self, q: &Vector) -> Result<Matrix> {
        let a = match &self.pairing {
            Some(map) => map(q)?,
            None => {
                let m0_inv = linalg::inverse(&self.source.mass_at(q)?, "M0")?;
                m0_inv * self.source.constraint_at(q)?
            }
        };
        check_shape(&a, self.source.n, self.source.k, "A")?;
        Ok(a)
    }

    /// `Q0 = [A  Q]`.
    pub fn full_transform(&self, q: &Vector) -> Result<Matrix> {
        let a = self.pairing_at(q)?;
        let q_mat = self.annihilator_at(q)?;
        let n = self.source.n;
        let mut q0 = Matrix::zeros(n, n);
        q0.columns_mut(0, self.source.k).copy_from(&a);
        q0.columns_mut(self.source.k, self.source.m())
            .copy_from(&q_mat);
        Ok(q0)
    }

    /// `M~ = Q0^T M0 Q0`.
    pub fn transformed_mass(&self, q: &Vector) -> Result<Matrix> {
        let q0 = self.full_transform(q)?;
        Ok(q0.transpose() * self.source.mass_at(q)? * q0)
    }

    /// `(mu, p) = (A^T p0, Q^T p0)`.
    pub fn split(&self, q: &Vector, p0: &Vector) -> Result<(Vector, Vector)> {
        check_len(p0, self.source.n, "canonical momentum")?;
        Ok((
            self.pairing_at(q)?.transpose() * p0,
            self.annihilator_at(q)?.transpose() * p0,
        ))
    }

    /// `mu = A^T M0 Q (Q^T M0 Q)^{-1} p`, the part of `p~` fixed by the constraints.
    pub fn cross_momentum(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        let p0 = self.canonical_momentum(q, p)?;
        Ok(self.pairing_at(q)?.transpose() * p0)
    }

    /// `p0 = M0 Q (Q^T M0 Q)^{-1} p`.
    pub fn canonical_momentum(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        check_len(p, self.source.m(), "reduced momentum")?;
        let m0 = self.source.mass_at(q)?;
        let q_mat = self.annihilator_at(q)?;
        let m0q = &m0 * &q_mat;
        let reduced_mass = q_mat.transpose() * &m0q;
        Ok(m0q * linalg::solve(&reduced_mass, p, "Q^T M0 Q")?)
    }

    /// Reject `A` or `Q` choices that break the reduction at `q`.
    pub fn check_at(&self, q: &Vector) -> Result<()> {
        let gc = self.source.constraint_at(q)?;
        let q_mat = self.annihilator_at(q)?;
        let residual = linalg::max_abs(&(gc.transpose() * &q_mat));
        if !(residual <= ANNIHILATOR_TOLERANCE) {
            return Err(Error::NotAnnihilator { residual });
        }
        let pairing = gc.transpose() * self.pairing_at(q)?;
        match linalg::inverse(&pairing, "Gc^T A") {
            Ok(_) => Ok(()),
            Err(Error::Singular { .. }) | Err(Error::IllConditioned { .. }) => {
                Err(Error::SingularPairing)
            }
            Err(e) => Err(e),
        }
    }
}

/// Multiplier-free model on the reduced momentum space:
///
/// ```text
/// qdot = Q M^{-1} p
/// pdot = -Q^T grad_q H + (C - D) M^{-1} p + G u
/// H    = 1/2 p^T M^{-1} p + V
/// ```
#[derive(Clone)]
pub struct ReducedPHSystem {
    pub n: usize,
    pub m: usize,
    /// `Q(q)`, n x m.
    pub annihilator: MatrixMap,
    pub mass: MatrixMap,
    /// `D(q, p)`.
    pub damping: StateMatrixMap,
    /// `C(q, p)`, skew-symmetric and linear in `p`.
    pub coriolis: StateMatrixMap,
    /// `G(q)`, m x m.
    pub input: MatrixMap,
    pub potential: ScalarMap,
    pub potential_gradient: VectorMap,
    /// Gradient of `1/2 p^T M(q)^{-1} p` with respect to `q`.
    pub kinetic_gradient: StateVectorMap,
    /// Momentum split this model came from, when it is known.
    pub split: Option<MomentumSplit>,
}

impl fmt::Debug for ReducedPHSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedPHSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("has_source", &self.split.is_some())
            .finish_non_exhaustive()
    }
}

/// Right-hand side of the reduced dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub qdot: Vector,
    pub pdot: Vector,
}

impl ReducedPHSystem {
    pub fn annihilator_at(&self, q: &Vector) -> Result<Matrix> {
        check_len(q, self.n, "configuration")?;
        let a = (self.annihilator)(q)?;
        check_shape(&a, self.n, self.m, "Q")?;
        Ok(a)
    }

    pub fn mass_at(&self, q: &Vector) -> Result<Matrix> {
        check_len(q, self.n, "configuration")?;
        let a = (self.mass)(q)?;
        check_shape(&a, self.m, self.m, "M")?;
        Ok(a)
    }

    pub fn damping_at(&self, q: &Vector, p: &Vector) -> Result<Matrix> {
        check_len(p, self.m, "momentum")?;
        let a = (self.damping)(q, p)?;
        check_shape(&a, self.m, self.m, "D")?;
        Ok(a)
    }

    pub fn coriolis_at(&self, q: &Vector, p: &Vector) -> Result<Matrix> {
        check_len(p, self.m, "momentum")?;
        let a = (self.coriolis)(q, p)?;
        check_shape(&a, self.m, self.m, "C")?;
        Ok(a)
    }

    pub fn input_at(&self, q: &Vector) -> Result<Matrix> {
        let a = (self.input)(q)?;
        check_shape(&a, self.m, self.m, "G")?;
        Ok(a)
    }

    pub fn potential_at(&self, q: &Vector) -> Result<f64> {
        let v = (self.potential)(q)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericalFailure("V"))
        }
    }

    pub fn potential_gradient_at(&self, q: &Vector) -> Result<Vector> {
        let g = (self.potential_gradient)(q)?;
        check_len(&g, self.n, "grad V")?;
        Ok(g)
    }

    pub fn kinetic_gradient_at(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        check_len(p, self.m, "momentum")?;
        let g = (self.kinetic_gradient)(q, p)?;
        check_len(&g, self.n, "grad T")?;
        Ok(g)
    }

    /// `M(q)^{-1} p`, the gradient of `H` with respect to `p`.
    pub fn velocity(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        check_len(p, self.m, "momentum")?;
        linalg::solve(&self.mass_at(q)?, p, "M")
    }

    pub fn kinetic_energy(&self, q: &Vector, p: &Vector) -> Result<f64> {
        Ok(0.5 * p.dot(&self.velocity(q, p)?))
    }

    /// `H = 1/2 p^T M^{-1} p + V(q)`.
    pub fn hamiltonian(&self, q: &Vector, p: &Vector) -> Result<f64> {
        Ok(self.kinetic_energy(q, p)? + self.potential_at(q)?)
    }

    /// Passive output `y = G^T M^{-1} p`.
    pub fn output(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        Ok(self.input_at(q)?.transpose() * self.velocity(q, p)?)
    }

    /// `grad_q H`, kinetic and potential parts together.
    pub fn configuration_gradient(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        Ok(self.kinetic_gradient_at(q, p)? + self.potential_gradient_at(q)?)
    }

    pub fn open_loop_dynamics(
        &self,
        q: &Vector,
        p: &Vector,
        u: &Vector,
    ) -> Result<StateDerivative> {
        check_len(u, self.m, "input")?;
        let q_mat = self.annihilator_at(q)?;
        let v = self.velocity(q, p)?;
        let qdot = &q_mat * &v;
        let dissipative = self.coriolis_at(q, p)? - self.damping_at(q, p)?;
        let pdot = -(q_mat.transpose() * self.configuration_gradient(q, p)?)
            + dissipative * &v
            + self.input_at(q)? * u;
        if !qdot.iter().chain(pdot.iter()).all(|x| x.is_finite()) {
            return Err(Error::NumericalFailure("open-loop dynamics"));
        }
        Ok(StateDerivative { qdot, pdot })
    }

    /// Canonical momentum `p0 = M0 Q (Q^T M0 Q)^{-1} p`; needs the source model.
    pub fn canonical_momentum(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        self.split
            .as_ref()
            .ok_or(Error::MissingSource("canonical momentum"))?
            .canonical_momentum(q, p)
    }
}

/// `C = Q^T (J^T - J) Q`, `J` the q-Jacobian of `M0 Q (Q^T M0 Q)^{-1} p`
/// taken by central differences with step `1e-6 * max(1, |q_j|)`.
///
/// The result is antisymmetrised as `K^T - K` with `K = Q^T J Q`, so it is
/// skew to the last bit.
pub fn coriolis_matrix(split: &MomentumSplit, q: &Vector, p: &Vector) -> Result<Matrix> {
    check_len(p, split.source.m(), "reduced momentum")?;
    let j = linalg::jacobian_fd(|x| split.canonical_momentum(x, p), q, FD_SCALE)?;
    let q_mat = split.annihilator_at(q)?;
    let k = q_mat.transpose() * j * &q_mat;
    let c = k.transpose() - k;
    if !linalg::all_finite(&c) {
        return Err(Error::NumericalFailure("coriolis"));
    }
    Ok(c)
}

/// Build the multiplier-free model.
///
/// `probes` are configurations at which the split is validated: `Q` must
/// annihilate `Gc` and `Gc^T A` must be invertible.
pub fn reduce(split: MomentumSplit, probes: &[Vector]) -> Result<ReducedPHSystem> {
    for q in probes {
        split.check_at(q)?;
    }
    let n = split.source.n;
    let m = split.source.m();

    let s = split.clone();
    let annihilator: MatrixMap = Arc::new(move |q| s.annihilator_at(q));

    let s = split.clone();
    let mass: MatrixMap = Arc::new(move |q| {
        let q_mat = s.annihilator_at(q)?;
        Ok(q_mat.transpose() * s.source.mass_at(q)? * q_mat)
    });

    let s = split.clone();
    let damping: StateMatrixMap = Arc::new(move |q, p| {
        let q_mat = s.annihilator_at(q)?;
        let p0 = s.canonical_momentum(q, p)?;
        Ok(q_mat.transpose() * s.source.damping_at(q, &p0)? * q_mat)
    });

    let s = split.clone();
    let coriolis: StateMatrixMap = Arc::new(move |q, p| coriolis_matrix(&s, q, p));

    let s = split.clone();
    let input: MatrixMap =
        Arc::new(move |q| Ok(s.annihilator_at(q)?.transpose() * s.source.input_at(q)?));

    let s = split.clone();
    let kinetic_gradient: StateVectorMap = Arc::new(move |q, p| {
        linalg::gradient_fd(
            |x| {
                let q_mat = s.annihilator_at(x)?;
                let reduced_mass = q_mat.transpose() * s.source.mass_at(x)? * q_mat;
                Ok(0.5 * p.dot(&linalg::solve(&reduced_mass, p, "M")?))
            },
            q,
            FD_SCALE,
        )
    });

    Ok(ReducedPHSystem {
        n,
        m,
        annihilator,
        mass,
        damping,
        coriolis,
        input,
        potential: split.source.potential.clone(),
        potential_gradient: split.source.potential_gradient.clone(),
        kinetic_gradient,
        split: Some(split),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(a: Matrix) -> MatrixMap {
        Arc::new(move |_| Ok(a.clone()))
    }

    /// Unconstrained point mass pair with a quadratic potential.
    fn free_system() -> ConstrainedPHSystem {
        let m0 = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        ConstrainedPHSystem {
            n: 2,
            k: 0,
            mass: constant(m0),
            damping: Arc::new(|_, _| Ok(Matrix::zeros(2, 2))),
            potential: Arc::new(|q| Ok(0.5 * q.dot(q))),
            potential_gradient: Arc::new(|q| Ok(q.clone())),
            input: constant(Matrix::identity(2, 2)),
            constraint: constant(Matrix::zeros(2, 0)),
        }
    }

    #[test]
    fn identity_reduction_of_unconstrained_system() {
        let sys = Arc::new(free_system());
        let split = MomentumSplit::new(sys.clone(), constant(Matrix::identity(2, 2)), None);
        let q = Vector::from_vec(vec![0.3, -0.7]);
        let red = reduce(split, std::slice::from_ref(&q)).unwrap();
        let p = Vector::from_vec(vec![1.0, 2.0]);
        assert!(linalg::max_abs(&(red.mass_at(&q).unwrap() - sys.mass_at(&q).unwrap())) < 1e-15);
        assert!(linalg::max_abs(&red.coriolis_at(&q, &p).unwrap()) < 1e-9);
        let h0 = sys.hamiltonian(&q, &p).unwrap();
        assert!((red.hamiltonian(&q, &p).unwrap() - h0).abs() < 1e-14);
        assert!(red.kinetic_gradient_at(&q, &p).unwrap().amax() < 1e-8);
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let sys = Arc::new(free_system());
        let split = MomentumSplit::new(sys, constant(Matrix::identity(2, 2)), None);
        let red = reduce(split, &[]).unwrap();
        let zero = Vector::zeros(2);
        let d = red.open_loop_dynamics(&zero, &zero, &zero).unwrap();
        assert_eq!(d.qdot, zero);
        assert_eq!(d.pdot, zero);
        assert_eq!(red.output(&zero, &zero).unwrap(), zero);
        assert_eq!(red.hamiltonian(&zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn non_annihilator_is_rejected() {
        let mut sys = free_system();
        sys.k = 1;
        sys.input = constant(Matrix::from_row_slice(2, 1, &[1.0, 0.0]));
        sys.constraint = constant(Matrix::from_row_slice(2, 1, &[0.0, 1.0]));
        let sys = Arc::new(sys);
        let bad = MomentumSplit::new(
            sys.clone(),
            constant(Matrix::from_row_slice(2, 1, &[1.0, 1.0])),
            None,
        );
        let q = Vector::zeros(2);
        assert!(matches!(
            reduce(bad, std::slice::from_ref(&q)),
            Err(Error::NotAnnihilator { .. })
        ));
        let singular = MomentumSplit::new(
            sys,
            constant(Matrix::from_row_slice(2, 1, &[1.0, 0.0])),
            Some(constant(Matrix::from_row_slice(2, 1, &[1.0, 0.0]))),
        );
        assert!(matches!(
            reduce(singular, &[q]),
            Err(Error::SingularPairing)
        ));
    }

    #[test]
    fn missing_source_is_reported() {
        let sys = Arc::new(free_system());
        let split = MomentumSplit::new(sys, constant(Matrix::identity(2, 2)), None);
        let mut red = reduce(split, &[]).unwrap();
        red.split = None;
        let z = Vector::zeros(2);
        assert!(matches!(
            red.canonical_momentum(&z, &z),
            Err(Error::MissingSource(_))
        ));
    }
}
