//! Self-checks of the library's structural invariants, grouped into subsets
//! and run in parallel. The CLI `verify` command prints their results.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::car::{build_car, car_chained, car_fz, car_reduced, car_reduced_global, CarParams};
use crate::chained::{qz_perp, s_matrix, RationalMatrix, WChart};
use crate::controller::{control_w, control_z, ControllerParams};
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, norm_inf};
use crate::ph::{ConstrainedPHSystem, Vector, FD_SCALE};
use crate::sim::{integrate_rk4, run_open_loop, Flow, RunStatus, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    Transforms,
    Structure,
    Energy,
    Reduction,
}

impl Subset {
    pub const NAMES: [&'static str; 5] = ["all", "transforms", "structure", "energy", "reduction"];

    fn includes(self, group: Subset) -> bool {
        self == Subset::All || self == group
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all" => Ok(Subset::All),
            "transforms" => Ok(Subset::Transforms),
            "structure" => Ok(Subset::Structure),
            "energy" => Ok(Subset::Energy),
            "reduction" => Ok(Subset::Reduction),
            other => Err(format!(
                "unknown subset `{other}` (expected one of {})",
                Subset::NAMES.join(", ")
            )),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Subset::All => "all",
            Subset::Transforms => "transforms",
            Subset::Structure => "structure",
            Subset::Energy => "energy",
            Subset::Reduction => "reduction",
        };
        f.write_str(name)
    }
}

pub type SMatrixProvider = Arc<dyn Fn(usize) -> Result<RationalMatrix> + Send + Sync>;

#[derive(Clone)]
pub struct VerifyOptions {
    pub subset: Subset,
    pub seed: u64,
    /// Source of `S_n` for the invertibility check; replaced in fault-injection tests.
    pub s_matrix: SMatrixProvider,
    pub car: CarParams,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            subset: Subset::All,
            seed: 0,
            s_matrix: Arc::new(s_matrix),
            car: CarParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub subset: Subset,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn measured(name: &'static str, subset: Subset, value: f64, tol: f64) -> Self {
        Self {
            name,
            subset,
            passed: value < tol,
            detail: format!("max {value:.3e} (tol {tol:e})"),
        }
    }

    fn from_result(name: &'static str, subset: Subset, r: Result<CheckResult>) -> Self {
        r.unwrap_or_else(|e| Self {
            name,
            subset,
            passed: false,
            detail: format!("error: {e}"),
        })
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict}  {:<24} {:<11} {}",
            self.name, self.subset, self.detail
        )
    }
}

type Check = fn(&VerifyOptions) -> Result<CheckResult>;

const CHECKS: [(&str, Subset, Check); 11] = [
    ("s_matrix_invertibility", Subset::Transforms, check_s_matrix),
    ("fw_roundtrip", Subset::Transforms, check_fw_roundtrip),
    ("fw_closed_form_n3", Subset::Transforms, check_fw_n3),
    (
        "chained_structure",
        Subset::Transforms,
        check_chained_structure,
    ),
    ("skew_symmetry", Subset::Structure, check_skew),
    ("annihilator", Subset::Structure, check_annihilator),
    ("shaped_gradient", Subset::Structure, check_shaped_gradient),
    (
        "kinetic_gradient",
        Subset::Structure,
        check_kinetic_gradient,
    ),
    (
        "control_agreement",
        Subset::Structure,
        check_control_agreement,
    ),
    ("energy_conservation", Subset::Energy, check_conservation),
    (
        "reduction_oracle",
        Subset::Reduction,
        check_reduction_oracle,
    ),
];

/// Runs every check in the selected subset, one thread per check. Results
/// come back in a fixed order.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckResult> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = CHECKS
            .iter()
            .filter(|(_, group, _)| opts.subset.includes(*group))
            .map(|&(name, group, check)| (name, group, scope.spawn(move || check(opts))))
            .collect();
        handles
            .into_iter()
            .map(|(name, group, handle)| {
                let r = handle
                    .join()
                    .unwrap_or(Err(Error::NumericalFailure("check panicked")));
                CheckResult::from_result(name, group, r)
            })
            .collect()
    })
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

fn rng(opts: &VerifyOptions, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
    r.set_stream(stream);
    r
}

fn symmetric(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let magnitude = rng.gen_range(lo..=hi);
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Random car configuration inside the chart with `|x1| >= 0.1`, and a
/// random reduced momentum.
pub fn sample_car_state(rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let q = Vector::from_vec(vec![
        symmetric(rng, 0.1, 5.0),
        rng.gen_range(-5.0..=5.0),
        rng.gen_range(-1.2..=1.2),
        rng.gen_range(-1.2..=1.2),
    ]);
    let p = Vector::from_vec(vec![rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0)]);
    (q, p)
}

/// Random `w` with `|w1|` in `[0.1, 10]` and the other entries in `[-1, 1]`.
pub fn sample_w(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    let mut w = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
    w[0] = symmetric(rng, 0.1, 10.0);
    w
}

fn check_s_matrix(opts: &VerifyOptions) -> Result<CheckResult> {
    let singular: Vec<usize> = (3..=10)
        .filter(|&n| (opts.s_matrix)(n).map_or(true, |s| s.determinant().is_zero()))
        .collect();
    Ok(CheckResult {
        name: "s_matrix_invertibility",
        subset: Subset::Transforms,
        passed: singular.is_empty(),
        detail: if singular.is_empty() {
            "det S_n != 0 for n = 3..10".into()
        } else {
            format!("singular for n = {singular:?}")
        },
    })
}

/// Largest `|f_w(f_w^{-1}(w)) - w|_inf` over 1000 samples per `n`.
pub fn fw_roundtrip_errors(seed: u64, samples: usize) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for n in 3..=8 {
        let chart = WChart::new(n)?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(100 + n as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let w = sample_w(&mut r, n);
            let back = chart.forward(&chart.inverse(&w)?)?;
            worst = worst.max(norm_inf(&(back - &w)));
        }
        out.push((n, worst));
    }
    Ok(out)
}

fn check_fw_roundtrip(opts: &VerifyOptions) -> Result<CheckResult> {
    const TOL: f64 = 1e-9;
    let errors = fw_roundtrip_errors(opts.seed, 1000)?;
    let failing: Vec<String> = errors
        .iter()
        .filter(|(_, e)| !(*e < TOL))
        .map(|(n, e)| format!("n={n}: {e:.1e}"))
        .collect();
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(CheckResult {
        name: "fw_roundtrip",
        subset: Subset::Transforms,
        passed: failing.is_empty(),
        detail: if failing.is_empty() {
            format!("max {worst:.3e} (tol {TOL:e})")
        } else {
            format!("tol {TOL:e} exceeded: {}", failing.join(", "))
        },
    })
}

/// `f_w` for `n = 3` written out: `(z1, z2/z1 - 2 z3/z1^2, 2 z3/z1^2)`.
fn check_fw_n3(opts: &VerifyOptions) -> Result<CheckResult> {
    let chart = WChart::new(3)?;
    let mut r = rng(opts, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z = Vector::from_vec(vec![
            symmetric(&mut r, 0.1, 10.0),
            r.gen_range(-5.0..=5.0),
            r.gen_range(-5.0..=5.0),
        ]);
        let expected = Vector::from_vec(vec![
            z[0],
            z[1] / z[0] - 2.0 * z[2] / (z[0] * z[0]),
            2.0 * z[2] / (z[0] * z[0]),
        ]);
        let w = chart.forward(&z)?;
        worst = worst.max(norm_inf(&(w - &expected)) / norm_inf(&expected).max(1.0));
    }
    Ok(CheckResult::measured(
        "fw_closed_form_n3",
        Subset::Transforms,
        worst,
        1e-12,
    ))
}

fn check_chained_structure(opts: &VerifyOptions) -> Result<CheckResult> {
    let sys = car_chained(opts.car)?;
    let mut r = rng(opts, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (q, _) = sample_car_state(&mut r);
        let z = car_fz(opts.car, &q)?;
        worst = worst.max(max_abs(&(qz_perp(&z)? * sys.z_system.annihilator_at(&z)?)));
    }
    Ok(CheckResult::measured(
        "chained_structure",
        Subset::Transforms,
        worst,
        1e-12,
    ))
}

fn check_skew(opts: &VerifyOptions) -> Result<CheckResult> {
    let analytic = car_reduced(opts.car)?;
    let generic = car_reduced_global(opts.car)?;
    let mut r = rng(opts, 5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let (q, p) = sample_car_state(&mut r);
        let sys = if i % 2 == 0 { &analytic } else { &generic };
        let c = sys.coriolis_at(&q, &p)?;
        worst = worst.max(max_abs(&(&c + c.transpose())));
    }
    Ok(CheckResult::measured(
        "skew_symmetry",
        Subset::Structure,
        worst,
        1e-10,
    ))
}

fn check_annihilator(opts: &VerifyOptions) -> Result<CheckResult> {
    let car = build_car(opts.car)?;
    let analytic = car_reduced(opts.car)?;
    let generic = car_reduced_global(opts.car)?;
    let mut r = rng(opts, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (q, _) = sample_car_state(&mut r);
        let gc = car.constraint_at(&q)?;
        for sys in [&analytic, &generic] {
            worst = worst.max(max_abs(&(gc.transpose() * sys.annihilator_at(&q)?)));
        }
    }
    Ok(CheckResult::measured(
        "annihilator",
        Subset::Structure,
        worst,
        1e-12,
    ))
}

fn check_shaped_gradient(opts: &VerifyOptions) -> Result<CheckResult> {
    let params = ControllerParams::car_reference();
    let mut r = rng(opts, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let w = sample_w(&mut r, 4);
        let fd = linalg::gradient_fd(|x| Ok(params.shaped_potential(x)), &w, FD_SCALE)?;
        worst = worst.max(norm_inf(&(fd - params.shaped_potential_gradient(&w))));
    }
    Ok(CheckResult::measured(
        "shaped_gradient",
        Subset::Structure,
        worst,
        1e-8,
    ))
}

fn check_kinetic_gradient(opts: &VerifyOptions) -> Result<CheckResult> {
    let sys = car_reduced(opts.car)?;
    let mut r = rng(opts, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (mut q, p) = sample_car_state(&mut r);
        q[2] *= 0.8;
        q[3] *= 0.8;
        let fd = linalg::gradient_fd(|x| sys.kinetic_energy(x, &p), &q, FD_SCALE)?;
        let exact = sys.kinetic_gradient_at(&q, &p)?;
        worst = worst.max(norm_inf(&(fd - &exact)) / norm_inf(&exact).max(1.0));
    }
    Ok(CheckResult::measured(
        "kinetic_gradient",
        Subset::Structure,
        worst,
        1e-6,
    ))
}

/// Random chart-valid closed-loop state `(z, w, p)` for the car: `w` is
/// drawn as in [`sample_w`] and rejected until `f_w^{-1}(w)` lies inside
/// the car chart.
pub fn sample_car_chained_state(
    sys: &crate::chained::ChainedSystem,
    rng: &mut ChaCha8Rng,
) -> Result<(Vector, Vector, Vector)> {
    loop {
        let w = sample_w(rng, 4);
        let z = sys.wchart.inverse(&w)?;
        let p = Vector::from_vec(vec![rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0)]);
        if sys.to_q(&z).is_ok() {
            return Ok((z, w, p));
        }
    }
}

fn check_control_agreement(opts: &VerifyOptions) -> Result<CheckResult> {
    let sys = car_chained(opts.car)?;
    let sys_w = sys.w_system();
    let params = ControllerParams::car_reference();
    let mut r = rng(opts, 9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (z, _, p) = sample_car_chained_state(&sys, &mut r)?;
        let w = sys.wchart.forward(&z)?;
        let uz = control_z(&sys, &z, &p, &params)?;
        let uw = control_w(&sys_w, &w, &p, &params)?;
        worst = worst.max(norm_inf(&(uz - uw)));
    }
    Ok(CheckResult::measured(
        "control_agreement",
        Subset::Structure,
        worst,
        1e-9,
    ))
}

/// Relative drift of `H` in an undamped, unforced car run of `duration`
/// seconds from `(q0, p0)`, using the globally valid reduction.
pub fn conservation_drift(
    params: CarParams,
    q0: &Vector,
    p0: &Vector,
    dt: f64,
    duration: f64,
) -> Result<(RunStatus, f64)> {
    let sys = car_reduced_global(params.with_damping_scaled(0.0))?;
    let mut cfg = SimConfig::new(q0.clone(), dt, duration);
    cfg.initial_p = Some(p0.clone());
    let rec = run_open_loop(&sys, None, &cfg)?;
    let h0 = rec.samples.first().map_or(0.0, |s| s.h_d);
    let drift = rec
        .samples
        .iter()
        .map(|s| (s.h_d - h0).abs() / h0)
        .fold(0.0, f64::max);
    Ok((rec.status, drift))
}

fn check_conservation(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut r = rng(opts, 10);
    let (q0, _) = sample_car_state(&mut r);
    let (status, drift) =
        conservation_drift(opts.car, &q0, &Vector::from_vec(vec![1.0, 1.0]), 1e-3, 10.0)?;
    let mut result = CheckResult::measured("energy_conservation", Subset::Energy, drift, 1e-6);
    if status != RunStatus::Completed {
        result.passed = false;
        result.detail = format!("run ended with {status}; {}", result.detail);
    }
    Ok(result)
}

/// Canonical-momentum trajectory of the constrained system with the
/// multipliers solved at every stage.
///
/// The state is `(q, p0)`. The multiplier enforces the differentiated
/// constraint `d/dt (Gc^T M0^{-1} p0) = 0`, and after every step `p0` is
/// projected back onto `Gc^T M0^{-1} p0 = 0`. Returns `(t, q, p0)` at every
/// step.
pub fn constrained_trajectory(
    sys: &ConstrainedPHSystem,
    q0: &Vector,
    p0: &Vector,
    input: impl Fn(f64) -> Vector,
    dt: f64,
    duration: f64,
) -> Result<Vec<(f64, Vector, Vector)>> {
    let n = sys.n;
    let dynamics = |t: f64, x: &Vector| -> Result<Vector> {
        let q = x.rows(0, n).into_owned();
        let p0 = x.rows(n, n).into_owned();
        let m0 = sys.mass_at(&q)?;
        let qdot = linalg::solve(&m0, &p0, "M0")?;
        let gc = sys.constraint_at(&q)?;
        let free = -sys.kinetic_gradient(&q, &p0)?
            - (sys.potential_gradient)(&q)?
            - sys.damping_at(&q, &p0)? * &qdot
            + sys.input_at(&q)? * input(t);
        // d/dt (Gc^T M0^{-1}) p0 along qdot, p0 held fixed
        let h = FD_SCALE * norm_inf(&q).max(1.0);
        let velocity_constraint = |x: &Vector| -> Result<Vector> {
            Ok(sys.constraint_at(x)?.transpose() * linalg::solve(&sys.mass_at(x)?, &p0, "M0")?)
        };
        let drift = (velocity_constraint(&(&q + &qdot * h))?
            - velocity_constraint(&(&q - &qdot * h))?)
            / (2.0 * h);
        let m0_inv_gc = linalg::inverse(&m0, "M0")? * &gc;
        let lambda = linalg::solve(
            &(gc.transpose() * &m0_inv_gc),
            &(-drift - m0_inv_gc.transpose() * &free),
            "Gc^T M0^{-1} Gc",
        )?;
        let p0dot = free + &gc * lambda;
        Ok(Vector::from_iterator(
            2 * n,
            qdot.iter().chain(p0dot.iter()).copied(),
        ))
    };

    let project = |q: &Vector, p0: &Vector| -> Result<Vector> {
        let gc = sys.constraint_at(q)?;
        let m0_inv_gc = linalg::inverse(&sys.mass_at(q)?, "M0")? * &gc;
        let violation = m0_inv_gc.transpose() * p0;
        let lambda = linalg::solve(&(gc.transpose() * &m0_inv_gc), &violation, "projection")?;
        Ok(p0 - gc * lambda)
    };

    let x0 = Vector::from_iterator(2 * n, q0.iter().chain(project(q0, p0)?.iter()).copied());
    let mut out = vec![(0.0, q0.clone(), x0.rows(n, n).into_owned())];
    let mut x = x0;
    let steps = (duration / dt - 1e-9).ceil() as usize;
    for i in 0..steps {
        let t = i as f64 * dt;
        let raw = integrate_rk4(
            |s, y| dynamics(t + s, y),
            &x,
            dt,
            dt,
            1,
            |_, _| Flow::Continue,
        );
        if raw.status != RunStatus::Completed {
            return Err(Error::NumericalFailure("constrained oracle"));
        }
        let (_, next) = raw
            .last()
            .ok_or(Error::NumericalFailure("constrained oracle"))?;
        let q = next.rows(0, n).into_owned();
        let p0 = project(&q, &next.rows(n, n).into_owned())?;
        x = Vector::from_iterator(2 * n, q.iter().chain(p0.iter()).copied());
        out.push(((i + 1) as f64 * dt, q, p0));
    }
    Ok(out)
}

/// Largest infinity-norm gap in `(q, Q^T p0)` between the reduced car model
/// and [`constrained_trajectory`] over `duration` seconds.
pub fn reduction_oracle_gap(params: CarParams, dt: f64, duration: f64) -> Result<f64> {
    let reduced = car_reduced(params)?;
    let source = build_car(params)?;
    let q0 = Vector::from_vec(vec![0.5, -1.0, 0.3, -0.2]);
    let p = Vector::from_vec(vec![1.0, -0.5]);
    let input = |t: f64| Vector::from_vec(vec![t.sin(), 0.5 * (2.0 * t).cos()]);
    let p0 = reduced.canonical_momentum(&q0, &p)?;
    let oracle = constrained_trajectory(&source, &q0, &p0, input, dt, duration)?;

    let n = reduced.n;
    let mut x = Vector::from_iterator(n + 2, q0.iter().chain(p.iter()).copied());
    let mut worst: f64 = 0.0;
    for (i, (_, q_ref, p0_ref)) in oracle.iter().enumerate() {
        let q = x.rows(0, n).into_owned();
        let p_ref = reduced.annihilator_at(q_ref)?.transpose() * p0_ref;
        worst = worst
            .max(norm_inf(&(&q - q_ref)))
            .max(norm_inf(&(x.rows(n, 2).into_owned() - p_ref)));
        if i + 1 == oracle.len() {
            break;
        }
        let t = i as f64 * dt;
        let raw = integrate_rk4(
            |s, y: &Vector| {
                let q = y.rows(0, n).into_owned();
                let p = y.rows(n, 2).into_owned();
                let d = reduced.open_loop_dynamics(&q, &p, &input(t + s))?;
                Ok(Vector::from_iterator(
                    n + 2,
                    d.qdot.iter().chain(d.pdot.iter()).copied(),
                ))
            },
            &x,
            dt,
            dt,
            1,
            |_, _| Flow::Continue,
        );
        x = raw
            .last()
            .ok_or(Error::NumericalFailure("reduced run"))?
            .1
            .clone();
    }
    Ok(worst)
}

fn check_reduction_oracle(opts: &VerifyOptions) -> Result<CheckResult> {
    let gap = reduction_oracle_gap(opts.car, 1e-4, 1.0)?;
    Ok(CheckResult::measured(
        "reduction_oracle",
        Subset::Reduction,
        gap,
        1e-4,
    ))
}
