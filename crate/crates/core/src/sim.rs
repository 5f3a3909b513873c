//! Fixed-step RK4 integration of open- and closed-loop trajectories, with
//! the diagnostics that monitor the closed-loop energy and chart invariants.

use std::fmt;

use serde::Serialize;

use crate::chained::ChainedSystem;
use crate::controller::{control_z, shaped_energy_z, ControllerParams};
use crate::error::{Error, Result};
use crate::linalg::norm_inf;
use crate::ph::{check_len, MatrixMap, ReducedPHSystem, Vector};

/// Default stopping tolerance on `|z|_inf` and `|p|_inf`.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub initial_q: Vector,
    /// Defaults to zero when `None`.
    pub initial_p: Option<Vector>,
    pub log_stride: usize,
    pub convergence_tol: f64,
}

impl SimConfig {
    pub fn new(initial_q: Vector, dt: f64, duration: f64) -> Self {
        Self {
            dt,
            duration,
            initial_q,
            initial_p: None,
            log_stride: 1,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        }
    }

    /// A zero duration is accepted and produces an empty record.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter {
                field: "dt",
                reason: format!("must be strictly positive, got {}", self.dt),
            });
        }
        if !(self.duration.is_finite() && (self.duration == 0.0 || self.duration >= self.dt)) {
            return Err(Error::InvalidParameter {
                field: "duration",
                reason: format!("must be 0 or at least dt, got {}", self.duration),
            });
        }
        if self.log_stride == 0 {
            return Err(Error::InvalidParameter {
                field: "log_stride",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::InvalidParameter {
                field: "convergence_tol",
                reason: format!("must be non-negative, got {}", self.convergence_tol),
            });
        }
        if self.initial_q.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "initial_q",
                reason: "entries must be finite".into(),
            });
        }
        Ok(())
    }

    fn momentum(&self, m: usize) -> Result<Vector> {
        match &self.initial_p {
            Some(p) => {
                check_len(p, m, "initial momentum")?;
                Ok(p.clone())
            }
            None => Ok(Vector::zeros(m)),
        }
    }

    fn steps(&self) -> usize {
        if self.duration == 0.0 {
            0
        } else {
            (self.duration / self.dt - 1e-9).ceil() as usize
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    Completed,
    Converged,
    ChartBreakdown,
    NumericalFailure,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "Completed",
            RunStatus::Converged => "Converged",
            RunStatus::ChartBreakdown => "ChartBreakdown",
            RunStatus::NumericalFailure => "NumericalFailure",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Converged)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn is_chart_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ChartGuard { .. }
            | Error::ChartViolation(_)
            | Error::DomainViolation(_)
            | Error::NearSingularChart { .. }
    )
}

fn status_of(e: &Error) -> RunStatus {
    if is_chart_error(e) {
        RunStatus::ChartBreakdown
    } else {
        RunStatus::NumericalFailure
    }
}

/// What the step monitor asks the integrator to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Halt(RunStatus),
}

/// Raw output of [`integrate_rk4`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub status: RunStatus,
    /// Message of the error that ended the run, if any.
    pub message: Option<String>,
}

impl StateTrajectory {
    pub fn last(&self) -> Option<(f64, &Vector)> {
        self.times.last().copied().zip(self.states.last())
    }
}

/// Classic fourth-order Runge-Kutta with fixed step `dt` up to `duration`;
/// the last step is shortened to land on `duration`.
///
/// Every `log_stride`-th state is stored, plus the final one. `monitor` sees
/// every accepted state and may halt the run. A dynamics error or a
/// non-finite stage ends the run with the states reached so far.
pub fn integrate_rk4<F, M>(
    mut dynamics: F,
    x0: &Vector,
    dt: f64,
    duration: f64,
    log_stride: usize,
    mut monitor: M,
) -> StateTrajectory
where
    F: FnMut(f64, &Vector) -> Result<Vector>,
    M: FnMut(f64, &Vector) -> Flow,
{
    let stride = log_stride.max(1);
    let mut out = StateTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        status: RunStatus::Completed,
        message: None,
    };
    let steps = if duration > 0.0 {
        (duration / dt - 1e-9).ceil() as usize
    } else {
        0
    };
    if steps == 0 {
        return out;
    }
    if !x0.iter().all(|v| v.is_finite()) {
        out.status = RunStatus::NumericalFailure;
        out.message = Some("non-finite initial state".into());
        return out;
    }
    out.times.push(0.0);
    out.states.push(x0.clone());
    if let Flow::Halt(status) = monitor(0.0, x0) {
        out.status = status;
        return out;
    }

    let mut x = x0.clone();
    let mut t = 0.0;
    for i in 1..=steps {
        let t_next = (i as f64 * dt).min(duration);
        let h = t_next - t;
        let step = (|| {
            let k1 = dynamics(t, &x)?;
            let k2 = dynamics(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
            let k3 = dynamics(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
            let k4 = dynamics(t_next, &(&x + &k3 * h))?;
            let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if next.iter().all(|v| v.is_finite()) {
                Ok(next)
            } else {
                Err(Error::NumericalFailure("integration"))
            }
        })();
        let next = match step {
            Ok(next) => next,
            Err(e) => {
                out.status = status_of(&e);
                out.message = Some(e.to_string());
                record_final(&mut out, t, &x);
                return out;
            }
        };
        x = next;
        t = t_next;
        let flow = monitor(t, &x);
        if i % stride == 0 || i == steps || flow != Flow::Continue {
            out.times.push(t);
            out.states.push(x.clone());
        }
        if let Flow::Halt(status) = flow {
            out.status = status;
            return out;
        }
    }
    out
}

fn record_final(out: &mut StateTrajectory, t: f64, x: &Vector) {
    if out.times.last() != Some(&t) {
        out.times.push(t);
        out.states.push(x.clone());
    }
}

/// One logged row of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: Vector,
    /// Empty for open-loop runs.
    pub z: Vector,
    /// Empty for open-loop runs.
    pub w: Vector,
    pub p: Vector,
    pub u: Vector,
    /// `H_d` for closed-loop runs, the physical `H` for open-loop runs.
    pub h_d: f64,
    /// Time derivative of `h_d` predicted by the model.
    pub dissipation_rate: f64,
    /// `|Gc^T qdot|_inf`, or NaN when `Gc` is unknown.
    pub constraint_residual: f64,
}

/// Quantities tracked on every integration step, logged or not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub steps: usize,
    pub max_energy_increase: f64,
    /// `min |w1|` over accepted states; NaN for open-loop runs.
    pub min_abs_w1: f64,
    pub w1_sign_changed: bool,
}

impl Default for StepStats {
    fn default() -> Self {
        Self {
            steps: 0,
            max_energy_increase: 0.0,
            min_abs_w1: f64::NAN,
            w1_sign_changed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub status: RunStatus,
    pub message: Option<String>,
    pub stats: StepStats,
}

fn constraint_residual(constraint: Option<&MatrixMap>, q: &Vector, qdot: &Vector) -> f64 {
    match constraint.map(|gc| gc(q)) {
        Some(Ok(gc)) => norm_inf(&(gc.transpose() * qdot)),
        _ => f64::NAN,
    }
}

fn split_state(x: &Vector, n: usize) -> (Vector, Vector) {
    (
        x.rows(0, n).into_owned(),
        x.rows(n, x.len() - n).into_owned(),
    )
}

fn join_state(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Closed loop of `sys` under [`control_z`], integrated in `(z, p)`.
///
/// `cfg.initial_q` is in the original coordinates. The run halts with
/// `Converged` once `|z|_inf` and `|p|_inf` drop below the convergence
/// tolerance, and on a guard trip (`Converged` when `z` is already small,
/// `ChartBreakdown` otherwise). A change of sign of `w1 = z1` is a
/// `ChartBreakdown`.
pub fn run_closed_loop(
    sys: &ChainedSystem,
    params: &ControllerParams,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    params.validate()?;
    let n = sys.n();
    let m = sys.z_system.m;
    check_len(&cfg.initial_q, n, "initial configuration")?;
    let p0 = cfg.momentum(m)?;
    let z0 = sys.to_z(&cfg.initial_q)?;
    if z0[0] == 0.0 {
        return Err(Error::InvalidStart);
    }
    if cfg.steps() == 0 {
        return Ok(TrajectoryRecord {
            samples: Vec::new(),
            status: RunStatus::Completed,
            message: None,
            stats: StepStats::default(),
        });
    }
    let x0 = join_state(&z0, &p0);
    let zsys = &sys.z_system;
    let sign = z0[0].signum();
    let tol = cfg.convergence_tol;

    let dynamics = |_t: f64, x: &Vector| {
        let (z, p) = split_state(x, n);
        let u = control_z(sys, &z, &p, params)?;
        let d = zsys.open_loop_dynamics(&z, &p, &u)?;
        Ok(join_state(&d.qdot, &d.pdot))
    };

    let mut stats = StepStats::default();
    let mut last_energy: Option<f64> = None;
    let mut halt_message: Option<String> = None;
    let monitor = |_t: f64, x: &Vector| {
        let (z, p) = split_state(x, n);
        stats.min_abs_w1 = stats.min_abs_w1.min(z[0].abs());
        if stats.min_abs_w1.is_nan() {
            stats.min_abs_w1 = z[0].abs();
        }
        let small = norm_inf(&z) < tol;
        if z[0].signum() != sign || z[0] == 0.0 {
            stats.w1_sign_changed = z[0] != 0.0;
            halt_message = Some(format!("w1 reached {:e}", z[0]));
            return Flow::Halt(if small {
                RunStatus::Converged
            } else {
                RunStatus::ChartBreakdown
            });
        }
        match shaped_energy_z(sys, &z, &p, params) {
            Ok(e) => {
                if let Some(prev) = last_energy {
                    stats.max_energy_increase = stats.max_energy_increase.max(e.h_d - prev);
                }
                last_energy = Some(e.h_d);
            }
            Err(e) => {
                let status = if small && matches!(e, Error::ChartGuard { .. }) {
                    RunStatus::Converged
                } else {
                    status_of(&e)
                };
                halt_message = Some(e.to_string());
                return Flow::Halt(status);
            }
        }
        stats.steps += 1;
        if small && norm_inf(&p) < tol {
            Flow::Halt(RunStatus::Converged)
        } else {
            Flow::Continue
        }
    };

    let raw = integrate_rk4(dynamics, &x0, cfg.dt, cfg.duration, cfg.log_stride, monitor);
    // the first monitor call is the initial state, not a step
    stats.steps = stats.steps.saturating_sub(1);

    let mut status = raw.status;
    let mut message = raw.message.clone().or(halt_message);
    if status == RunStatus::ChartBreakdown {
        if let Some((_, x)) = raw.last() {
            if norm_inf(&x.rows(0, n).into_owned()) < tol {
                status = RunStatus::Converged;
            }
        }
    }

    let mut samples = Vec::with_capacity(raw.times.len());
    for (t, x) in raw.times.iter().zip(&raw.states) {
        match closed_loop_sample(sys, params, *t, x) {
            Ok(sample) => samples.push(sample),
            Err(e) => {
                if status.is_success() && samples.is_empty() {
                    status = status_of(&e);
                }
                message.get_or_insert_with(|| e.to_string());
                break;
            }
        }
    }
    Ok(TrajectoryRecord {
        samples,
        status,
        message,
        stats,
    })
}

fn closed_loop_sample(
    sys: &ChainedSystem,
    params: &ControllerParams,
    t: f64,
    x: &Vector,
) -> Result<TrajectorySample> {
    let (z, p) = split_state(x, sys.n());
    let q = sys.to_q(&z)?;
    let w = sys.wchart.forward(&z)?;
    let u = control_z(sys, &z, &p, params)?;
    let energy = shaped_energy_z(sys, &z, &p, params)?;
    let qdot = sys.base.annihilator_at(&q)? * sys.base.velocity(&q, &p)?;
    Ok(TrajectorySample {
        t,
        constraint_residual: constraint_residual(sys.constraint.as_ref(), &q, &qdot),
        q,
        z,
        w,
        p,
        u,
        h_d: energy.h_d,
        dissipation_rate: energy.dissipation_rate,
    })
}

/// Unforced run of a reduced model, integrated in `(q, p)`.
///
/// `h_d` holds the physical Hamiltonian and `dissipation_rate` the
/// predicted `dH/dt = -v^T D v`.
pub fn run_open_loop(
    sys: &ReducedPHSystem,
    constraint: Option<&MatrixMap>,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let n = sys.n;
    check_len(&cfg.initial_q, n, "initial configuration")?;
    let p0 = cfg.momentum(sys.m)?;
    let u = Vector::zeros(sys.m);
    let dynamics = |_t: f64, x: &Vector| {
        let (q, p) = split_state(x, n);
        let d = sys.open_loop_dynamics(&q, &p, &u)?;
        Ok(join_state(&d.qdot, &d.pdot))
    };
    let mut stats = StepStats::default();
    let mut last_energy: Option<f64> = None;
    let monitor = |_t: f64, x: &Vector| {
        let (q, p) = split_state(x, n);
        match sys.hamiltonian(&q, &p) {
            Ok(h) => {
                if let Some(prev) = last_energy {
                    stats.max_energy_increase = stats.max_energy_increase.max(h - prev);
                    stats.steps += 1;
                }
                last_energy = Some(h);
                Flow::Continue
            }
            Err(e) => Flow::Halt(status_of(&e)),
        }
    };
    let raw = integrate_rk4(
        dynamics,
        &join_state(&cfg.initial_q, &p0),
        cfg.dt,
        cfg.duration,
        cfg.log_stride,
        monitor,
    );
    let mut samples = Vec::with_capacity(raw.times.len());
    let mut status = raw.status;
    let mut message = raw.message.clone();
    for (t, x) in raw.times.iter().zip(&raw.states) {
        let (q, p) = split_state(x, n);
        let sample = (|| {
            let v = sys.velocity(&q, &p)?;
            let qdot = sys.annihilator_at(&q)? * &v;
            Ok::<_, Error>(TrajectorySample {
                t: *t,
                constraint_residual: constraint_residual(constraint, &q, &qdot),
                h_d: sys.hamiltonian(&q, &p)?,
                dissipation_rate: -v.dot(&(sys.damping_at(&q, &p)? * &v)),
                z: Vector::zeros(0),
                w: Vector::zeros(0),
                u: u.clone(),
                q,
                p,
            })
        })();
        match sample {
            Ok(s) => samples.push(s),
            Err(e) => {
                if status.is_success() {
                    status = status_of(&e);
                }
                message.get_or_insert_with(|| e.to_string());
                break;
            }
        }
    }
    Ok(TrajectoryRecord {
        samples,
        status,
        message,
        stats,
    })
}

/// Summary of a [`TrajectoryRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub status: RunStatus,
    pub samples: usize,
    pub steps: usize,
    pub final_time: f64,
    /// Largest step-to-step increase of the monitored energy (0 if none).
    pub max_energy_increase: f64,
    /// `min |w1|` over all steps; NaN for open-loop runs.
    pub min_abs_w1: f64,
    pub w1_sign_changed: bool,
    pub final_q_norm: f64,
    pub final_p_norm: f64,
    pub max_constraint_residual: f64,
    pub max_control_norm: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

pub fn diagnostics(rec: &TrajectoryRecord) -> Diagnostics {
    let logged_increase = rec
        .samples
        .windows(2)
        .map(|w| w[1].h_d - w[0].h_d)
        .fold(0.0, f64::max);
    let last = rec.samples.last();
    let residuals = rec
        .samples
        .iter()
        .map(|s| s.constraint_residual)
        .filter(|r| !r.is_nan());
    Diagnostics {
        status: rec.status,
        samples: rec.samples.len(),
        steps: rec.stats.steps,
        final_time: last.map_or(0.0, |s| s.t),
        max_energy_increase: rec.stats.max_energy_increase.max(logged_increase),
        min_abs_w1: rec.stats.min_abs_w1,
        w1_sign_changed: rec.stats.w1_sign_changed,
        final_q_norm: last.map_or(0.0, |s| norm_inf(&s.q)),
        final_p_norm: last.map_or(0.0, |s| norm_inf(&s.p)),
        max_constraint_residual: residuals.fold(0.0, f64::max),
        max_control_norm: rec
            .samples
            .iter()
            .map(|s| norm_inf(&s.u))
            .fold(0.0, f64::max),
        initial_energy: rec.samples.first().map_or(0.0, |s| s.h_d),
        final_energy: last.map_or(0.0, |s| s.h_d),
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "status                   {}", self.status)?;
        writeln!(f, "final time               {}", self.final_time)?;
        writeln!(f, "integration steps        {}", self.steps)?;
        writeln!(f, "logged samples           {}", self.samples)?;
        writeln!(f, "initial energy           {:e}", self.initial_energy)?;
        writeln!(f, "final energy             {:e}", self.final_energy)?;
        writeln!(f, "max energy increase      {:e}", self.max_energy_increase)?;
        writeln!(f, "min |w1|                 {:e}", self.min_abs_w1)?;
        writeln!(f, "w1 changed sign          {}", self.w1_sign_changed)?;
        writeln!(f, "final |q|_inf            {:e}", self.final_q_norm)?;
        writeln!(f, "final |p|_inf            {:e}", self.final_p_norm)?;
        writeln!(
            f,
            "max constraint residual  {:e}",
            self.max_constraint_residual
        )?;
        write!(f, "max |u|_inf              {:e}", self.max_control_norm)
    }
}
