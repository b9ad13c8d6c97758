//! Numerical integration of the generative ODE, backward from t=1 to t=0.
//!
//! Three integrators: fixed-step Euler, fixed-step Heun (2nd order), and
//! the adaptive Dormand-Prince 5(4) pair with a PI step controller. Every
//! solver reports the exact number of vector-field evaluations it made.
//!
//! NFE policy: Euler makes `n_steps` evaluations. Heun evaluates both
//! stages at every step including the last, so `nfe = 2 * n_steps`.
//! Dormand-Prince spends 2 evaluations choosing the initial step, then 6
//! per attempted step; the first-same-as-last stage is reused across
//! accepted steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::loss::Parameterization;
use crate::net::{self, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Euler,
    Heun2,
    Rk45,
}

/// Solver selection plus the knobs the selected kind needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Step count for the fixed-step kinds.
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_tol")]
    pub atol: f64,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    #[serde(default)]
    pub t_end: f64,
}

fn default_n_steps() -> usize {
    128
}

fn default_tol() -> f64 {
    1e-5
}

fn default_t_start() -> f64 {
    1.0
}

impl SolverConfig {
    pub fn euler(n_steps: usize) -> Self {
        Self {
            kind: SolverKind::Euler,
            n_steps,
            atol: default_tol(),
            rtol: default_tol(),
            t_start: 1.0,
            t_end: 0.0,
        }
    }

    pub fn heun(n_steps: usize) -> Self {
        Self {
            kind: SolverKind::Heun2,
            ..Self::euler(n_steps)
        }
    }

    pub fn rk45(atol: f64, rtol: f64) -> Self {
        Self {
            kind: SolverKind::Rk45,
            atol,
            rtol,
            ..Self::euler(0)
        }
    }

    pub fn with_range(mut self, t_start: f64, t_end: f64) -> Self {
        self.t_start = t_start;
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start > self.t_end) {
            return Err(Error::Config(format!(
                "solver: t_start must exceed t_end, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        match self.kind {
            SolverKind::Euler | SolverKind::Heun2 => {
                if self.n_steps == 0 {
                    return Err(Error::Config("solver: n_steps must be >= 1".into()));
                }
            }
            SolverKind::Rk45 => {
                if !(self.atol > 0.0 && self.rtol > 0.0) {
                    return Err(Error::Config(format!(
                        "solver: rk45 needs positive atol/rtol, got {}/{}",
                        self.atol, self.rtol
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One solved path: times descending from `t_start` to `t_end`, the state
/// at each accepted point, and the exact evaluation count.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub nfe: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Right-hand side of an ODE `dz/dt = f(z, t)`.
pub trait VectorField {
    fn eval(&self, state: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    fn eval(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self(state, t))
    }
}

/// Instantaneous generative velocity at `(state, t)`.
///
/// Velocity networks are evaluated directly; data-prediction networks are
/// converted through `(z_t - x_hat) / t`, which is singular at t=0.
pub fn ode_rhs(
    params: &NetworkParams,
    parameterization: Parameterization,
    state: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    match parameterization {
        Parameterization::Velocity => net::forward(params, state, t),
        Parameterization::XPrediction => {
            if !(t > 0.0) {
                return Err(Error::Domain(format!(
                    "x-prediction velocity is undefined at t={t}"
                )));
            }
            let x_hat = net::forward(params, state, t)?;
            Ok(state
                .iter()
                .zip(&x_hat)
                .map(|(z, x)| (z - x) / t)
                .collect())
        }
    }
}

/// A trained network viewed as a vector field.
#[derive(Clone, Copy)]
pub struct GenerativeField<'a> {
    pub params: &'a NetworkParams,
    pub parameterization: Parameterization,
}

impl VectorField for GenerativeField<'_> {
    fn eval(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        ode_rhs(self.params, self.parameterization, state, t)
    }
}

/// Dispatch on `config.kind`.
pub fn solve<F: VectorField>(field: &F, z_init: &[f64], config: &SolverConfig) -> Result<Trajectory> {
    match config.kind {
        SolverKind::Euler => euler_solve(field, z_init, config),
        SolverKind::Heun2 => heun_solve(field, z_init, config),
        SolverKind::Rk45 => rk45_solve(field, z_init, config),
    }
}

/// Fixed-step Euler. `nfe = n_steps`.
pub fn euler_solve<F: VectorField>(
    field: &F,
    z_init: &[f64],
    config: &SolverConfig,
) -> Result<Trajectory> {
    Ok(euler_solve_with_velocities(field, z_init, config)?.0)
}

/// Euler solve that also returns the velocity used at each step start;
/// the curvature estimator feeds on these instead of re-evaluating.
pub fn euler_solve_with_velocities<F: VectorField>(
    field: &F,
    z_init: &[f64],
    config: &SolverConfig,
) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    config.validate()?;
    if config.kind != SolverKind::Euler {
        return Err(Error::Config("euler_solve requires kind=euler".into()));
    }
    let n = config.n_steps;
    let h = (config.t_end - config.t_start) / n as f64;
    let mut state = z_init.to_vec();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n);
    times.push(config.t_start);
    states.push(state.clone());
    for k in 0..n {
        let t = config.t_start + h * k as f64;
        let v = field.eval(&state, t)?;
        for (s, vi) in state.iter_mut().zip(&v) {
            *s += h * vi;
        }
        velocities.push(v);
        if !all_finite(&state) {
            return Err(Error::NonFinite {
                context: format!("euler step {k}"),
            });
        }
        let t_next = if k + 1 == n {
            config.t_end
        } else {
            config.t_start + h * (k + 1) as f64
        };
        times.push(t_next);
        states.push(state.clone());
    }
    Ok((
        Trajectory {
            times,
            states,
            nfe: n,
        },
        velocities,
    ))
}

/// Fixed-step Heun (explicit trapezoid). Both stages are evaluated at
/// every step, so `nfe = 2 * n_steps`.
pub fn heun_solve<F: VectorField>(
    field: &F,
    z_init: &[f64],
    config: &SolverConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if config.kind != SolverKind::Heun2 {
        return Err(Error::Config("heun_solve requires kind=heun2".into()));
    }
    let n = config.n_steps;
    let h = (config.t_end - config.t_start) / n as f64;
    let mut state = z_init.to_vec();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(config.t_start);
    states.push(state.clone());
    for k in 0..n {
        let t = config.t_start + h * k as f64;
        let t_next = if k + 1 == n {
            config.t_end
        } else {
            config.t_start + h * (k + 1) as f64
        };
        let k1 = field.eval(&state, t)?;
        let predictor: Vec<f64> = state.iter().zip(&k1).map(|(s, v)| s + h * v).collect();
        let k2 = field.eval(&predictor, t_next)?;
        for ((s, v1), v2) in state.iter_mut().zip(&k1).zip(&k2) {
            *s += 0.5 * h * (v1 + v2);
        }
        if !all_finite(&state) {
            return Err(Error::NonFinite {
                context: format!("heun step {k}"),
            });
        }
        times.push(t_next);
        states.push(state.clone());
    }
    Ok(Trajectory {
        times,
        states,
        nfe: 2 * n,
    })
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order solution weights (row 7 of A, FSAL) and the embedded error
// coefficients (5th minus 4th order weights).
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;
const H_MIN: f64 = 1e-12;

/// Adaptive Dormand-Prince 5(4) with PI step-size control.
///
/// The trajectory holds the accepted points; the final state lands exactly
/// on `t_end`. Steps shrinking below `1e-12` raise a stiffness error.
pub fn rk45_solve<F: VectorField>(
    field: &F,
    z_init: &[f64],
    config: &SolverConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if config.kind != SolverKind::Rk45 {
        return Err(Error::Config("rk45_solve requires kind=rk45".into()));
    }
    let dim = z_init.len();
    let dir = (config.t_end - config.t_start).signum();
    let span = (config.t_end - config.t_start).abs();
    let mut nfe = 0usize;
    let mut eval = |state: &[f64], t: f64| -> Result<Vec<f64>> {
        nfe += 1;
        let v = field.eval(state, t)?;
        if v.len() != dim || !all_finite(&v) {
            return Err(Error::NonFinite {
                context: format!("rk45 field evaluation at t={t:.6}"),
            });
        }
        Ok(v)
    };

    let mut t = config.t_start;
    let mut y = z_init.to_vec();
    let mut f_current = eval(&y, t)?;
    let mut h = initial_step(&mut eval, &y, &f_current, t, dir, span, config)?;

    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut err_prev: f64 = 1e-4;
    let mut rejected_last = false;
    let mut k = vec![vec![0.0; dim]; 7];

    while (t - config.t_end) * dir < 0.0 {
        if h.abs() < H_MIN {
            return Err(Error::StepSizeUnderflow { t });
        }
        // Land exactly on t_end.
        if (t + h - config.t_end) * dir > 0.0 {
            h = config.t_end - t;
        }

        k[0] = f_current.clone();
        for stage in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(stage) {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    for (yi, kv) in ys.iter_mut().zip(kj) {
                        *yi += h * a * kv;
                    }
                }
            }
            k[stage] = eval(&ys, t + DP_C[stage] * h)?;
        }
        // Stage 7 input *is* the 5th-order solution (FSAL).
        let mut y_new = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            let a = DP_A[6][j];
            if a != 0.0 {
                for (yi, kv) in y_new.iter_mut().zip(kj) {
                    *yi += h * a * kv;
                }
            }
        }

        // Scaled RMS error of the embedded 4th-order difference.
        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += DP_E[j] * kj[i];
            }
            e *= h;
            let scale = config.atol + config.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t = if (t + h - config.t_end) * dir >= 0.0 {
                config.t_end
            } else {
                t + h
            };
            y = y_new;
            f_current = k[6].clone();
            times.push(t);
            states.push(y.clone());
            let mut fac = SAFETY * err.max(1e-16).powf(-PI_ALPHA) * err_prev.powf(PI_BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h *= fac;
            err_prev = err.max(1e-4);
            rejected_last = false;
        } else {
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
            rejected_last = true;
        }
    }

    Ok(Trajectory { times, states, nfe })
}

/// Automatic initial step size from the local derivative scale; costs one
/// extra field evaluation beyond the first stage.
fn initial_step<E>(
    eval: &mut E,
    y0: &[f64],
    f0: &[f64],
    t0: f64,
    dir: f64,
    span: f64,
    config: &SolverConfig,
) -> Result<f64>
where
    E: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let scale: Vec<f64> = y0
        .iter()
        .map(|yi| config.atol + config.rtol * yi.abs())
        .collect();
    let d0 = scaled_rms(y0, &scale);
    let d1 = scaled_rms(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let f1 = eval(&y1, t0 + dir * h0)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_rms(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok(dir * (100.0 * h0).min(h1).min(span))
}

fn scaled_rms(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v
        .iter()
        .zip(scale)
        .map(|(x, sc)| (x / sc) * (x / sc))
        .sum();
    (s / v.len() as f64).sqrt()
}
