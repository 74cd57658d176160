//! Explicit Runge-Kutta integrators with error control and dense output.
//!
//! Two methods are provided: classical fixed-step RK4 and the Dormand-Prince
//! 5(4) embedded pair with a PI step-size controller. Both record the slope
//! at every accepted step. Fixed-step runs interpolate with cubic Hermite
//! polynomials; adaptive runs use the fourth-order Dormand-Prince continuous
//! extension, whose error matches the local error of the step.
//!
//! Numerical failures (step underflow, step budget exhausted, non-finite
//! derivatives) do not discard the work done so far: the partial trajectory
//! is returned with a [`NumericalFailure`] attached.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("integration span is empty (t_end == t_start == {0})")]
    EmptySpan(f64),
    #[error("initial state is not finite")]
    NonFiniteInitial,
    #[error("state dimension mismatch: q has {q} entries, v has {v}")]
    DimensionMismatch { q: usize, v: usize },
    #[error("numerical failure: {0}")]
    Numerical(NumericalFailure),
    #[error("time {t} outside trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("trajectory was built without dense output")]
    NoDenseOutput,
}

/// Position/velocity state of a `d`-dimensional mechanical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(t: f64, q: Vec<f64>, v: Vec<f64>) -> Result<Self, OdeError> {
        if q.len() != v.len() {
            return Err(OdeError::DimensionMismatch { q: q.len(), v: v.len() });
        }
        let s = Self { t, q, v };
        if !s.is_finite() {
            return Err(OdeError::NonFiniteInitial);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Flat layout `[q..., v...]` used by the first-order integrators.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.q.len());
        y.extend_from_slice(&self.q);
        y.extend_from_slice(&self.v);
        y
    }

    /// Inverse of [`State::to_flat`]. `y` must have even length.
    pub fn from_flat(t: f64, y: &[f64]) -> Self {
        debug_assert!(y.len() % 2 == 0);
        let d = y.len() / 2;
        Self { t, q: y[..d].to_vec(), v: y[d..].to_vec() }
    }

    /// Euclidean norm of `(q, v)`.
    pub fn norm(&self) -> f64 {
        self.q.iter().chain(&self.v).map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4Fixed => "rk4-fixed",
            Method::Rk45Adaptive => "rk45-adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step for `rk4-fixed`; ignored by the adaptive method.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub dense: bool,
}

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt: 1e-3,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_steps: 5_000_000,
            dense: true,
        }
    }
}

impl IntegratorConfig {
    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    pub fn rk4(dt: f64) -> Self {
        Self { method: Method::Rk4Fixed, dt, ..Self::default() }
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |msg: &str| Err(OdeError::InvalidConfig(msg.to_string()));
        if self.method == Method::Rk4Fixed && !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite for rk4-fixed");
        }
        if !(self.rtol > 0.0 && self.rtol.is_finite()) {
            return bad("rtol must be positive");
        }
        if !(self.atol > 0.0 && self.atol.is_finite()) {
            return bad("atol must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FailureKind {
    StepUnderflow { h: f64 },
    MaxStepsExceeded { steps: usize },
    NonFiniteDerivative,
}

/// Where and why an integration stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalFailure {
    pub t: f64,
    #[serde(flatten)]
    pub kind: FailureKind,
}

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            FailureKind::StepUnderflow { h } => write!(f, "step size {h:e} underflow at t = {}", self.t),
            FailureKind::MaxStepsExceeded { steps } => {
                write!(f, "exceeded {steps} steps at t = {}", self.t)
            }
            FailureKind::NonFiniteDerivative => write!(f, "non-finite derivative at t = {}", self.t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Time-ordered samples of a first-order system.
///
/// Samples are stored in integration order, so times are strictly increasing
/// for forward runs and strictly decreasing for backward runs. Dense runs
/// keep what is needed to evaluate the state anywhere inside the span.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    dense: Option<Dense>,
    meta: TrajectoryMeta,
    failure: Option<NumericalFailure>,
}

/// Interpolation data: slopes at every knot, plus the extra Dormand-Prince
/// continuous-extension coefficient per interval for adaptive runs. Without
/// the extra coefficients the interpolant is cubic Hermite.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    slopes: Vec<Vec<f64>>,
    segments: Option<Vec<Segment>>,
}

/// `reversed` marks an interval whose step ran from its right knot to its
/// left knot in storage order (backward runs after [`Trajectory::join_two_sided`]).
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    reversed: bool,
    coeff: Vec<f64>,
}

// Dormand-Prince continuous extension weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

impl Trajectory {
    /// Wraps externally produced samples (for instance an analytic solution).
    /// No dense output is available on the result.
    pub fn from_samples(times: Vec<f64>, states: Vec<Vec<f64>>) -> Self {
        assert_eq!(times.len(), states.len(), "one state per time");
        Self {
            times,
            states,
            dense: None,
            meta: TrajectoryMeta {
                method: Method::Rk4Fixed,
                rtol: 0.0,
                atol: 0.0,
                dt: None,
                accepted: 0,
                rejected: 0,
                evaluations: 0,
            },
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn failure(&self) -> Option<&NumericalFailure> {
        self.failure.as_ref()
    }

    pub fn has_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    /// State dimension of the first-order system.
    pub fn width(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Sample `i` viewed as a mechanical state `(t, q, v)`.
    pub fn state(&self, i: usize) -> State {
        State::from_flat(self.times[i], &self.states[i])
    }

    pub fn last_state(&self) -> State {
        self.state(self.len() - 1)
    }

    pub fn iter_states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// Converts an attached failure record into an error.
    pub fn into_result(self) -> Result<Self, OdeError> {
        match self.failure {
            Some(f) => Err(OdeError::Numerical(f)),
            None => Ok(self),
        }
    }

    fn lower(&self) -> f64 {
        self.t_start().min(self.t_end())
    }

    fn upper(&self) -> f64 {
        self.t_start().max(self.t_end())
    }

    /// Dense-output state at time `t`.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let dense = self.dense.as_ref().ok_or(OdeError::NoDenseOutput)?;
        if !(t >= self.lower() && t <= self.upper()) {
            return Err(OdeError::OutOfRange { t, start: self.t_start(), end: self.t_end() });
        }
        let forward = self.t_end() >= self.t_start();
        // index of the first knot at or past t in storage order
        let k = self.times.partition_point(|&s| if forward { s < t } else { s > t });
        if k < self.len() && self.times[k] == t {
            return Ok(self.states[k].clone());
        }
        let seg = dense.segments.as_ref().map(|s| &s[k - 1]);
        let (from, to) = match seg {
            Some(s) if s.reversed => (k, k - 1),
            _ => (k - 1, k),
        };
        let h = self.times[to] - self.times[from];
        let theta = (t - self.times[from]) / h;
        let (y0, y1) = (&self.states[from], &self.states[to]);
        let (f0, f1) = (&dense.slopes[from], &dense.slopes[to]);
        Ok(match seg {
            Some(seg) => {
                let th1 = 1.0 - theta;
                (0..y0.len())
                    .map(|j| {
                        let diff = y1[j] - y0[j];
                        let bspl = h * f0[j] - diff;
                        let r4 = diff - h * f1[j] - bspl;
                        y0[j] + theta * (diff + th1 * (bspl + theta * (r4 + th1 * seg.coeff[j])))
                    })
                    .collect()
            }
            None => {
                let th2 = theta * theta;
                let th3 = th2 * theta;
                let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
                let h10 = th3 - 2.0 * th2 + theta;
                let h01 = -2.0 * th3 + 3.0 * th2;
                let h11 = th3 - th2;
                (0..y0.len())
                    .map(|j| h00 * y0[j] + h10 * h * f0[j] + h01 * y1[j] + h11 * h * f1[j])
                    .collect()
            }
        })
    }

    /// Dense samples as mechanical states, one per requested time.
    pub fn sample_dense(&self, times: &[f64]) -> Result<Vec<State>, OdeError> {
        times
            .iter()
            .map(|&t| self.interpolate(t).map(|y| State::from_flat(t, &y)))
            .collect()
    }

    /// Resamples onto `n` evenly spaced times covering the whole trajectory.
    /// The result carries no dense output of its own.
    pub fn resample_uniform(&self, n: usize) -> Result<Trajectory, OdeError> {
        let times = uniform_grid(self.t_start(), self.t_end(), n);
        let states = times.iter().map(|&t| self.interpolate(t)).collect::<Result<_, _>>()?;
        Ok(Trajectory { times, states, dense: None, meta: self.meta.clone(), failure: self.failure })
    }

    /// Joins a backward run and a forward run that share their first sample
    /// into one trajectory with increasing times.
    pub fn join_two_sided(backward: Trajectory, forward: Trajectory) -> Trajectory {
        assert_eq!(backward.t_start(), forward.t_start(), "runs must share the initial time");
        let mut times: Vec<f64> = backward.times.iter().rev().copied().collect();
        let mut states: Vec<Vec<f64>> = backward.states.iter().rev().cloned().collect();
        times.extend_from_slice(&forward.times[1..]);
        states.extend_from_slice(&forward.states[1..]);
        let dense = match (backward.dense, forward.dense) {
            (Some(b), Some(f)) => {
                let mut slopes: Vec<Vec<f64>> = b.slopes.into_iter().rev().collect();
                slopes.extend(f.slopes.into_iter().skip(1));
                let segments = match (b.segments, f.segments) {
                    (Some(bs), Some(fs)) => {
                        let mut all: Vec<Segment> = bs
                            .into_iter()
                            .rev()
                            .map(|s| Segment { reversed: !s.reversed, coeff: s.coeff })
                            .collect();
                        all.extend(fs);
                        Some(all)
                    }
                    _ => None,
                };
                Some(Dense { slopes, segments })
            }
            _ => None,
        };
        let meta = TrajectoryMeta {
            accepted: backward.meta.accepted + forward.meta.accepted,
            rejected: backward.meta.rejected + forward.meta.rejected,
            evaluations: backward.meta.evaluations + forward.meta.evaluations,
            ..forward.meta
        };
        Trajectory { times, states, dense, meta, failure: backward.failure.or(forward.failure) }
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive (`n >= 2`), with exact endpoints.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two grid points");
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Integrates `y' = rhs(t, y)` from `(t0, y0)` to `t_end`.
///
/// `rhs` writes the derivative into its third argument. Backward integration
/// (`t_end < t0`) is supported.
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    if t_end == t0 {
        return Err(OdeError::EmptySpan(t0));
    }
    if !t0.is_finite() || !t_end.is_finite() || y0.iter().any(|x| !x.is_finite()) {
        return Err(OdeError::NonFiniteInitial);
    }
    Ok(match cfg.method {
        Method::Rk4Fixed => rk4_fixed(&mut rhs, t0, y0, t_end, cfg),
        Method::Rk45Adaptive => dopri5(&mut rhs, t0, y0, t_end, cfg),
    })
}

/// [`integrate`] for a mechanical state; the flat layout is `[q..., v...]`.
pub fn integrate_state<F>(
    rhs: F,
    s0: &State,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate(rhs, s0.t, &s0.to_flat(), t_end, cfg)
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    segments: Vec<Segment>,
    dense: bool,
}

impl Recorder {
    fn new(dense: bool) -> Self {
        Self { times: Vec::new(), states: Vec::new(), slopes: Vec::new(), segments: Vec::new(), dense }
    }

    fn push(&mut self, t: f64, y: &[f64], f: &[f64]) {
        self.times.push(t);
        self.states.push(y.to_vec());
        if self.dense {
            self.slopes.push(f.to_vec());
        }
    }

    fn push_segment(&mut self, coeff: &[f64]) {
        if self.dense {
            self.segments.push(Segment { reversed: false, coeff: coeff.to_vec() });
        }
    }

    fn finish(self, meta: TrajectoryMeta, failure: Option<NumericalFailure>) -> Trajectory {
        let dense = self.dense.then(|| Dense {
            slopes: self.slopes,
            segments: (meta.method == Method::Rk45Adaptive).then_some(self.segments),
        });
        Trajectory { times: self.times, states: self.states, dense, meta, failure }
    }
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn rk4_fixed<F>(rhs: &mut F, t0: f64, y0: &[f64], t_end: f64, cfg: &IntegratorConfig) -> Trajectory
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let span = t_end - t0;
    let steps = ((span.abs() / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let mut meta = TrajectoryMeta {
        method: Method::Rk4Fixed,
        rtol: cfg.rtol,
        atol: cfg.atol,
        dt: Some(h.abs()),
        accepted: 0,
        rejected: 0,
        evaluations: 0,
    };
    let mut rec = Recorder::new(cfg.dense);
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];

    rhs(t0, &y, &mut k1);
    meta.evaluations += 1;
    if !all_finite(&k1) {
        rec.push(t0, &y, &k1);
        let fail = NumericalFailure { t: t0, kind: FailureKind::NonFiniteDerivative };
        return rec.finish(meta, Some(fail));
    }
    rec.push(t0, &y, &k1);

    for i in 0..steps {
        if i >= cfg.max_steps {
            let t = rec.times[rec.times.len() - 1];
            let fail = NumericalFailure { t, kind: FailureKind::MaxStepsExceeded { steps: i } };
            return rec.finish(meta, Some(fail));
        }
        let t = t0 + h * i as f64;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..n {
            tmp[j] = y[j] + h * k3[j];
        }
        rhs(t + h, &tmp, &mut k4);
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = if i + 1 == steps { t_end } else { t0 + h * (i + 1) as f64 };
        rhs(t_next, &y, &mut k1);
        meta.evaluations += 4;
        meta.accepted += 1;
        if !all_finite(&y) || !all_finite(&k1) {
            let fail = NumericalFailure { t: t_next, kind: FailureKind::NonFiniteDerivative };
            return rec.finish(meta, Some(fail));
        }
        rec.push(t_next, &y, &k1);
    }
    rec.finish(meta, None)
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// fifth-order weights minus fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

/// Mixed-tolerance max norm of the error estimate; `<= 1` means accept.
fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], rtol: f64, atol: f64) -> f64 {
    err.iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| e.abs() / (atol + rtol * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

fn initial_step<F>(rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, cfg: &IntegratorConfig) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let scale: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&scale).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    rhs(t0 + dir * h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 { h } else { 1e-6 }
}

fn dopri5<F>(rhs: &mut F, t0: f64, y0: &[f64], t_end: f64, cfg: &IntegratorConfig) -> Trajectory
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let mut meta = TrajectoryMeta {
        method: Method::Rk45Adaptive,
        rtol: cfg.rtol,
        atol: cfg.atol,
        dt: None,
        accepted: 0,
        rejected: 0,
        evaluations: 0,
    };
    let mut rec = Recorder::new(cfg.dense);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    rhs(t, &y, &mut k1);
    meta.evaluations += 1;
    rec.push(t, &y, &k1);
    if !all_finite(&k1) {
        let fail = NumericalFailure { t, kind: FailureKind::NonFiniteDerivative };
        return rec.finish(meta, Some(fail));
    }

    let mut h = initial_step(rhs, t0, &y, &k1, dir, cfg).min(span);
    meta.evaluations += 1;
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;

    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut k5, mut k6, mut k7) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    loop {
        if meta.accepted + meta.rejected >= cfg.max_steps {
            let fail = NumericalFailure {
                t,
                kind: FailureKind::MaxStepsExceeded { steps: meta.accepted + meta.rejected },
            };
            return rec.finish(meta, Some(fail));
        }
        let floor = 16.0 * f64::EPSILON * t.abs().max(t_end.abs()).max(1.0);
        if h < floor {
            let fail = NumericalFailure { t, kind: FailureKind::StepUnderflow { h } };
            return rec.finish(meta, Some(fail));
        }
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;

        for j in 0..n {
            tmp[j] = y[j] + hs * A21 * k1[j];
        }
        rhs(t + C2 * hs, &tmp, &mut k2);
        for j in 0..n {
            tmp[j] = y[j] + hs * (A31 * k1[j] + A32 * k2[j]);
        }
        rhs(t + C3 * hs, &tmp, &mut k3);
        for j in 0..n {
            tmp[j] = y[j] + hs * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j]);
        }
        rhs(t + C4 * hs, &tmp, &mut k4);
        for j in 0..n {
            tmp[j] = y[j] + hs * (A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j]);
        }
        rhs(t + C5 * hs, &tmp, &mut k5);
        for j in 0..n {
            tmp[j] = y[j]
                + hs * (A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j]);
        }
        rhs(t + hs, &tmp, &mut k6);
        for j in 0..n {
            y_new[j] = y[j]
                + hs * (A71 * k1[j] + A73 * k3[j] + A74 * k4[j] + A75 * k5[j] + A76 * k6[j]);
        }
        let t_new = if last { t_end } else { t + hs };
        rhs(t_new, &y_new, &mut k7);
        meta.evaluations += 6;

        let stages_finite = [&k2, &k3, &k4, &k5, &k6, &k7, &y_new].iter().all(|k| all_finite(k));
        let e_norm = if stages_finite {
            for j in 0..n {
                err[j] = hs
                    * (E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j]
                        + E7 * k7[j]);
            }
            error_norm(&err, &y, &y_new, cfg.rtol, cfg.atol)
        } else {
            f64::INFINITY
        };

        if e_norm <= 1.0 {
            meta.accepted += 1;
            if cfg.dense {
                for j in 0..n {
                    tmp[j] = hs
                        * (D1 * k1[j] + D3 * k3[j] + D4 * k4[j] + D5 * k5[j] + D6 * k6[j]
                            + D7 * k7[j]);
                }
                rec.push_segment(&tmp);
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            rec.push(t, &y, &k1);
            if last {
                return rec.finish(meta, None);
            }
            let e = e_norm.max(1e-10);
            let mut factor = SAFETY * e.powf(-PI_ALPHA) * err_prev.powf(PI_BETA);
            factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
            if last_rejected {
                factor = factor.min(1.0);
            }
            err_prev = e_norm.max(1e-4);
            last_rejected = false;
            h *= factor;
        } else {
            meta.rejected += 1;
            last_rejected = true;
            let factor = if e_norm.is_finite() {
                (SAFETY * e_norm.powf(-PI_ALPHA)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn harmonic(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn harmonic_full_period_adaptive() {
        let cfg = IntegratorConfig::adaptive(1e-10, 1e-12);
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &cfg).unwrap();
        assert!(traj.failure().is_none());
        let last = traj.last_state();
        assert_eq!(last.t, 2.0 * PI);
        assert!((last.q[0] - 1.0).abs() < 1e-8, "q = {}", last.q[0]);
    }

    #[test]
    fn zero_field_keeps_state() {
        let s0 = State::new(0.0, vec![0.3, -1.0], vec![2.0, 0.5]).unwrap();
        for cfg in [IntegratorConfig::default(), IntegratorConfig::rk4(0.1)] {
            let traj = integrate_state(|_, _, dy: &mut [f64]| dy.fill(0.0), &s0, 5.0, &cfg).unwrap();
            let last = traj.last_state();
            assert_eq!(last.t, 5.0);
            assert_eq!(last.q, s0.q);
            assert_eq!(last.v, s0.v);
        }
    }

    #[test]
    fn rk4_matches_adaptive() {
        let fixed = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &IntegratorConfig::rk4(1e-3)).unwrap();
        let adaptive =
            integrate(harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &IntegratorConfig::adaptive(1e-12, 1e-14))
                .unwrap();
        let a = fixed.last_state().to_flat();
        let b = adaptive.last_state().to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64| {
            let t = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0, &IntegratorConfig::rk4(dt)).unwrap();
            let y = t.states().last().unwrap();
            (y[0] - 2f64.cos()).abs().max((y[1] + 2f64.sin()).abs())
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dense_output_endpoints_and_quarter_period() {
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &IntegratorConfig::default()).unwrap();
        let s = traj.sample_dense(&[0.0, FRAC_PI_2]).unwrap();
        assert_eq!(s[0].q, vec![1.0]);
        assert_eq!(s[0].v, vec![0.0]);
        assert!(s[1].q[0].abs() < 1e-7);
    }

    #[test]
    fn dense_output_errors() {
        let cfg = IntegratorConfig::default();
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 1.0, &cfg).unwrap();
        assert!(matches!(traj.interpolate(1.5), Err(OdeError::OutOfRange { .. })));
        let sparse = integrate(harmonic, 0.0, &[1.0, 0.0], 1.0, &cfg.clone().with_dense(false)).unwrap();
        assert_eq!(sparse.interpolate(0.5), Err(OdeError::NoDenseOutput));
    }

    #[test]
    fn dense_midpoints_agree_with_reintegration() {
        let cfg = IntegratorConfig::adaptive(1e-10, 1e-12);
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 10.0, &cfg).unwrap();
        let tol = 10.0 * (cfg.atol + cfg.rtol);
        for w in traj.times().windows(2).step_by(7) {
            let mid = 0.5 * (w[0] + w[1]);
            let dense = traj.interpolate(mid).unwrap();
            let direct = integrate(harmonic, 0.0, &[1.0, 0.0], mid, &cfg).unwrap();
            let end = direct.states().last().unwrap();
            for (a, b) in dense.iter().zip(end) {
                assert!((a - b).abs() <= tol, "t={mid}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_integration_and_reversal() {
        let cfg = IntegratorConfig::adaptive(1e-10, 1e-12);
        let fwd = integrate(harmonic, 0.0, &[0.3, -0.4], 7.0, &cfg).unwrap();
        let back = integrate(harmonic, 7.0, fwd.states().last().unwrap(), 0.0, &cfg).unwrap();
        assert_eq!(back.t_end(), 0.0);
        for (a, b) in back.states().last().unwrap().iter().zip([0.3, -0.4]) {
            assert!((a - b).abs() < 100.0 * 1e-10);
        }
        assert!(back.times().windows(2).all(|w| w[1] < w[0]));
        let mid = back.interpolate(3.5).unwrap();
        assert!((mid[0] - fwd.interpolate(3.5).unwrap()[0]).abs() < 1e-8);
    }

    #[test]
    fn non_finite_derivative_is_recorded() {
        // y' = y^2 blows up at t = 1
        let traj = integrate(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
            0.0,
            &[1.0],
            2.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let fail = traj.failure().expect("blow-up must be recorded");
        assert!(fail.t < 1.0 + 1e-6 && fail.t > 0.9, "failure at {}", fail.t);
        assert!(traj.len() > 1);
        assert!(matches!(traj.into_result(), Err(OdeError::Numerical(_))));
    }

    #[test]
    fn nan_at_start_fails_immediately() {
        let traj = integrate(
            |_, _: &[f64], dy: &mut [f64]| dy[0] = f64::NAN,
            2.0,
            &[1.0],
            3.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let fail = traj.failure().unwrap();
        assert_eq!(fail.t, 2.0);
        assert_eq!(fail.kind, FailureKind::NonFiniteDerivative);
    }

    #[test]
    fn max_steps_is_enforced() {
        let cfg = IntegratorConfig::default().with_max_steps(5);
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 100.0, &cfg).unwrap();
        assert!(matches!(traj.failure().unwrap().kind, FailureKind::MaxStepsExceeded { .. }));
        let cfg = IntegratorConfig::rk4(0.1).with_max_steps(5);
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 100.0, &cfg).unwrap();
        assert!(matches!(traj.failure().unwrap().kind, FailureKind::MaxStepsExceeded { .. }));
        assert_eq!(traj.len(), 6);
    }

    #[test]
    fn invalid_configs_rejected() {
        let f = |_: f64, _: &[f64], _: &mut [f64]| {};
        assert!(integrate(f, 0.0, &[1.0], 0.0, &IntegratorConfig::default()).is_err());
        for cfg in [
            IntegratorConfig::rk4(0.0),
            IntegratorConfig::adaptive(0.0, 1e-12),
            IntegratorConfig::adaptive(1e-8, -1.0),
            IntegratorConfig::default().with_max_steps(0),
        ] {
            assert!(matches!(integrate(f, 0.0, &[1.0], 1.0, &cfg), Err(OdeError::InvalidConfig(_))));
        }
        assert_eq!(State::new(0.0, vec![1.0], vec![]), Err(OdeError::DimensionMismatch { q: 1, v: 0 }));
    }

    #[test]
    fn local_error_respects_mixed_tolerance() {
        // every accepted step of a linear problem is re-checked against a
        // finer two-half-step reference
        let cfg = IntegratorConfig::adaptive(1e-8, 1e-10);
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 20.0, &cfg).unwrap();
        let fine = IntegratorConfig::adaptive(1e-13, 1e-15);
        for (w, ys) in traj.times().windows(2).zip(traj.states().windows(2)).step_by(5) {
            let reference = integrate(harmonic, w[0], &ys[0], w[1], &fine).unwrap();
            let r = reference.states().last().unwrap();
            for (a, b) in ys[1].iter().zip(r) {
                // DOPRI5's estimate is for the 4th-order solution; the propagated 5th-order one is tighter
                assert!((a - b).abs() <= cfg.atol + cfg.rtol * b.abs());
            }
        }
    }
}
