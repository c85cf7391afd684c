//! Closed-loop simulation of the reduced gyroscope under a controller.
//!
//! The closed loop is integrated with classic fixed-step RK4, evaluating the
//! controller at every stage, so the input is a function of the state and
//! time rather than a sampled signal. In OM-2 the locked-out gimbal
//! angle `q2` is integrated alongside the reduced state because it feeds the
//! scheduling variable.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::{residual_delta, Controller, Realization};
use crate::embedding::{disturbance_matrix, Embedding, Weights};
use crate::error::{Error, Result};
use crate::io::{csv_bytes, fmt_f64};
use crate::reduced::{Mode, ReducedModel};
use crate::reference::{RefPoint, Reference, ReferenceSpec};
use crate::scalar::{lit, to_f64, Real};

/// Default divergence threshold on any state magnitude, native units.
pub const DEFAULT_BLOWUP: f64 = 1e4;

/// Exogenous input `d(t)`, entering through the disturbance matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    None,
    Constant {
        value: Vec<f64>,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        frequency_hz: f64,
    },
}

impl DisturbanceSpec {
    fn channels(&self) -> Option<usize> {
        match self {
            DisturbanceSpec::None => None,
            DisturbanceSpec::Constant { value } => Some(value.len()),
            DisturbanceSpec::Sinusoid { amplitude, .. } => Some(amplitude.len()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DisturbanceSpec::None => true,
            DisturbanceSpec::Constant { value } => value.iter().all(|v| *v == 0.0),
            DisturbanceSpec::Sinusoid { amplitude, .. } => amplitude.iter().all(|v| *v == 0.0),
        }
    }

    fn at<T: Real>(&self, t: f64, channels: usize) -> DVector<T> {
        match self {
            DisturbanceSpec::None => DVector::zeros(channels),
            DisturbanceSpec::Constant { value } => DVector::from_iterator(channels, value.iter().map(|v| lit(*v))),
            DisturbanceSpec::Sinusoid { amplitude, frequency_hz } => {
                let s = (2.0 * PI * frequency_hz * t).sin();
                DVector::from_iterator(channels, amplitude.iter().map(|a| lit(a * s)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: f64,
    pub reference: ReferenceSpec,
    /// Initial state as an offset from `x*(0)`. Ignored if `initial_state` is set.
    #[serde(default)]
    pub initial_error: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Initial gimbal-C angle in OM-2.
    #[serde(default)]
    pub initial_q2: f64,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    /// Optional plant-side current limits, one per input channel.
    #[serde(default)]
    pub saturation: Option<Vec<f64>>,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_decimation() -> usize {
    10
}

fn default_blowup() -> f64 {
    DEFAULT_BLOWUP
}

impl SimConfig {
    pub fn new(reference: ReferenceSpec, horizon: f64) -> Self {
        SimConfig {
            dt: default_dt(),
            horizon,
            reference,
            initial_error: None,
            initial_state: None,
            initial_q2: 0.0,
            disturbance: DisturbanceSpec::None,
            saturation: None,
            decimation: default_decimation(),
            blowup: DEFAULT_BLOWUP,
        }
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {} is shorter than dt", self.horizon)));
        }
        if self.decimation == 0 {
            return Err(Error::Config("decimation must be at least 1".into()));
        }
        if self.blowup.is_nan() || self.blowup <= 0.0 {
            return Err(Error::Config("blowup threshold must be positive".into()));
        }
        for (what, v) in [("initial_error", &self.initial_error), ("initial_state", &self.initial_state)] {
            if let Some(v) = v {
                if v.len() != mode.n() || v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::Config(format!("{what} needs {} finite entries", mode.n())));
                }
            }
        }
        if !self.initial_q2.is_finite() {
            return Err(Error::Config("initial_q2 must be finite".into()));
        }
        if let Some(ch) = self.disturbance.channels() {
            let want = disturbance_matrix::<f64>(mode).ncols();
            if ch != want {
                return Err(Error::Config(format!("disturbance needs {want} channels for {mode}, got {ch}")));
            }
        }
        if let Some(s) = &self.saturation {
            if s.len() != mode.m() || s.iter().any(|v| v.is_nan() || *v <= 0.0) {
                return Err(Error::Config(format!("saturation needs {} positive limits", mode.m())));
            }
        }
        self.reference.validate(mode)
    }

    /// Number of integration steps in the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Full-resolution record of a run, stored in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub mode: Mode,
    pub controller: Realization,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub x_ref: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub u_ref: Vec<Vec<f64>>,
    /// Performance output `(W1(x − x*), W2(u − u*))`.
    pub z: Vec<Vec<f64>>,
    pub schedule: Vec<Vec<f64>>,
    /// `‖Δ(x, x*, u*)(x − x*)‖` of the standard LPV error dynamics.
    pub residual: Vec<f64>,
    /// Running cost `∫₀ᵗ |z|²`.
    pub cost: Vec<f64>,
    pub clamped: Vec<bool>,
    pub saturated: Vec<bool>,
    pub unstable: bool,
    pub failure: Option<String>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn clamp_events(&self) -> usize {
        self.clamped.iter().filter(|c| **c).count()
    }

    pub fn saturation_events(&self) -> usize {
        self.saturated.iter().filter(|c| **c).count()
    }

    pub fn error(&self, k: usize) -> Vec<f64> {
        self.x[k].iter().zip(&self.x_ref[k]).map(|(a, b)| a - b).collect()
    }

    pub fn error_norm(&self, k: usize) -> f64 {
        self.error(k).iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Largest `|q2|` along the run.
    pub fn max_abs_q2(&self) -> f64 {
        self.schedule.iter().map(|s| s[0].abs()).fold(0.0, f64::max)
    }

    /// CSV with one row per `decimation` steps (the last step is always kept).
    pub fn to_csv(&self, decimation: usize) -> Result<Vec<u8>> {
        let names = self.mode.state_names();
        let m = self.mode.m();
        let nz = self.z.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        header.extend(names.iter().map(|s| format!("{s}_ref")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..m).map(|i| format!("u{i}_ref")));
        header.extend((0..nz).map(|i| format!("z{i}")));
        header.extend(self.mode.schedule_names().iter().map(|s| format!("sigma_{s}")));
        header.extend(["residual", "cost", "clamped", "saturated"].map(String::from));
        let step = decimation.max(1);
        let last = self.len().saturating_sub(1);
        let rows: Vec<Vec<String>> = (0..self.len())
            .filter(|k| k % step == 0 || *k == last)
            .map(|k| {
                let mut r = vec![fmt_f64(self.t[k])];
                for v in [&self.x[k], &self.x_ref[k], &self.u[k], &self.u_ref[k], &self.z[k], &self.schedule[k]] {
                    r.extend(v.iter().map(|e| fmt_f64(*e)));
                }
                r.push(fmt_f64(self.residual[k]));
                r.push(fmt_f64(self.cost[k]));
                r.push(u8::from(self.clamped[k]).to_string());
                r.push(u8::from(self.saturated[k]).to_string());
                r
            })
            .collect();
        csv_bytes(&header, &rows)
    }
}

fn to_vec<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|e| to_f64(*e)).collect()
}

/// Simulates the reduced plant under `controller`.
///
/// Divergence (a state beyond `blowup`, a non-finite value, or a singular
/// inertia) ends the run early with `unstable` set; it is not an error.
pub fn simulate<T: Real>(controller: &Controller<T>, weights: &Weights, cfg: &SimConfig) -> Result<SimTrace> {
    let model = &controller.model;
    let mode = model.mode;
    cfg.validate(mode)?;
    weights.check(mode)?;
    let reference = Reference::new(*model, cfg.reference.clone())?;
    let (n, m) = (mode.n(), mode.m());
    let bd = disturbance_matrix::<T>(mode);
    let w1 = weights.w1.map(lit::<T>);
    let w2 = weights.w2.map(lit::<T>);
    let limits: Option<Vec<T>> = cfg.saturation.as_ref().map(|s| s.iter().map(|v| lit(*v)).collect());

    let r0 = reference.at(0.0)?;
    let x0 = match (&cfg.initial_state, &cfg.initial_error) {
        (Some(s), _) => DVector::from_iterator(n, s.iter().map(|v| lit(*v))),
        (None, Some(e)) => &r0.x + DVector::from_iterator(n, e.iter().map(|v| lit::<T>(*v))),
        (None, None) => r0.x.clone(),
    };
    let mut p = DVector::zeros(n + usize::from(mode == Mode::Om2));
    p.rows_mut(0, n).copy_from(&x0);
    if mode == Mode::Om2 {
        p[n] = lit(cfg.initial_q2);
    }

    let steps = cfg.steps();
    let mut tr = SimTrace {
        mode,
        controller: controller.kind,
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        x_ref: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        u_ref: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity(steps + 1),
        schedule: Vec::with_capacity(steps + 1),
        residual: Vec::with_capacity(steps + 1),
        cost: Vec::with_capacity(steps + 1),
        clamped: Vec::with_capacity(steps + 1),
        saturated: Vec::with_capacity(steps + 1),
        unstable: false,
        failure: None,
    };

    let loop_ =
        ClosedLoop { controller, reference: &reference, bd: &bd, dist: &cfg.disturbance, limits: limits.as_deref() };
    let mut prev_zsq = 0.0;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let (u, r, clamps, saturated) = match loop_.input(&p, t) {
            Ok(v) => v,
            Err(e) => {
                tr.unstable = true;
                tr.failure = Some(e.to_string());
                break;
            }
        };
        let x = p.rows(0, n).into_owned();
        let q2 = companion(model, &p);
        let e = &x - &r.x;
        let mut z = DVector::zeros(n + m);
        z.rows_mut(0, n).copy_from(&(&w1 * &e));
        z.rows_mut(n, m).copy_from(&(&w2 * (&u - &r.u)));
        let z = to_vec(&z);
        let zsq: f64 = z.iter().map(|v| v * v).sum();
        let cost = match tr.cost.last() {
            Some(c) => c + 0.5 * cfg.dt * (prev_zsq + zsq),
            None => 0.0,
        };
        prev_zsq = zsq;
        let residual = residual_delta(model, &x, q2, &r).map(|d| to_f64(d.norm())).unwrap_or(f64::NAN);

        tr.t.push(t);
        tr.x.push(to_vec(&x));
        tr.x_ref.push(to_vec(&r.x));
        tr.u.push(to_vec(&u));
        tr.u_ref.push(to_vec(&r.u));
        tr.z.push(z);
        tr.schedule.push(to_vec(&model.schedule(&x, q2)));
        tr.residual.push(residual);
        tr.cost.push(cost);
        tr.clamped.push(clamps > 0);
        tr.saturated.push(saturated);
        if k == steps {
            break;
        }

        match loop_.rk4_step(&p, &u, t, cfg.dt) {
            Ok(next) if next.iter().all(|v| v.is_finite() && to_f64(v.abs()) <= cfg.blowup) => p = next,
            Ok(next) => {
                tr.unstable = true;
                let worst = next.iter().map(|v| to_f64(v.abs())).fold(0.0, f64::max);
                tr.failure =
                    Some(format!("state magnitude {worst:.3e} exceeded {:.1e} at t={:.3}", cfg.blowup, t + cfg.dt));
                break;
            }
            Err(e) => {
                tr.unstable = true;
                tr.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(tr)
}

fn companion<T: Real>(model: &ReducedModel<T>, p: &DVector<T>) -> T {
    match model.mode {
        Mode::Om1 => p[0],
        Mode::Om2 => p[model.n()],
    }
}

struct ClosedLoop<'a, T: Real> {
    controller: &'a Controller<T>,
    reference: &'a Reference<T>,
    bd: &'a DMatrix<T>,
    dist: &'a DisturbanceSpec,
    limits: Option<&'a [T]>,
}

impl<T: Real> ClosedLoop<'_, T> {
    /// Input applied at plant state `p` and time `t`, with the reference
    /// point, the number of clamped scheduling axes, and whether any channel
    /// hit its current limit.
    fn input(&self, p: &DVector<T>, t: f64) -> Result<(DVector<T>, RefPoint<T>, usize, bool)> {
        let model = &self.controller.model;
        let r = self.reference.at(t)?;
        let x = p.rows(0, model.n()).into_owned();
        let out = self.controller.control(&x, companion(model, p), &r)?;
        let mut u = out.u;
        let mut saturated = false;
        if let Some(lim) = self.limits {
            for (ui, l) in u.iter_mut().zip(lim) {
                if ui.abs() > *l {
                    *ui = l.copysign(*ui);
                    saturated = true;
                }
            }
        }
        Ok((u, r, out.clamps, saturated))
    }

    fn field(&self, p: &DVector<T>, u: &DVector<T>, t: f64) -> Result<DVector<T>> {
        let model = &self.controller.model;
        let n = model.n();
        let x = p.rows(0, n).into_owned();
        let mut fx = model.vector_field(&x, companion(model, p), u)?;
        if !self.dist.is_zero() {
            fx += self.bd * self.dist.at::<T>(t, self.bd.ncols());
        }
        let mut dp = DVector::zeros(p.len());
        dp.rows_mut(0, n).copy_from(&fx);
        if model.mode == Mode::Om2 {
            dp[n] = x[2];
        }
        Ok(dp)
    }

    /// One RK4 step; `u0` is the input already computed at `(p, t)`.
    fn rk4_step(&self, p: &DVector<T>, u0: &DVector<T>, t: f64, dt: f64) -> Result<DVector<T>> {
        let h: T = lit(dt);
        let half: T = lit(0.5 * dt);
        let stage = |q: &DVector<T>, s: f64| -> Result<DVector<T>> {
            let (u, ..) = self.input(q, s)?;
            self.field(q, &u, s)
        };
        let k1 = self.field(p, u0, t)?;
        let k2 = stage(&(p + &k1 * half), t + 0.5 * dt)?;
        let k3 = stage(&(p + &k2 * half), t + 0.5 * dt)?;
        let k4 = stage(&(p + &k3 * h), t + dt)?;
        Ok(p + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * lit::<T>(dt / 6.0))
    }
}

/// `J_T = ∫₀ᵀ |z|² dt` by the trapezoid rule over the stored samples.
pub fn tracking_cost(trace: &SimTrace, horizon: f64) -> Result<f64> {
    let last = *trace.t.last().ok_or_else(|| Error::Config("empty trace".into()))?;
    if horizon > last + 1e-9 {
        return Err(Error::Config(format!("horizon {horizon} beyond trace end {last}")));
    }
    let mut j = 0.0;
    for k in 1..trace.len() {
        let (t0, t1) = (trace.t[k - 1], trace.t[k]);
        if t0 >= horizon {
            break;
        }
        let zsq = |i: usize| trace.z[i].iter().map(|v| v * v).sum::<f64>();
        let (a, b) = (zsq(k - 1), zsq(k));
        if t1 <= horizon {
            j += 0.5 * (t1 - t0) * (a + b);
        } else {
            let s = (horizon - t0) / (t1 - t0);
            let bh = a + s * (b - a);
            j += 0.5 * (horizon - t0) * (a + bh);
        }
    }
    Ok(j)
}

/// Energy of the straight line from `x0` to `x1` under the constant metric
/// `W⁻¹`: `(x1 − x0)ᵀ W⁻¹ (x1 − x0)`.
pub fn riemannian_energy(x0: &[f64], x1: &[f64], w: &DMatrix<f64>) -> Result<f64> {
    if x0.len() != x1.len() || w.shape() != (x0.len(), x0.len()) {
        return Err(Error::Shape("energy needs matching point and metric dimensions".into()));
    }
    let d = DVector::from_iterator(x0.len(), x1.iter().zip(x0).map(|(a, b)| a - b));
    let chol = w.clone().cholesky().ok_or_else(|| Error::InvalidParams("metric W is not positive definite".into()))?;
    Ok(d.dot(&chol.solve(&d)))
}

/// Comparison of a run's cost against the gain-bound prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub cost: f64,
    pub alpha: f64,
    pub energy: f64,
    /// `α²E`.
    pub bound: f64,
    /// `J_T / (α²E)`; zero when the cost is numerically zero.
    pub ratio: f64,
    pub pass: bool,
}

/// Costs below this are round-off on a run that starts on the reference.
pub const COST_ZERO: f64 = 1e-12;

pub fn bound_check(cost: f64, alpha: f64, energy: f64) -> BoundReport {
    let bound = alpha * alpha * energy;
    let ratio = if bound > 0.0 {
        cost / bound
    } else if cost > COST_ZERO {
        f64::INFINITY
    } else {
        0.0
    };
    BoundReport { cost, alpha, energy, bound, ratio, pass: cost <= bound || cost <= COST_ZERO }
}

/// First time after which `|e_i(t)| ≤ frac·|e_i(0)|` holds for the rest of
/// the run. `None` if the error never settles or the run diverged.
pub fn settling_time(trace: &SimTrace, component: usize, frac: f64) -> Option<f64> {
    if trace.unstable || trace.is_empty() {
        return None;
    }
    let e0 = trace.error(0)[component].abs();
    let tol = frac * e0;
    let mut settled = None;
    for k in (0..trace.len()).rev() {
        if trace.error(k)[component].abs() > tol {
            break;
        }
        settled = Some(trace.t[k]);
    }
    if settled == Some(trace.t[0]) && e0 > 0.0 {
        return Some(0.0);
    }
    settled.filter(|t| *t < *trace.t.last().unwrap())
}

/// Exponential decay rate of the error envelope.
///
/// The envelope is `max_{s ≥ t} ‖x(s) − x*(s)‖`; the rate is minus the
/// least-squares slope of its logarithm over samples above `floor·‖e(0)‖`.
pub fn decay_rate(trace: &SimTrace, floor: f64) -> Option<f64> {
    if trace.unstable || trace.len() < 2 {
        return None;
    }
    let norms: Vec<f64> = (0..trace.len()).map(|k| trace.error_norm(k)).collect();
    let mut env = norms.clone();
    for k in (0..env.len() - 1).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let cut = floor * env[0];
    let pts: Vec<(f64, f64)> =
        trace.t.iter().zip(&env).filter(|(_, e)| **e > cut && **e > 0.0).map(|(t, e)| (*t, e.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let nf = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / nf, b + y / nf));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    Some(-sxy / sxx)
}

/// One-line record of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: String,
    pub mode: Mode,
    pub controller: Realization,
    pub embedding: Embedding,
    /// Gain bound of the design the controller came from, if it has one.
    pub alpha: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// `J_T` over the simulated span (partial if the run diverged).
    pub cost: f64,
    pub unstable: bool,
    pub failure: Option<String>,
    pub clamp_events: usize,
    pub saturation_events: usize,
    pub final_error: f64,
    pub max_abs_q2: f64,
    /// 5% settling time of the first state component.
    pub settling_time: Option<f64>,
    pub bound: Option<BoundReport>,
}

impl SimSummary {
    /// Summarizes a run. The bound is evaluated when the design has a gain
    /// bound and the run was disturbance-free; `w` is the design's dual metric.
    pub fn from_trace(
        scenario: &str,
        trace: &SimTrace,
        cfg: &SimConfig,
        alpha: Option<f64>,
        w: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let end = *trace.t.last().ok_or_else(|| Error::Config("empty trace".into()))?;
        let cost = tracking_cost(trace, end)?;
        let bound = match (alpha, w) {
            (Some(a), Some(w)) if cfg.disturbance.is_zero() => {
                Some(bound_check(cost, a, riemannian_energy(&trace.x_ref[0], &trace.x[0], w)?))
            }
            _ => None,
        };
        Ok(SimSummary {
            scenario: scenario.to_string(),
            mode: trace.mode,
            controller: trace.controller,
            embedding: trace.controller.embedding(),
            alpha,
            horizon: cfg.horizon,
            dt: cfg.dt,
            cost,
            unstable: trace.unstable,
            failure: trace.failure.clone(),
            clamp_events: trace.clamp_events(),
            saturation_events: trace.saturation_events(),
            final_error: trace.error_norm(trace.len() - 1),
            max_abs_q2: trace.max_abs_q2(),
            settling_time: settling_time(trace, 0, 0.05),
            bound,
        })
    }
}
