//! Reference trajectories `(x*, u*, ẋ2*)`.
//!
//! Inputs along a reference are not free: `u*` is recovered from the reduced
//! dynamics so that the pair is a solution of the plant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::{Mode, ReducedModel};
use crate::scalar::{lit, to_f64, Real};

/// Reference value at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RefPoint<T: Real> {
    pub x: DVector<T>,
    pub u: DVector<T>,
    /// Rate derivative `ẋ2*`.
    pub xdot2: DVector<T>,
    /// Gimbal-C angle along the reference (OM-2 companion; OM-1 reads `x`).
    pub q2: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Constant state. The rate components other than the disk spin must be
    /// zero for an equilibrium.
    SetPoint { x: Vec<f64> },
    /// Piecewise-constant set-points; `points[i]` holds from `times[i]`.
    Steps { times: Vec<f64>, points: Vec<Vec<f64>> },
    /// OM-1 only: `q2* = c2 + a·sin ωt`, `q3* = c3 + a·(cos ωt − 1)`,
    /// `q̇1* = spin_mean + spin_amplitude·sin ωt`.
    Sinusoid {
        frequency_hz: f64,
        amplitude: f64,
        spin_mean: f64,
        spin_amplitude: f64,
        #[serde(default)]
        centre: [f64; 2],
    },
}

impl ReferenceSpec {
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let n = mode.n();
        let check_point = |x: &[f64]| -> Result<()> {
            if x.len() != n {
                return Err(Error::Config(format!("set-point needs {n} entries for {mode}, got {}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("set-point has non-finite entries".into()));
            }
            let k = mode.n_pos();
            if x[k + 1..].iter().any(|v| *v != 0.0) {
                return Err(Error::Reference("set-points must have zero gimbal rates; only the disk may spin".into()));
            }
            Ok(())
        };
        match self {
            ReferenceSpec::SetPoint { x } => check_point(x),
            ReferenceSpec::Steps { times, points } => {
                if times.is_empty() || times.len() != points.len() {
                    return Err(Error::Config("steps need matching, non-empty times and points".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("step times must increase".into()));
                }
                points.iter().try_for_each(|p| check_point(p))
            }
            ReferenceSpec::Sinusoid { frequency_hz, amplitude, spin_mean, spin_amplitude, .. } => {
                if mode != Mode::Om1 {
                    return Err(Error::Reference("sinusoidal references are defined for OM-1".into()));
                }
                if !(*frequency_hz >= 0.0
                    && amplitude.is_finite()
                    && spin_mean.is_finite()
                    && spin_amplitude.is_finite())
                {
                    return Err(Error::Config("sinusoid parameters must be finite, frequency ≥ 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Reference state and its derivative at time `t`, in `f64`.
    fn state(&self, mode: Mode, t: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            ReferenceSpec::SetPoint { x } => (x.clone(), vec![0.0; mode.n()]),
            ReferenceSpec::Steps { times, points } => {
                let i = times.iter().rposition(|&s| s <= t).unwrap_or(0);
                (points[i].clone(), vec![0.0; mode.n()])
            }
            ReferenceSpec::Sinusoid { frequency_hz, amplitude: a, spin_mean, spin_amplitude: b, centre } => {
                let w = 2.0 * PI * frequency_hz;
                let (s, c) = (w * t).sin_cos();
                let x = vec![centre[0] + a * s, centre[1] + a * (c - 1.0), spin_mean + b * s, a * w * c, -a * w * s];
                let xd = vec![a * w * c, -a * w * s, b * w * c, -a * w * w * s, -a * w * w * c];
                (x, xd)
            }
        }
    }
}

/// A reference bound to a model, producing consistent inputs.
#[derive(Clone, Debug)]
pub struct Reference<T: Real> {
    pub model: ReducedModel<T>,
    pub spec: ReferenceSpec,
}

impl<T: Real> Reference<T> {
    pub fn new(model: ReducedModel<T>, spec: ReferenceSpec) -> Result<Self> {
        spec.validate(model.mode)?;
        let r = Reference { model, spec };
        r.at(0.0)?;
        Ok(r)
    }

    /// `(x*, u*, ẋ2*)` at time `t`.
    pub fn at(&self, t: f64) -> Result<RefPoint<T>> {
        let (x, xd) = self.spec.state(self.model.mode, t);
        let x = DVector::from_iterator(x.len(), x.into_iter().map(lit::<T>));
        let k = self.model.mode.n_pos();
        let xdot2 = DVector::from_iterator(3, xd[k..].iter().map(|v| lit::<T>(*v)));
        let q2 = match self.model.mode {
            Mode::Om1 => x[0],
            Mode::Om2 => T::zero(),
        };
        let u = inverse_dynamics(&self.model, &x, q2, &xdot2)?;
        Ok(RefPoint { x, u, xdot2, q2 })
    }
}

/// Input reproducing `ẋ2` at state `x`: `𝒦_m u = ℋ ẋ2 + (𝒞 + ℱ_v) x2`.
///
/// Solved in the least-squares sense; an error is returned when the required
/// torque has a component outside the actuated directions.
pub fn inverse_dynamics<T: Real>(
    model: &ReducedModel<T>,
    x: &DVector<T>,
    q2: T,
    xdot2: &DVector<T>,
) -> Result<DVector<T>> {
    let q = model.configuration(x, q2);
    let (_, v) = model.split(x);
    let tau = model.inertia(&q) * xdot2 + (model.coriolis(&q, &v) + model.friction()) * &v;
    let km = model.motor();
    let (u, resid) = least_squares(&km, &tau);
    let scale = to_f64(tau.amax()).max(1e-12);
    if to_f64(resid.amax()) > 1e-9 * scale {
        return Err(Error::Reference(format!(
            "required torque has an unactuated component of {:.3e} N·m",
            to_f64(resid.amax())
        )));
    }
    Ok(u)
}

/// `u = (KᵀK)⁻¹Kᵀ τ` and the residual `τ − K u`.
pub fn least_squares<T: Real>(k: &DMatrix<T>, tau: &DVector<T>) -> (DVector<T>, DVector<T>) {
    let ktk = k.transpose() * k;
    let u = ktk.cholesky().map(|c| c.solve(&(k.transpose() * tau))).unwrap_or_else(|| DVector::zeros(k.ncols()));
    let r = tau - k * &u;
    (u, r)
}
