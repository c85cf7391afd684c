//! Tracking controllers built from a gain table.
//!
//! * Standard LPV: `u = u* + K(σ(x))(x − x*)`.
//! * LPV-VCCM: feed-forward that makes the reference a trajectory of the LPV
//!   embedding, plus `K(σ(x))(x − x*)`.
//! * NPV-VCCM: feed-forward for the NPV embedding, plus the gain averaged
//!   along the straight line from `x2*` to `x2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{differential, Embedding};
use crate::error::{Error, Result};
use crate::reduced::{Mode, ReducedModel};
use crate::reference::{least_squares, RefPoint};
use crate::scalar::{lit, Real};
use crate::synthesis::GainTable;

/// Default number of samples in the path-integrated gain.
pub const DEFAULT_PATH_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    StandardLpv,
    LpvVccm,
    NpvVccm,
}

impl Realization {
    pub const ALL: [Realization; 3] = [Realization::StandardLpv, Realization::LpvVccm, Realization::NpvVccm];

    pub fn name(self) -> &'static str {
        match self {
            Realization::StandardLpv => "standard_lpv",
            Realization::LpvVccm => "lpv_vccm",
            Realization::NpvVccm => "npv_vccm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Realization::StandardLpv => "standard LPV",
            Realization::LpvVccm => "LPV-VCCM",
            Realization::NpvVccm => "NPV-VCCM",
        }
    }

    /// Embedding whose gains the realization uses.
    pub fn embedding(self) -> Embedding {
        match self {
            Realization::NpvVccm => Embedding::Npv,
            _ => Embedding::Lpv,
        }
    }
}

impl std::fmt::Display for Realization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Realization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "standard_lpv" | "standard" | "lpv" => Ok(Realization::StandardLpv),
            "lpv_vccm" => Ok(Realization::LpvVccm),
            "npv_vccm" => Ok(Realization::NpvVccm),
            other => Err(Error::Config(format!("unknown controller '{other}'"))),
        }
    }
}

/// Output of one controller evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput<T: Real> {
    pub u: DVector<T>,
    /// Gain lookups whose scheduling point had to be clamped.
    pub clamps: usize,
}

#[derive(Clone, Debug)]
pub struct Controller<T: Real> {
    pub kind: Realization,
    pub model: ReducedModel<T>,
    pub gains: GainTable<T>,
    pub path_samples: usize,
}

impl<T: Real> Controller<T> {
    pub fn new(kind: Realization, model: ReducedModel<T>, gains: GainTable<T>, path_samples: usize) -> Result<Self> {
        if path_samples == 0 {
            return Err(Error::Config("path integral needs at least one sample".into()));
        }
        if gains.grid.dim() != model.mode.schedule_names().len() {
            return Err(Error::Mismatch(format!("gain grid does not schedule {}", model.mode)));
        }
        let shape = gains.gains[0].shape();
        if shape != (model.m(), model.n()) {
            return Err(Error::Mismatch(format!(
                "gains are {}x{}, {} needs {}x{}",
                shape.0,
                shape.1,
                model.mode,
                model.m(),
                model.n()
            )));
        }
        Ok(Controller { kind, model, gains, path_samples })
    }

    /// Control input at state `x` (and measured `q2` in OM-2).
    pub fn control(&self, x: &DVector<T>, q2: T, r: &RefPoint<T>) -> Result<ControlOutput<T>> {
        let e = x - &r.x;
        let sigma = self.model.schedule(x, q2);
        let (ff, (k, clamps)) = match (self.kind, self.model.mode) {
            (Realization::StandardLpv, _) => (r.u.clone(), self.gain(&sigma)),
            (Realization::LpvVccm, Mode::Om1) => (om1_ff_lpv(&self.model, x, r)?, self.gain(&sigma)),
            (Realization::LpvVccm, Mode::Om2) => (om2_ff_lpv(&self.model, x, q2, r).0, self.gain(&sigma)),
            (Realization::NpvVccm, mode) => {
                let ff = match mode {
                    Mode::Om1 => om1_ff_npv(&self.model, x, r)?,
                    Mode::Om2 => r.u.clone(),
                };
                let (_, x2) = self.model.split(x);
                let (_, x2r) = self.model.split(&r.x);
                (ff, path_integral_gain(&self.gains, &self.model, &sigma, &x2r, &x2, self.path_samples))
            }
        };
        Ok(ControlOutput { u: ff + k * e, clamps })
    }

    fn gain(&self, sigma: &DVector<T>) -> (DMatrix<T>, usize) {
        let (k, c) = self.gains.gain_at(sigma.as_slice());
        (k, usize::from(c))
    }
}

fn km_solve<T: Real>(model: &ReducedModel<T>, tau: DVector<T>) -> Result<DVector<T>> {
    model.motor().lu().solve(&tau).ok_or_else(|| Error::Shape("motor matrix is not invertible".into()))
}

/// OM-1 LPV feed-forward `𝒦_m⁻¹[ℋ(x1)ẋ2* + (𝒞(x1, x2) + ℱ_v)x2*]`.
pub fn om1_ff_lpv<T: Real>(model: &ReducedModel<T>, x: &DVector<T>, r: &RefPoint<T>) -> Result<DVector<T>> {
    let q = model.configuration(x, T::zero());
    let (_, v) = model.split(x);
    let (_, vr) = model.split(&r.x);
    let tau = model.inertia(&q) * &r.xdot2 + (model.coriolis(&q, &v) + model.friction()) * &vr;
    km_solve(model, tau)
}

/// OM-1 NPV feed-forward; as [`om1_ff_lpv`] with `𝒞` evaluated at `x2*`.
pub fn om1_ff_npv<T: Real>(model: &ReducedModel<T>, x: &DVector<T>, r: &RefPoint<T>) -> Result<DVector<T>> {
    let q = model.configuration(x, T::zero());
    let (_, vr) = model.split(&r.x);
    let tau = model.inertia(&q) * &r.xdot2 + (model.coriolis(&q, &vr) + model.friction()) * &vr;
    km_solve(model, tau)
}

/// OM-2 LPV feed-forward `𝒦_m†(𝒞(q2, x2) + ℱ_v)x2*` and the part of the
/// torque it cannot produce, `(I − 𝒦_m𝒦_m†)(𝒞 + ℱ_v)x2*`.
pub fn om2_ff_lpv<T: Real>(
    model: &ReducedModel<T>,
    x: &DVector<T>,
    q2: T,
    r: &RefPoint<T>,
) -> (DVector<T>, DVector<T>) {
    let q = model.configuration(x, q2);
    let (_, v) = model.split(x);
    let (_, vr) = model.split(&r.x);
    let tau = (model.coriolis(&q, &v) + model.friction()) * &vr;
    least_squares(&model.motor(), &tau)
}

/// Left-Riemann average `(1/N) Σ_{i<N} K(σ with rates x2* + i(x2 − x2*)/N)`.
///
/// Scheduling variables other than the rates stay at their values in `sigma`.
/// Returns the average and the number of clamped lookups.
pub fn path_integral_gain<T: Real>(
    gains: &GainTable<T>,
    model: &ReducedModel<T>,
    sigma: &DVector<T>,
    x2_ref: &DVector<T>,
    x2: &DVector<T>,
    samples: usize,
) -> (DMatrix<T>, usize) {
    let n: T = lit(samples as f64);
    let step = (x2 - x2_ref) / n;
    let mut acc = DMatrix::zeros(gains.gains[0].nrows(), gains.gains[0].ncols());
    let mut clamps = 0;
    for i in 0..samples {
        let chi = x2_ref + &step * lit::<T>(i as f64);
        let s = model.schedule_with_rates(sigma, &chi);
        let (k, c) = gains.gain_at(s.as_slice());
        acc += k;
        clamps += usize::from(c);
    }
    (acc / n, clamps)
}

/// Residual forcing of the standard LPV error dynamics,
/// `[A(x) − A(x*)]x* + [B(x) − B(x*)]u*` on the LPV embedding.
pub fn residual_delta<T: Real>(model: &ReducedModel<T>, x: &DVector<T>, q2: T, r: &RefPoint<T>) -> Result<DVector<T>> {
    let (a, b) = differential(model, Embedding::Lpv, &model.schedule(x, q2))?;
    let (ar, br) = differential(model, Embedding::Lpv, &model.schedule(&r.x, r.q2))?;
    Ok((a - ar) * &r.x + (b - br) * &r.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, SchedulingRange};
    use crate::params::CmgParams;
    use crate::reference::{Reference, ReferenceSpec};

    fn table(mode: Mode, f: impl Fn(usize) -> f64) -> GainTable<f64> {
        let grid = Grid::new(SchedulingRange::default_for(mode), 3).unwrap();
        let (m, n) = (mode.m(), mode.n());
        let gains =
            (0..grid.len()).map(|k| DMatrix::from_fn(m, n, |r, c| f(k) * ((r + 1) as f64) - 0.1 * c as f64)).collect();
        GainTable::new(grid, gains).unwrap()
    }

    #[test]
    fn zero_error_returns_feed_forward() {
        let model = ReducedModel::new(CmgParams::table(), Mode::Om2);
        let r =
            Reference::new(model, ReferenceSpec::SetPoint { x: vec![0.5, 45.0, 0.0, 0.0] }).unwrap().at(0.0).unwrap();
        let c = Controller::new(Realization::NpvVccm, model, table(Mode::Om2, |k| k as f64), 10).unwrap();
        let out = c.control(&r.x, 0.0, &r).unwrap();
        assert_eq!(out.u, r.u);
    }

    #[test]
    fn single_sample_path_uses_reference_rates() {
        let model = ReducedModel::new(CmgParams::table(), Mode::Om1);
        let gains = table(Mode::Om1, |k| (k % 7) as f64);
        let sigma = DVector::from_column_slice(&[0.1, -0.2, 50.0, 0.4, -0.3]);
        let x2r = DVector::from_column_slice(&[40.0, 0.0, 0.1]);
        let x2 = DVector::from_column_slice(&[50.0, 0.4, -0.3]);
        let (k1, _) = path_integral_gain(&gains, &model, &sigma, &x2r, &x2, 1);
        let (kr, _) = gains.gain_at(&[0.1, -0.2, 40.0, 0.0, 0.1]);
        assert_eq!(k1, kr);
    }

    #[test]
    fn constant_gain_is_reproduced_by_the_path_average() {
        let model = ReducedModel::new(CmgParams::table(), Mode::Om1);
        let gains = table(Mode::Om1, |_| 2.0);
        let sigma = DVector::from_column_slice(&[0.1, -0.2, 50.0, 0.4, -0.3]);
        let (k, _) = path_integral_gain(
            &gains,
            &model,
            &sigma,
            &DVector::from_column_slice(&[35.0, -0.5, 0.2]),
            &DVector::from_column_slice(&[50.0, 0.4, -0.3]),
            10,
        );
        assert!((k - &gains.gains[0]).amax() < 1e-12);
    }

    #[test]
    fn om2_pseudo_inverse_residual_vanishes_for_spin_only() {
        let model = ReducedModel::new(CmgParams::table(), Mode::Om2);
        let r =
            Reference::new(model, ReferenceSpec::SetPoint { x: vec![0.0, 45.0, 0.0, 0.0] }).unwrap().at(0.0).unwrap();
        let x = DVector::from_column_slice(&[0.3, 47.0, 0.0, 0.0]);
        let (_, res) = om2_ff_lpv(&model, &x, 0.2, &r);
        assert!(res.amax() < 1e-12);
        let x = DVector::from_column_slice(&[0.3, 47.0, 0.5, -0.4]);
        let (_, res) = om2_ff_lpv(&model, &x, 0.2, &r);
        assert!(res.amax() > 1e-4);
    }

    #[test]
    fn realization_parse() {
        assert_eq!("NPV-VCCM".parse::<Realization>().unwrap(), Realization::NpvVccm);
        assert!("pid".parse::<Realization>().is_err());
    }
}
