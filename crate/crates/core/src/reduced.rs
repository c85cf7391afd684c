//! Locked-gimbal operating modes.
//!
//! * `Om1`: frame A locked (`q4 = q̇4 = 0`), three motors active, state
//!   `x = (q2, q3, q̇1, q̇2, q̇3)`.
//! * `Om2`: gimbal B locked (`q3 = q̇3 = 0`), frame A unactuated, state
//!   `x = (q4, q̇1, q̇2, q̇4)`. The angle `q2` is not part of `x` but still
//!   enters the inertia, so the plant carries it alongside.

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_spd_condition, coriolis_matrix, friction_matrix, inertia_matrix, motor_matrix};
use crate::error::{Error, Result};
use crate::params::CmgParams;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Om1,
    Om2,
}

impl Mode {
    /// Full-model coordinates kept by the reduction (velocity part of `x`).
    pub fn kept(self) -> [usize; 3] {
        match self {
            Mode::Om1 => [0, 1, 2],
            Mode::Om2 => [0, 1, 3],
        }
    }

    /// Full-model motor channels that remain actuated.
    pub fn actuated(self) -> &'static [usize] {
        match self {
            Mode::Om1 => &[0, 1, 2],
            Mode::Om2 => &[0, 1],
        }
    }

    /// Number of angles in `x`.
    pub fn n_pos(self) -> usize {
        match self {
            Mode::Om1 => 2,
            Mode::Om2 => 1,
        }
    }

    /// State dimension.
    pub fn n(self) -> usize {
        self.n_pos() + 3
    }

    /// Input dimension.
    pub fn m(self) -> usize {
        self.actuated().len()
    }

    /// Positions of `x1` among the kept velocities, i.e. `ẋ1 = E x2`.
    fn pos_in_vel(self) -> &'static [usize] {
        match self {
            Mode::Om1 => &[1, 2],
            Mode::Om2 => &[2],
        }
    }

    /// Selector `E` with `ẋ1 = E x2`.
    pub fn selector<T: Real>(self) -> DMatrix<T> {
        let idx = self.pos_in_vel();
        let mut e = DMatrix::zeros(idx.len(), 3);
        for (r, &c) in idx.iter().enumerate() {
            e[(r, c)] = T::one();
        }
        e
    }

    /// State component names.
    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            Mode::Om1 => &["q2", "q3", "dq1", "dq2", "dq3"],
            Mode::Om2 => &["q4", "dq1", "dq2", "dq4"],
        }
    }

    /// Scheduling variable names, in grid-axis order.
    pub fn schedule_names(self) -> &'static [&'static str] {
        match self {
            Mode::Om1 => &["q2", "q3", "dq1", "dq2", "dq3"],
            Mode::Om2 => &["q2", "dq1", "dq2", "dq4"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Om1 => "om1",
            Mode::Om2 => "om2",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "om1" => Ok(Mode::Om1),
            "om2" => Ok(Mode::Om2),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// A reduced model: the full parameters plus the locking pattern.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedModel<T: Real> {
    pub params: CmgParams<T>,
    pub mode: Mode,
}

impl<T: Real> ReducedModel<T> {
    pub fn new(params: CmgParams<T>, mode: Mode) -> Self {
        ReducedModel { params, mode }
    }

    pub fn n(&self) -> usize {
        self.mode.n()
    }

    pub fn m(&self) -> usize {
        self.mode.m()
    }

    /// Splits `x` into angles `x1` and rates `x2`.
    pub fn split(&self, x: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let k = self.mode.n_pos();
        (x.rows(0, k).into_owned(), x.rows(k, 3).into_owned())
    }

    /// Joins angles and rates into a state vector.
    pub fn join(&self, x1: &DVector<T>, x2: &DVector<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.n());
        x.rows_mut(0, x1.len()).copy_from(x1);
        x.rows_mut(x1.len(), 3).copy_from(x2);
        x
    }

    /// Full configuration for a reduced state. `q2` is read from `x` in OM-1
    /// and from the separate argument in OM-2. Angles that leave the inertia
    /// unchanged (`q1`, and `q4` in OM-2) are set to their reduced values or
    /// zero.
    pub fn configuration(&self, x: &DVector<T>, q2: T) -> Vector4<T> {
        match self.mode {
            Mode::Om1 => Vector4::new(T::zero(), x[0], x[1], T::zero()),
            Mode::Om2 => Vector4::new(T::zero(), q2, T::zero(), x[0]),
        }
    }

    /// Scheduling vector: `x` for OM-1, `(q2, x2)` for OM-2.
    pub fn schedule(&self, x: &DVector<T>, q2: T) -> DVector<T> {
        match self.mode {
            Mode::Om1 => x.clone(),
            Mode::Om2 => DVector::from_column_slice(&[q2, x[1], x[2], x[3]]),
        }
    }

    /// Scheduling vector with the rate part replaced by `v`.
    pub fn schedule_with_rates(&self, sigma: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let mut s = sigma.clone();
        let k = s.len() - 3;
        s.rows_mut(k, 3).copy_from(v);
        s
    }

    /// Configuration encoded in a scheduling vector.
    pub fn schedule_configuration(&self, sigma: &DVector<T>) -> Vector4<T> {
        match self.mode {
            Mode::Om1 => Vector4::new(T::zero(), sigma[0], sigma[1], T::zero()),
            Mode::Om2 => Vector4::new(T::zero(), sigma[0], T::zero(), T::zero()),
        }
    }

    /// Rates encoded in a scheduling vector.
    pub fn schedule_rates(&self, sigma: &DVector<T>) -> DVector<T> {
        sigma.rows(sigma.len() - 3, 3).into_owned()
    }

    fn embed_rates(&self, v: &DVector<T>) -> Vector4<T> {
        let mut full = Vector4::zeros();
        for (r, &i) in self.mode.kept().iter().enumerate() {
            full[i] = v[r];
        }
        full
    }

    fn restrict(&self, m: &nalgebra::Matrix4<T>) -> DMatrix<T> {
        let k = self.mode.kept();
        DMatrix::from_fn(3, 3, |r, c| m[(k[r], k[c])])
    }

    /// Reduced inertia `ℋ`.
    pub fn inertia(&self, q: &Vector4<T>) -> DMatrix<T> {
        self.restrict(&inertia_matrix(&self.params, q))
    }

    /// Reduced Coriolis matrix `𝒞(q, v)` for reduced rates `v`.
    pub fn coriolis(&self, q: &Vector4<T>, v: &DVector<T>) -> DMatrix<T> {
        self.restrict(&coriolis_matrix(&self.params, q, &self.embed_rates(v)))
    }

    /// Reduced friction `ℱ_v`.
    pub fn friction(&self) -> DMatrix<T> {
        self.restrict(&friction_matrix(&self.params))
    }

    /// Reduced motor matrix `𝒦_m` (3 × m).
    pub fn motor(&self) -> DMatrix<T> {
        let km = motor_matrix(&self.params);
        let k = self.mode.kept();
        let a = self.mode.actuated();
        DMatrix::from_fn(3, a.len(), |r, c| km[(k[r], a[c])])
    }

    /// Solves `ℋ(q) y = rhs` after checking the inertia's conditioning.
    pub fn solve_inertia(&self, q: &Vector4<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        let h = self.inertia(q);
        let h3 = nalgebra::Matrix3::from_fn(|r, c| h[(r, c)]);
        check_spd_condition(&h3)?;
        h.cholesky().map(|ch| ch.solve(rhs)).ok_or(Error::SingularInertia { cond: f64::INFINITY })
    }

    /// Rate derivative `ℋ⁻¹[𝒦_m u − (𝒞(q, v) + ℱ_v) v]`.
    pub fn acceleration(&self, q: &Vector4<T>, v: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let rhs = self.motor() * u - (self.coriolis(q, v) + self.friction()) * v;
        let rhs = DMatrix::from_column_slice(3, 1, rhs.as_slice());
        Ok(self.solve_inertia(q, &rhs)?.column(0).into_owned())
    }

    /// Reduced vector field `ẋ = f(x, u)`; `q2` is used in OM-2 only.
    pub fn vector_field(&self, x: &DVector<T>, q2: T, u: &DVector<T>) -> Result<DVector<T>> {
        let (_, v) = self.split(x);
        let q = self.configuration(x, q2);
        let a = self.acceleration(&q, &v, u)?;
        let pos = self.mode.selector::<T>() * &v;
        Ok(self.join(&pos, &a))
    }
}
