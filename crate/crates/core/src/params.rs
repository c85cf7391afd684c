//! Physical constants of the gyroscope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Principal moments of one rigid body, in kg·m².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyInertia<T> {
    pub i: T,
    pub j: T,
    pub k: T,
}

/// Inertia, friction and motor constants of the four bodies.
///
/// Bodies are the outer gimbal `a`, the middle gimbals `b` and `c`, and the
/// fly-wheel disk `d`. Index `k` of `f_v` and `k_m` acts on coordinate
/// `q_{k+1}`, so entry 0 belongs to the disk and entry 3 to frame A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmgParams<T> {
    pub a: BodyInertia<T>,
    pub b: BodyInertia<T>,
    pub c: BodyInertia<T>,
    pub d: BodyInertia<T>,
    /// Viscous friction, N·m·s/rad.
    pub f_v: [T; 4],
    /// Motor constants, N·m/A.
    pub k_m: [T; 4],
}

impl Default for CmgParams<f64> {
    fn default() -> Self {
        Self::table()
    }
}

impl CmgParams<f64> {
    /// Identified parameters of the laboratory device.
    pub fn table() -> Self {
        CmgParams {
            a: BodyInertia { i: 0.0902, j: 0.0534, k: 0.0374 },
            b: BodyInertia { i: 0.0039, j: 0.0186, k: 0.0200 },
            c: BodyInertia { i: 9.2087e-4, j: 0.0016, k: 0.0026 },
            d: BodyInertia { i: 0.0030, j: 0.0055, k: 0.0374 },
            f_v: [1.1050e-5, 1.2420e-5, 0.0141, 0.0327],
            k_m: [0.0680, 0.1006, 0.1053, 0.0606],
        }
    }

    pub fn cast<T: Real>(&self) -> CmgParams<T> {
        let b = |x: &BodyInertia<f64>| BodyInertia { i: lit(x.i), j: lit(x.j), k: lit(x.k) };
        CmgParams {
            a: b(&self.a),
            b: b(&self.b),
            c: b(&self.c),
            d: b(&self.d),
            f_v: self.f_v.map(lit),
            k_m: self.k_m.map(lit),
        }
    }
}

impl<T: Real> CmgParams<T> {
    pub fn alpha1(&self) -> T {
        self.c.j - self.c.k
    }
    pub fn alpha2(&self) -> T {
        self.d.j - self.d.i
    }
    pub fn alpha3(&self) -> T {
        self.d.i - self.c.j - self.d.j + self.c.k
    }
    pub fn alpha4(&self) -> T {
        self.c.i + self.d.i
    }
    pub fn alpha5(&self) -> T {
        self.b.i + self.c.i - self.b.k - self.c.k
    }

    /// Checks that every moment is positive and finite and that the friction
    /// and motor constants are finite and non-negative / positive.
    pub fn validate(&self) -> Result<()> {
        let bodies = [("a", &self.a), ("b", &self.b), ("c", &self.c), ("d", &self.d)];
        for (name, body) in bodies {
            for (axis, v) in [("i", body.i), ("j", body.j), ("k", body.k)] {
                if !(v.is_finite() && v > T::zero()) {
                    return Err(Error::InvalidParams(format!("moment {axis}_{name} must be positive, got {v}")));
                }
            }
        }
        for (k, v) in self.f_v.iter().enumerate() {
            if !(v.is_finite() && *v >= T::zero()) {
                return Err(Error::InvalidParams(format!("f_v[{k}] must be non-negative, got {v}")));
            }
        }
        for (k, v) in self.k_m.iter().enumerate() {
            if !(v.is_finite() && *v > T::zero()) {
                return Err(Error::InvalidParams(format!("k_m[{k}] must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
