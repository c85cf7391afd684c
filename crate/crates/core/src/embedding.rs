//! LPV and NPV virtual systems and their differential dynamics.
//!
//! Both embeddings share the input matrix `B = [0; ℋ⁻¹𝒦_m]`. They differ in
//! the rate block of `A`: the LPV embedding freezes the Coriolis matrix at the
//! measured rates, `−ℋ⁻¹(𝒞(x1, x2) + ℱ_v)`, while the NPV embedding keeps the
//! virtual rates inside, whose Jacobian is `−ℋ⁻¹(2𝒞(x1, χ2) + ℱ_v)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::{Mode, ReducedModel};
use crate::scalar::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedding {
    Lpv,
    Npv,
}

impl Embedding {
    pub fn name(self) -> &'static str {
        match self {
            Embedding::Lpv => "lpv",
            Embedding::Npv => "npv",
        }
    }
}

impl std::fmt::Display for Embedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Embedding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lpv" => Ok(Embedding::Lpv),
            "npv" => Ok(Embedding::Npv),
            other => Err(Error::Config(format!("unknown embedding '{other}'"))),
        }
    }
}

/// `(A, B, B_d, C, D, D_d)` of the differential dynamics at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialMatrices<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub bd: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
    pub dd: DMatrix<T>,
}

/// Static performance weights on the state error (`w1`) and input (`w2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(with = "crate::io::matrix_serde")]
    pub w1: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub w2: DMatrix<f64>,
}

impl Weights {
    pub fn default_for(mode: Mode) -> Self {
        match mode {
            Mode::Om1 => Weights { w1: DMatrix::identity(5, 5), w2: DMatrix::identity(3, 3) * 0.2 },
            Mode::Om2 => Weights {
                w1: DMatrix::from_diagonal(&DVector::from_column_slice(&[5.0, 0.1, 1.0, 4.0])),
                w2: DMatrix::from_diagonal(&DVector::from_column_slice(&[20.0, 10.0])),
            },
        }
    }

    pub fn check(&self, mode: Mode) -> Result<()> {
        let (n, m) = (mode.n(), mode.m());
        if self.w1.shape() != (n, n) || self.w2.shape() != (m, m) {
            return Err(Error::Shape(format!(
                "weights for {mode} must be {n}x{n} and {m}x{m}, got {:?} and {:?}",
                self.w1.shape(),
                self.w2.shape()
            )));
        }
        Ok(())
    }
}

/// Disturbance input matrix: all rate channels in OM-1, the disk rate in OM-2.
pub fn disturbance_matrix<T: Real>(mode: Mode) -> DMatrix<T> {
    match mode {
        Mode::Om1 => {
            let mut bd = DMatrix::zeros(5, 3);
            bd.view_mut((2, 0), (3, 3)).fill_with_identity();
            bd
        }
        Mode::Om2 => {
            let mut bd = DMatrix::zeros(4, 1);
            bd[(1, 0)] = T::one();
            bd
        }
    }
}

/// `A` and `B` of the embedding's differential dynamics at scheduling point `sigma`.
pub fn differential<T: Real>(
    model: &ReducedModel<T>,
    emb: Embedding,
    sigma: &DVector<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let q = model.schedule_configuration(sigma);
    let v = model.schedule_rates(sigma);
    let factor: T = match emb {
        Embedding::Lpv => T::one(),
        Embedding::Npv => lit(2.0),
    };
    let damping = model.coriolis(&q, &v) * factor + model.friction();
    let mut rhs = DMatrix::zeros(3, 3 + model.m());
    rhs.view_mut((0, 0), (3, 3)).copy_from(&(-damping));
    rhs.view_mut((0, 3), (3, model.m())).copy_from(&model.motor());
    let sol = model.solve_inertia(&q, &rhs)?;
    Ok(assemble(model, &sol))
}

fn assemble<T: Real>(model: &ReducedModel<T>, sol: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (n, m, k) = (model.n(), model.m(), model.mode.n_pos());
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, k), (k, 3)).copy_from(&model.mode.selector::<T>());
    a.view_mut((k, k), (3, 3)).copy_from(&sol.columns(0, 3));
    let mut b = DMatrix::zeros(n, m);
    b.view_mut((k, 0), (3, m)).copy_from(&sol.columns(3, m));
    (a, b)
}

/// Virtual system `F(χ, x, μ)`.
///
/// The LPV embedding is `A(σ(x)) χ + B(σ(x)) μ`. The NPV embedding keeps the
/// nonlinearity in `χ2` and schedules only the inertia on the measured angles.
/// `q2` is the measured gimbal-C angle, used in OM-2.
pub fn virtual_field<T: Real>(
    model: &ReducedModel<T>,
    emb: Embedding,
    chi: &DVector<T>,
    x: &DVector<T>,
    q2: T,
    mu: &DVector<T>,
) -> Result<DVector<T>> {
    match emb {
        Embedding::Lpv => {
            let (a, b) = differential(model, Embedding::Lpv, &model.schedule(x, q2))?;
            Ok(a * chi + b * mu)
        }
        Embedding::Npv => {
            let q = model.configuration(x, q2);
            let (_, v) = model.split(chi);
            let acc = model.acceleration(&q, &v, mu)?;
            Ok(model.join(&(model.mode.selector::<T>() * &v), &acc))
        }
    }
}

/// Adds the disturbance and performance channels to `(A, B)`:
/// `C = [W1; 0]`, `D = [0; W2]`, `D_d = 0`.
pub fn augment<T: Real>(
    a: DMatrix<T>,
    b: DMatrix<T>,
    mode: Mode,
    weights: &Weights,
) -> Result<DifferentialMatrices<T>> {
    weights.check(mode)?;
    let (n, m) = (mode.n(), mode.m());
    if a.shape() != (n, n) || b.shape() != (n, m) {
        return Err(Error::Shape(format!("expected A {n}x{n} and B {n}x{m}, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let bd = disturbance_matrix::<T>(mode);
    let nz = n + m;
    let mut c = DMatrix::zeros(nz, n);
    c.view_mut((0, 0), (n, n)).copy_from(&weights.w1.map(lit::<T>));
    let mut d = DMatrix::zeros(nz, m);
    d.view_mut((n, 0), (m, m)).copy_from(&weights.w2.map(lit::<T>));
    let dd = DMatrix::zeros(nz, bd.ncols());
    Ok(DifferentialMatrices { a, b, bd, c, d, dd })
}
