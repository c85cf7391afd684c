//! Rigid-body model of the four-body gyroscope in Lagrangian form
//! `H(q) q̈ + (C(q, q̇) + F_v) q̇ = K_m i`.
//!
//! Coordinates: `q1` disk spin, `q2` gimbal C, `q3` gimbal B, `q4` frame A.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};
use crate::params::CmgParams;
use crate::scalar::{lit, to_f64, Real};

/// Condition number above which the inertia is treated as singular.
pub const MAX_INERTIA_CONDITION: f64 = 1e8;

/// Angles and rates of all four coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GyroState<T: Real> {
    pub q: Vector4<T>,
    pub qdot: Vector4<T>,
}

struct Trig<T> {
    s2: T,
    c2: T,
    s3: T,
    c3: T,
}

impl<T: Real> Trig<T> {
    fn of(q: &Vector4<T>) -> Self {
        let (s2, c2) = q[1].sin_cos();
        let (s3, c3) = q[2].sin_cos();
        Trig { s2, c2, s3, c3 }
    }
}

fn mirror_upper<T: Real>(m: &mut Matrix4<T>) {
    for r in 0..4 {
        for c in (r + 1)..4 {
            m[(c, r)] = m[(r, c)];
        }
    }
}

/// Inertia matrix `H(q) = H_A + H_B + H_C + H_D`. Depends on `q2` and `q3` only.
pub fn inertia_matrix<T: Real>(p: &CmgParams<T>, q: &Vector4<T>) -> Matrix4<T> {
    let Trig { s2, c2, s3, c3 } = Trig::of(q);
    let (a, b, c, d) = (&p.a, &p.b, &p.c, &p.d);
    let mut h = Matrix4::zeros();

    h[(3, 3)] += a.k;

    h[(2, 2)] += b.j;
    h[(3, 3)] += b.i * s3 * s3 + b.k * c3 * c3;

    h[(1, 1)] += c.i;
    h[(1, 3)] -= c.i * s3;
    h[(2, 2)] += c.j * c2 * c2 + c.k * s2 * s2;
    h[(2, 3)] += p.alpha1() * s2 * c2 * c3;
    h[(3, 3)] += c.i * s3 * s3 + (c.j * s2 * s2 + c.k * c2 * c2) * c3 * c3;

    h[(0, 0)] += d.j;
    h[(0, 2)] += d.j * c2;
    h[(0, 3)] += d.j * s2 * c3;
    h[(1, 1)] += d.i;
    h[(1, 3)] -= d.i * s3;
    h[(2, 2)] += d.i * s2 * s2 + d.j * c2 * c2;
    h[(2, 3)] += p.alpha2() * s2 * c2 * c3;
    h[(3, 3)] += d.i * s3 * s3 + (d.i * c2 * c2 + d.j * s2 * s2) * c3 * c3;

    mirror_upper(&mut h);
    h
}

/// The four symmetric Christoffel blocks `Γ^1..Γ^4`, including the leading ½.
///
/// Entries are the Christoffel symbols of the first kind of [`inertia_matrix`],
/// so that `Ḣ − 2C` is skew-symmetric.
pub fn christoffel_blocks<T: Real>(p: &CmgParams<T>, q: &Vector4<T>) -> [Matrix4<T>; 4] {
    let Trig { s2, c2, s3, c3 } = Trig::of(q);
    let two: T = lit(2.0);
    let jd = p.d.j;
    let a3 = p.alpha3();
    let a4 = p.alpha4();
    let a5 = p.alpha5();
    let cross = a3 * (c2 * c2 * c3 - s2 * s2 * c3);

    let mut g = [Matrix4::zeros(); 4];

    g[0][(1, 2)] = -jd * s2;
    g[0][(1, 3)] = jd * c2 * c3;
    g[0][(2, 3)] = -jd * s2 * s3;

    g[1][(0, 2)] = jd * s2;
    g[1][(0, 3)] = -jd * c2 * c3;
    g[1][(2, 2)] = -two * a3 * s2 * c2;
    g[1][(2, 3)] = cross - a4 * c3;
    g[1][(3, 3)] = two * a3 * c2 * c3 * c3 * s2;

    g[2][(0, 1)] = -jd * s2;
    g[2][(0, 3)] = jd * s2 * s3;
    g[2][(1, 2)] = two * a3 * s2 * c2;
    g[2][(1, 3)] = a4 * c3 - cross;
    g[2][(3, 3)] = -two * (a5 + a3 * s2 * s2) * c3 * s3;

    g[3][(0, 1)] = jd * c2 * c3;
    g[3][(0, 2)] = -jd * s2 * s3;
    g[3][(1, 2)] = -cross - a4 * c3;
    g[3][(1, 3)] = -two * a3 * c2 * c3 * c3 * s2;
    g[3][(2, 2)] = two * a3 * c2 * s2 * s3;
    g[3][(2, 3)] = two * (a5 + a3 * s2 * s2) * c3 * s3;

    let half: T = lit(0.5);
    for m in g.iter_mut() {
        mirror_upper(m);
        *m *= half;
    }
    g
}

/// Coriolis/centrifugal matrix; row `i` equals `q̇ᵀ Γ^i(q)`.
pub fn coriolis_matrix<T: Real>(p: &CmgParams<T>, q: &Vector4<T>, qdot: &Vector4<T>) -> Matrix4<T> {
    let g = christoffel_blocks(p, q);
    let mut c = Matrix4::zeros();
    for (i, gi) in g.iter().enumerate() {
        c.set_row(i, &(qdot.transpose() * gi));
    }
    c
}

/// Viscous friction `F_v` as a diagonal matrix.
pub fn friction_matrix<T: Real>(p: &CmgParams<T>) -> Matrix4<T> {
    Matrix4::from_diagonal(&Vector4::from(p.f_v))
}

/// Motor gains `K_m` as a diagonal matrix.
pub fn motor_matrix<T: Real>(p: &CmgParams<T>) -> Matrix4<T> {
    Matrix4::from_diagonal(&Vector4::from(p.k_m))
}

/// Spectral condition number of a symmetric matrix, or an error when it is
/// not positive definite or exceeds [`MAX_INERTIA_CONDITION`].
pub(crate) fn check_spd_condition<T: Real, D>(h: &nalgebra::OMatrix<T, D, D>) -> Result<()>
where
    D: nalgebra::Dim + nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<D, D>
        + nalgebra::allocator::Allocator<D>
        + nalgebra::allocator::Allocator<<D as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let lo = to_f64(eig.min());
    let hi = to_f64(eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond.is_finite() && cond <= MAX_INERTIA_CONDITION) {
        return Err(Error::SingularInertia { cond });
    }
    Ok(())
}

/// Accelerations `q̈ = H⁻¹ [K_m i − (C + F_v) q̇]`.
pub fn full_dynamics<T: Real>(p: &CmgParams<T>, state: &GyroState<T>, currents: &Vector4<T>) -> Result<Vector4<T>> {
    let h = inertia_matrix(p, &state.q);
    check_spd_condition(&h)?;
    let c = coriolis_matrix(p, &state.q, &state.qdot);
    let rhs = motor_matrix(p) * currents - (c + friction_matrix(p)) * state.qdot;
    h.cholesky().map(|ch| ch.solve(&rhs)).ok_or(Error::SingularInertia { cond: f64::INFINITY })
}
