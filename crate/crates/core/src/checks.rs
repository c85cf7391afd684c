//! Randomized property checks of the model and its embeddings.
//!
//! Each check draws in-range samples from a seeded generator and reports
//! its worst residual against a tolerance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{coriolis_matrix, friction_matrix, inertia_matrix, motor_matrix, MAX_INERTIA_CONDITION};
use crate::embedding::{differential, virtual_field, Embedding};
use crate::error::Result;
use crate::params::CmgParams;
use crate::reduced::{Mode, ReducedModel};

/// Outcome of one property check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Reason for a failure that is not a residual (e.g. a singular solve).
    pub error: Option<String>,
}

impl CheckReport {
    fn new(name: &str, samples: usize, worst: f64, tolerance: f64) -> Self {
        CheckReport { name: name.into(), samples, worst, tolerance, pass: worst <= tolerance, error: None }
    }

    fn failed(name: &str, samples: usize, err: String) -> Self {
        CheckReport { name: name.into(), samples, worst: f64::NAN, tolerance: 0.0, pass: false, error: Some(err) }
    }

    fn from(name: &str, samples: usize, tolerance: f64, worst: Result<f64>) -> Self {
        match worst {
            Ok(w) => Self::new(name, samples, w, tolerance),
            Err(e) => Self::failed(name, samples, e.to_string()),
        }
    }
}

/// Seeded generator of in-range configurations, rates and inputs.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }

    /// Gimbal angles in `[−π/3, π/3]`, frame A and disk angles anywhere.
    pub fn configuration(&mut self) -> Vector4<f64> {
        let g = PI / 3.0;
        Vector4::new(self.uniform(-PI, PI), self.uniform(-g, g), self.uniform(-g, g), self.uniform(-PI, PI))
    }

    /// Disk spin in `[30, 60]` rad/s, gimbal rates in `[−1, 1]` rad/s.
    pub fn rates(&mut self) -> Vector4<f64> {
        Vector4::new(
            self.uniform(30.0, 60.0),
            self.uniform(-1.0, 1.0),
            self.uniform(-1.0, 1.0),
            self.uniform(-1.0, 1.0),
        )
    }

    pub fn vector(&mut self, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.uniform(-scale, scale))
    }

    /// Reduced state and companion `q2` drawn from the operating range.
    pub fn reduced_state(&mut self, mode: Mode) -> (DVector<f64>, f64) {
        let q = self.configuration();
        let v = self.rates();
        let k = mode.kept();
        let x = match mode {
            Mode::Om1 => DVector::from_column_slice(&[q[1], q[2], v[k[0]], v[k[1]], v[k[2]]]),
            Mode::Om2 => DVector::from_column_slice(&[q[3], v[k[0]], v[k[1]], v[k[2]]]),
        };
        (x, q[1])
    }
}

/// Largest entry-wise asymmetry of `H(q)`; exact symmetry is expected.
pub fn inertia_symmetry(p: &CmgParams<f64>, samples: usize, seed: u64) -> CheckReport {
    let mut s = Sampler::new(seed);
    let worst = (0..samples)
        .map(|_| {
            let h = inertia_matrix(p, &s.configuration());
            (h - h.transpose()).amax()
        })
        .fold(0.0, f64::max);
    CheckReport::new("inertia_symmetric", samples, worst, 0.0)
}

/// Positive definiteness and conditioning of `H(q)`.
///
/// The reported residual is `−λ_min/λ_max`, so any non-positive eigenvalue
/// fails; conditioning beyond the solver limit fails too.
pub fn inertia_definite(p: &CmgParams<f64>, samples: usize, seed: u64) -> CheckReport {
    let mut s = Sampler::new(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let eig = SymmetricEigen::new(inertia_matrix(p, &s.configuration())).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let r = if lo > 0.0 && hi / lo <= MAX_INERTIA_CONDITION { -lo / hi } else { lo.abs().max(1.0) };
        worst = worst.max(r);
    }
    CheckReport::new("inertia_positive_definite", samples, worst, 0.0)
}

/// `vᵀ(Ḣ − 2C)v` relative to `‖v‖²(‖Ḣ‖ + 2‖C‖)`, with `Ḣ` by central
/// differences of step `h` along `q̇`.
pub fn skew_symmetry(p: &CmgParams<f64>, samples: usize, seed: u64, h: f64) -> CheckReport {
    let mut s = Sampler::new(seed);
    let worst = (0..samples)
        .map(|_| {
            let q = s.configuration();
            let qd = s.rates();
            let v = Vector4::from_fn(|_, _| s.uniform(-1.0, 1.0));
            let hdot: Matrix4<f64> = (inertia_matrix(p, &(q + qd * h)) - inertia_matrix(p, &(q - qd * h))) / (2.0 * h);
            let c = coriolis_matrix(p, &q, &qd);
            let n = (hdot - c * 2.0).transpose() * v;
            let scale = v.norm_squared() * (hdot.norm() + 2.0 * c.norm());
            (v.dot(&n) / scale).abs()
        })
        .fold(0.0, f64::max);
    CheckReport::new("skew_symmetry", samples, worst, 1e-6)
}

/// Reduced accelerations satisfy the kept rows of the full equations of
/// motion with the locked coordinates at rest.
pub fn reduced_matches_full(p: &CmgParams<f64>, mode: Mode, samples: usize, seed: u64) -> CheckReport {
    let model = ReducedModel::new(*p, mode);
    let mut s = Sampler::new(seed);
    let worst = (0..samples).try_fold(0.0f64, |acc, _| -> Result<f64> {
        let (x, q2) = s.reduced_state(mode);
        let u = s.vector(mode.m(), 1.0);
        let q = model.configuration(&x, q2);
        let (_, v) = model.split(&x);
        let acc_r = model.acceleration(&q, &v, &u)?;
        let (mut qd, mut qdd, mut cur) = (Vector4::zeros(), Vector4::zeros(), Vector4::zeros());
        for (r, &i) in mode.kept().iter().enumerate() {
            qd[i] = v[r];
            qdd[i] = acc_r[r];
        }
        for (r, &i) in mode.actuated().iter().enumerate() {
            cur[i] = u[r];
        }
        let hq = inertia_matrix(p, &q) * qdd;
        let damp = (coriolis_matrix(p, &q, &qd) + friction_matrix(p)) * qd;
        let drive = motor_matrix(p) * cur;
        let res = hq + damp - drive;
        let scale = hq.amax().max(damp.amax()).max(drive.amax()).max(f64::MIN_POSITIVE);
        Ok(mode.kept().iter().map(|&i| res[i].abs() / scale).fold(acc, f64::max))
    });
    CheckReport::from(&format!("reduced_matches_full_{mode}"), samples, 1e-12, worst)
}

/// `F(x, x, u) = f(x, u)` for one embedding.
pub fn embedding_consistency(p: &CmgParams<f64>, mode: Mode, emb: Embedding, samples: usize, seed: u64) -> CheckReport {
    let model = ReducedModel::new(*p, mode);
    let mut s = Sampler::new(seed);
    let worst = (0..samples).try_fold(0.0f64, |acc, _| -> Result<f64> {
        let (x, q2) = s.reduced_state(mode);
        let u = s.vector(mode.m(), 1.0);
        let f = model.vector_field(&x, q2, &u)?;
        let fv = virtual_field(&model, emb, &x, &x, q2, &u)?;
        Ok(acc.max((f - fv).amax() / f_scale(&model, &x, q2, &u)?))
    });
    CheckReport::from(&format!("embedding_consistency_{mode}_{}", emb.name()), samples, 1e-12, worst)
}

/// Scale for relative comparisons of state derivatives: the largest term of
/// the rate equation, mapped through `ℋ⁻¹`, and the position rates.
fn f_scale(model: &ReducedModel<f64>, x: &DVector<f64>, q2: f64, u: &DVector<f64>) -> Result<f64> {
    let q = model.configuration(x, q2);
    let (_, v) = model.split(x);
    let terms = [model.motor() * u, model.coriolis(&q, &v) * &v, model.friction() * &v];
    let mut scale = v.amax();
    for t in terms {
        let a = model.solve_inertia(&q, &DMatrix::from_column_slice(3, 1, t.as_slice()))?;
        scale = scale.max(a.amax());
    }
    Ok(scale.max(f64::MIN_POSITIVE))
}

/// Analytic `(A, B)` against central differences of `F` in `(χ, μ)` at `χ = x`.
pub fn differential_jacobian(p: &CmgParams<f64>, mode: Mode, emb: Embedding, samples: usize, seed: u64) -> CheckReport {
    let model = ReducedModel::new(*p, mode);
    let mut s = Sampler::new(seed);
    let (n, m) = (mode.n(), mode.m());
    let worst = (0..samples).try_fold(0.0f64, |acc, _| -> Result<f64> {
        let (x, q2) = s.reduced_state(mode);
        let u = s.vector(m, 1.0);
        let (a, b) = differential(&model, emb, &model.schedule(&x, q2))?;
        let mut a_fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let d = (virtual_field(&model, emb, &xp, &x, q2, &u)? - virtual_field(&model, emb, &xm, &x, q2, &u)?)
                / (2.0 * h);
            a_fd.set_column(j, &d);
        }
        let mut b_fd = DMatrix::zeros(n, m);
        for j in 0..m {
            let h = 1e-6;
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            let d = (virtual_field(&model, emb, &x, &x, q2, &up)? - virtual_field(&model, emb, &x, &x, q2, &um)?)
                / (2.0 * h);
            b_fd.set_column(j, &d);
        }
        let ea = (&a_fd - &a).amax() / a.amax().max(f64::MIN_POSITIVE);
        let eb = (&b_fd - &b).amax() / b.amax().max(f64::MIN_POSITIVE);
        Ok(acc.max(ea).max(eb))
    });
    CheckReport::from(&format!("differential_jacobian_{mode}_{}", emb.name()), samples, 1e-5, worst)
}

/// The whole suite: dynamics properties on `samples` configurations and
/// embedding checks on a tenth as many states per mode and embedding.
pub fn run_all(p: &CmgParams<f64>, samples: usize, seed: u64) -> Vec<CheckReport> {
    let mut out = vec![
        inertia_symmetry(p, samples, seed),
        inertia_definite(p, samples, seed),
        skew_symmetry(p, samples, seed, 1e-6),
    ];
    let k = (samples / 10).max(1);
    for mode in [Mode::Om1, Mode::Om2] {
        out.push(reduced_matches_full(p, mode, k, seed));
        for emb in [Embedding::Lpv, Embedding::Npv] {
            out.push(embedding_consistency(p, mode, emb, k, seed));
            out.push(differential_jacobian(p, mode, emb, k, seed));
        }
    }
    out
}
