use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vccm::controllers::{
    om1_ff_lpv, om1_ff_npv, om2_ff_lpv, path_integral_gain, residual_delta, Controller, Realization,
};
use vccm::embedding::{differential, virtual_field, Embedding};
use vccm::grid::{Grid, SchedulingRange};
use vccm::params::CmgParams;
use vccm::reduced::{Mode, ReducedModel};
use vccm::reference::{inverse_dynamics, RefPoint};
use vccm::synthesis::GainTable;

const G: f64 = std::f64::consts::PI / 3.0;

fn model(mode: Mode) -> ReducedModel<f64> {
    ReducedModel::new(CmgParams::table(), mode)
}

/// A gain table with distinct, smoothly varying entries.
fn table(mode: Mode) -> GainTable<f64> {
    let g = Grid::new(SchedulingRange::default_for(mode), 3).unwrap();
    let gains = (0..g.len())
        .map(|k| {
            let s = g.point(k);
            DMatrix::from_fn(mode.m(), mode.n(), |r, c| {
                -(1.0 + r as f64) * (1.0 + 0.1 * c as f64) + 0.05 * s.iter().sum::<f64>() * ((r + c) % 3) as f64
            })
        })
        .collect();
    GainTable::new(g, gains).unwrap()
}

fn om1_state() -> impl Strategy<Value = DVector<f64>> {
    (-G..G, -G..G, 30.0..60.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(a, b, w, c, d)| DVector::from_column_slice(&[a, b, w, c, d]))
}

fn om2_state() -> impl Strategy<Value = (DVector<f64>, f64)> {
    (-3.0..3.0f64, 30.0..60.0f64, -1.0..1.0f64, -1.0..1.0f64, -G..G)
        .prop_map(|(a, w, c, d, q2)| (DVector::from_column_slice(&[a, w, c, d]), q2))
}

/// Arbitrary reference point; `u*` comes from inverse dynamics.
fn om1_ref() -> impl Strategy<Value = RefPoint<f64>> {
    (om1_state(), prop::array::uniform3(-2.0..2.0f64)).prop_map(|(x, a)| {
        let xdot2 = DVector::from_column_slice(&a);
        let u = inverse_dynamics(&model(Mode::Om1), &x, x[0], &xdot2).unwrap();
        RefPoint { q2: x[0], x, u, xdot2 }
    })
}

fn om1_xdot_ref(r: &RefPoint<f64>) -> DVector<f64> {
    let m = model(Mode::Om1);
    let (_, v) = m.split(&r.x);
    m.join(&(Mode::Om1.selector::<f64>() * v), &r.xdot2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// The LPV feed-forward makes the reference a trajectory of the LPV model
    /// scheduled on the measured state.
    #[test]
    fn om1_lpv_feed_forward_satisfies_the_lpv_model(x in om1_state(), r in om1_ref()) {
        let m = model(Mode::Om1);
        let ff = om1_ff_lpv(&m, &x, &r).unwrap();
        let (a, b) = differential(&m, Embedding::Lpv, &m.schedule(&x, 0.0)).unwrap();
        let lhs = a * &r.x + b * ff;
        let want = om1_xdot_ref(&r);
        prop_assert!((lhs - &want).amax() <= 1e-10 * want.amax().max(1.0));
    }

    #[test]
    fn om1_npv_feed_forward_satisfies_the_virtual_system(x in om1_state(), r in om1_ref()) {
        let m = model(Mode::Om1);
        let ff = om1_ff_npv(&m, &x, &r).unwrap();
        let lhs = virtual_field(&m, Embedding::Npv, &r.x, &x, 0.0, &ff).unwrap();
        let want = om1_xdot_ref(&r);
        prop_assert!((lhs - &want).amax() <= 1e-10 * want.amax().max(1.0));
    }

    #[test]
    fn zero_error_gives_the_feed_forward(r in om1_ref(), kind in prop::sample::select(Realization::ALL.to_vec())) {
        let m = model(Mode::Om1);
        let c = Controller::new(kind, m, table(Mode::Om1), 10).unwrap();
        let out = c.control(&r.x, r.q2, &r).unwrap();
        let ff = match kind {
            Realization::StandardLpv => r.u.clone(),
            Realization::LpvVccm => om1_ff_lpv(&m, &r.x, &r).unwrap(),
            Realization::NpvVccm => om1_ff_npv(&m, &r.x, &r).unwrap(),
        };
        prop_assert_eq!(out.u, ff);
    }

    #[test]
    fn controllers_are_pure(x in om1_state(), r in om1_ref(), kind in prop::sample::select(Realization::ALL.to_vec())) {
        let c = Controller::new(kind, model(Mode::Om1), table(Mode::Om1), 10).unwrap();
        let a = c.control(&x, x[0], &r).unwrap();
        let _ = c.control(&r.x, r.q2, &r).unwrap();
        prop_assert_eq!(a, c.control(&x, x[0], &r).unwrap());
    }

    #[test]
    fn path_gain_is_a_left_riemann_sum(x in om1_state(), r in om1_ref()) {
        let m = model(Mode::Om1);
        let t = table(Mode::Om1);
        let sigma = m.schedule(&x, 0.0);
        let (_, x2) = m.split(&x);
        let (_, x2r) = m.split(&r.x);
        let (k, _) = path_integral_gain(&t, &m, &sigma, &x2r, &x2, 10);
        let mut sum = DMatrix::zeros(3, 5);
        for i in 0..10 {
            let s = i as f64 / 10.0;
            let pt = [x[0], x[1], x2r[0] + s * (x2[0] - x2r[0]), x2r[1] + s * (x2[1] - x2r[1]), x2r[2] + s * (x2[2] - x2r[2])];
            sum += t.gain_at(&pt).0;
        }
        prop_assert!((k - sum / 10.0).amax() < 1e-12);
    }

    #[test]
    fn om2_lpv_feed_forward_leaves_a_residual_when_gimbals_move((x, q2) in om2_state(), w in 30.0..60.0f64) {
        let m = model(Mode::Om2);
        let xr = DVector::from_column_slice(&[0.5, w, 0.0, 0.0]);
        let r = RefPoint { u: inverse_dynamics(&m, &xr, 0.0, &DVector::zeros(3)).unwrap(), x: xr, xdot2: DVector::zeros(3), q2: 0.0 };
        let (_, res) = om2_ff_lpv(&m, &x, q2, &r);
        prop_assume!(x[2].abs() > 0.05 || x[3].abs() > 0.05);
        prop_assert!(res.amax() > 1e-6);
    }

    #[test]
    fn residual_vanishes_at_the_reference(r in om1_ref()) {
        let d = residual_delta(&model(Mode::Om1), &r.x, r.q2, &r).unwrap();
        prop_assert!(d.amax() < 1e-12);
    }
}

#[test]
fn origin_set_point_makes_lpv_vccm_and_standard_lpv_coincide() {
    let m = model(Mode::Om1);
    let r = RefPoint { x: DVector::zeros(5), u: DVector::zeros(3), xdot2: DVector::zeros(3), q2: 0.0 };
    let std = Controller::new(Realization::StandardLpv, m, table(Mode::Om1), 10).unwrap();
    let vccm = Controller::new(Realization::LpvVccm, m, table(Mode::Om1), 10).unwrap();
    for x in [[0.3, -0.2, 40.0, 0.5, -0.4], [-0.8, 0.6, 55.0, -1.0, 0.9], [0.0, 0.1, 31.0, 0.0, 0.0]] {
        let x = DVector::from_column_slice(&x);
        assert_eq!(std.control(&x, x[0], &r).unwrap(), vccm.control(&x, x[0], &r).unwrap());
    }
}

#[test]
fn om2_npv_path_keeps_q2_at_its_measured_value() {
    let m = model(Mode::Om2);
    let t = table(Mode::Om2);
    let sigma = DVector::from_column_slice(&[0.4, 50.0, 0.5, -0.5]);
    let x2r = DVector::from_column_slice(&[45.0, 0.0, 0.0]);
    let x2 = DVector::from_column_slice(&[50.0, 0.5, -0.5]);
    let (k, _) = path_integral_gain(&t, &m, &sigma, &x2r, &x2, 1);
    assert_eq!(k, t.gain_at(&[0.4, 45.0, 0.0, 0.0]).0);
}

#[test]
fn mismatched_gains_are_rejected() {
    assert!(Controller::new(Realization::LpvVccm, model(Mode::Om2), table(Mode::Om1), 10).is_err());
    assert!(Controller::new(Realization::LpvVccm, model(Mode::Om1), table(Mode::Om1), 0).is_err());
}
