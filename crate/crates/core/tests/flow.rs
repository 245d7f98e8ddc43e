//! End-to-end behaviour of the steppers on desk-scale runs.

use qpbo::dynamics::{
    evolve, picard_iterate, stable_dt, step_ifrk4, time_of_existence, DynamicsError, FlowParams, Integrator,
};
use qpbo::experiments::{calibrate_from_runs, calibrate_gronwall_c, StudyConfig};
use qpbo::{FrequencyBasis, QpField};

fn desk_random() -> QpField {
    QpField::random(&FrequencyBasis::golden_pair(32), 5, 32, 2.5, 1.0, true)
}

fn final_state(u0: &QpField, params: &FlowParams) -> QpField {
    evolve(u0, params, 1_000_000).unwrap().final_state().clone()
}

#[test]
fn desk_run_completes_with_finite_diagnostics() {
    let rec = evolve(&desk_random(), &FlowParams::desk(), 50).unwrap();
    assert_eq!(rec.final_time(), 0.5);
    assert_eq!(rec.times.len(), 11);
    assert!(rec.diagnostics.iter().all(|d| d.is_finite() && d.momentum >= 0.0));
}

#[test]
fn both_steppers_are_fourth_order() {
    let u0 = StudyConfig::desk().initial_field().unwrap();
    for integrator in [Integrator::Rk4, Integrator::Ifrk4] {
        let p = |dt: f64| FlowParams { dt, integrator, t_end: 0.25, ..FlowParams::desk() };
        let h = 4e-3;
        let reference = final_state(&u0, &p(h / 8.0));
        let err = |dt: f64| final_state(&u0, &p(dt)).sub(&reference).unwrap().l2_norm();
        let (e1, e2) = (err(h), err(h / 2.0));
        let ratio = e1 / e2;
        assert!((14.0..=18.0).contains(&ratio), "{integrator:?}: {e1:e} / {e2:e} = {ratio}");
    }
}

#[test]
fn integrating_factor_conserves_momentum_better_than_rk4() {
    let u0 = desk_random();
    let drift = |integrator| {
        let rec = evolve(&u0, &FlowParams { integrator, ..FlowParams::desk() }, 1000).unwrap();
        let (a, b) = (rec.diagnostics[0].momentum, rec.diagnostics.last().unwrap().momentum);
        ((b - a) / a).abs()
    };
    let (ifrk4, rk4) = (drift(Integrator::Ifrk4), drift(Integrator::Rk4));
    assert!(ifrk4 < rk4, "ifrk4 {ifrk4:e} vs rk4 {rk4:e}");
}

#[test]
fn oversized_rk4_step_reports_blow_up_with_partial_record() {
    let b = FrequencyBasis::golden_pair(32);
    let dt = 20.0 * stable_dt(&b, 8.0, Integrator::Rk4);
    let p = FlowParams { dt, t_end: 200.0 * dt, integrator: Integrator::Rk4, ..FlowParams::desk() };
    match evolve(&desk_random(), &p, 1) {
        Err(DynamicsError::BlowUp { time, partial: Some(rec) }) => {
            assert!(time > 0.0 && time <= p.t_end);
            assert!(rec.final_time() < time);
        }
        other => panic!("expected blow-up, got {:?}", other.map(|r| r.final_time())),
    }
}

#[test]
fn picard_limit_agrees_with_one_step_to_fifth_order() {
    let u0 = desk_random().delta_regularize(4.0);
    let errs: Vec<f64> = [2e-3, 1e-3]
        .iter()
        .map(|&dt| {
            let p = FlowParams { dt, ..FlowParams::desk() };
            let pic = picard_iterate(&u0, &p, dt, 40).unwrap();
            pic.state.sub(&step_ifrk4(&u0, &p, 0.0).unwrap()).unwrap().l2_norm()
        })
        .collect();
    let ratio = errs[0] / errs[1];
    assert!((24.0..=40.0).contains(&ratio), "{errs:?}");
}

#[test]
fn calibrated_constant_survives_doubled_data() {
    let cfg = StudyConfig::desk();
    let u0 = cfg.initial_field().unwrap();
    let (cal, _) = calibrate_gronwall_c(&u0, &cfg.flow, &cfg.n_list, &cfg).unwrap();
    let doubled = u0.scale(2.0);
    let t = time_of_existence(&doubled, cfg.flow.s, cal.c);
    assert!((t - 0.5 * time_of_existence(&u0, cfg.flow.s, cal.c)).abs() < 1e-15);
    let runs: Vec<_> = cfg
        .n_list
        .iter()
        .map(|&n| evolve(&doubled, &FlowParams { n, t_end: 0.9 * t, ..cfg.flow.clone() }, 10).unwrap())
        .collect();
    let j = cal.c.log2() as i32;
    let again = calibrate_from_runs(&runs, cfg.flow.s, (j, j)).expect("calibrated C covers the doubled datum");
    assert!(again.checked > 0);
}
