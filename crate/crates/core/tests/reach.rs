mod common;

use common::rng;
use ddguard_core::config::ScenarioConfig;
use ddguard_core::datamodel::{stacked_state_input, ModelSet};
use ddguard_core::pipeline;
use ddguard_core::reach::{detect, reach_one_step, verify_safety};
use ddguard_core::setops::{MatrixZonotope, Zonotope};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn shipped() -> (ScenarioConfig, ModelSet) {
    let cfg = ScenarioConfig::two_tank();
    let data = pipeline::collect(&cfg).unwrap();
    let ms = pipeline::identify(&cfg, &data).unwrap();
    (cfg, ms)
}

fn sample_zonotope(r: &mut ChaCha8Rng, z: &Zonotope) -> DVector<f64> {
    let beta = DVector::from_fn(z.num_generators(), |_, _| r.random_range(-1.0..=1.0));
    z.center() + z.generators() * beta
}

fn sample_model(r: &mut ChaCha8Rng, mz: &MatrixZonotope) -> DMatrix<f64> {
    mz.generators()
        .iter()
        .fold(mz.center().clone(), |acc, g| acc + g * r.random_range(-1.0..=1.0))
}

fn sample_box(r: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| r.random_range(*l..*h)))
}

#[test]
fn exact_model_gives_a_point() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let mut ab = DMatrix::zeros(2, 3);
    ab.columns_mut(0, 2).copy_from(&a);
    ab.columns_mut(2, 1).copy_from(&b);
    let ms = ModelSet::new(2, 1, MatrixZonotope::new(ab, vec![]).unwrap()).unwrap();
    let x = DVector::from_vec(vec![1.0, -1.0]);
    let u = DVector::from_vec(vec![0.5]);
    let z = reach_one_step(&ms, &x, &u, &Zonotope::point(DVector::zeros(2))).unwrap();
    assert_eq!(z.num_generators(), 0);
    assert!((z.center() - (&a * &x + &b * &u)).amax() < 1e-15);
}

#[test]
fn equilibrium_step_contains_disturbed_successors() {
    let (cfg, ms) = shipped();
    let w = cfg.disturbance_set();
    let mut plant = ddguard_core::sim::Plant::new(cfg.plant_model(), 4, ddguard_core::sim::DisturbanceMode::Uniform);
    let (x, u) = (DVector::zeros(2), DVector::zeros(3));
    let reach = reach_one_step(&ms, &x, &u, &w).unwrap();
    for _ in 0..1000 {
        assert!(reach.contains_point(&plant.step(&x, &u)).unwrap());
    }
}

#[test]
fn reach_set_dominates_vertex_models() {
    let (cfg, ms) = shipped();
    let w = cfg.disturbance_set();
    let mut r = rng(5);
    let x_set = &cfg.constraints.state;
    let u_set = &cfg.constraints.input;
    for _ in 0..20 {
        let x = sample_box(&mut r, &x_set.lo, &x_set.hi);
        let u = sample_box(&mut r, &u_set.lo, &u_set.hi);
        let reach = reach_one_step(&ms, &x, &u, &w).unwrap();
        let v = stacked_state_input(&x, &u);
        for d in common::directions(16) {
            // The maximizing vertex of the model set for this direction.
            let vertex = ms.mz.generators().iter().fold(ms.mz.center().clone(), |acc, g| {
                let s = (g * &v).dot(&d);
                acc + g * if s >= 0.0 { 1.0 } else { -1.0 }
            });
            let oracle = (vertex * &v).dot(&d) + w.support(&d).unwrap();
            assert!(reach.support(&d).unwrap() >= oracle - 1e-9);
            let members: Vec<DVector<f64>> = (0..16).map(|_| sample_model(&mut r, &ms.mz) * &v).collect();
            assert!(reach.support(&d).unwrap() >= common::support_by_points(&members, &d) - 1e-12);
        }
    }
}

#[test]
fn random_transitions_stay_in_reach_set() {
    let (cfg, ms) = shipped();
    let w = cfg.disturbance_set();
    let mut r = rng(6);
    for _ in 0..10_000 {
        let x = sample_box(&mut r, &cfg.constraints.state.lo, &cfg.constraints.state.hi);
        let u = sample_box(&mut r, &cfg.constraints.input.lo, &cfg.constraints.input.hi);
        let model = sample_model(&mut r, &ms.mz);
        let next = model * stacked_state_input(&x, &u) + sample_zonotope(&mut r, &w);
        assert!(reach_one_step(&ms, &x, &u, &w).unwrap().contains_point(&next).unwrap());
    }
}

#[test]
fn detector_examples() {
    let (cfg, ms) = shipped();
    let w = cfg.disturbance_set();
    let mut plant = ddguard_core::sim::Plant::new(cfg.plant_model(), 8, ddguard_core::sim::DisturbanceMode::Vertex);
    let x = DVector::from_vec(vec![0.05, -0.02]);
    let u = DVector::from_vec(vec![0.1, -0.2, 0.05]);
    let next = plant.step(&x, &u);
    assert!(!detect(&ms, &x, &u, &next, &w).unwrap().anomaly);

    let reach = reach_one_step(&ms, &x, &u, &w).unwrap();
    assert!(!detect(&ms, &x, &u, reach.center(), &w).unwrap().anomaly);

    let (lo, hi) = reach.interval_hull();
    let mut shifted = next.clone();
    shifted[0] += hi[0] - lo[0] + 0.01;
    let verdict = detect(&ms, &x, &u, &shifted, &w).unwrap();
    assert!(verdict.anomaly);
    assert_eq!(verdict.tested_state, shifted);
}

#[test]
fn larger_noise_bound_only_removes_alarms() {
    let cfg = ScenarioConfig::two_tank();
    let data = pipeline::collect(&cfg).unwrap();
    let ms = pipeline::identify(&cfg, &data).unwrap();
    let mut big_cfg = cfg.clone();
    big_cfg.disturbance.generators = cfg
        .disturbance
        .generators
        .iter()
        .map(|g| g.iter().map(|v| v * 2.0).collect())
        .collect();
    let w_big = big_cfg.disturbance_set();
    let ms_big = pipeline::identify(&big_cfg, &data).unwrap();
    let w = cfg.disturbance_set();
    let mut r = rng(12);
    let mut alarms = 0;
    for _ in 0..300 {
        let x = sample_box(&mut r, &cfg.constraints.state.lo, &cfg.constraints.state.hi);
        let u = sample_box(&mut r, &cfg.constraints.input.lo, &cfg.constraints.input.hi);
        let reach = reach_one_step(&ms, &x, &u, &w).unwrap();
        let (lo, hi) = reach.interval_hull();
        let probe = DVector::from_fn(2, |i, _| r.random_range(lo[i] - 0.01..hi[i] + 0.01));
        let small_alarm = detect(&ms, &x, &u, &probe, &w).unwrap().anomaly;
        let big_alarm = detect(&ms_big, &x, &u, &probe, &w_big).unwrap().anomaly;
        if big_alarm {
            assert!(small_alarm);
        }
        alarms += small_alarm as usize;
    }
    assert!(alarms > 0);
}

#[test]
fn safety_verdict_examples() {
    let (cfg, ms) = shipped();
    let w = cfg.disturbance_set();
    let u_set = cfg.input_set();
    let x_eta = cfg.state_set();
    let x = DVector::from_vec(vec![0.0, 0.0]);

    let mut bad_u = DVector::zeros(3);
    bad_u[0] = cfg.constraints.input.hi[0] + 0.1;
    let v = verify_safety(&ms, &x, &bad_u, &u_set, &x_eta, &w, false, false).unwrap();
    assert!(!v.input_admissible && v.emergency_required);

    let ok_u = DVector::zeros(3);
    let v = verify_safety(&ms, &x, &ok_u, &u_set, &x_eta, &w, true, true).unwrap();
    assert!(v.input_admissible && v.one_step_safe && !v.emergency_required);
    let v = verify_safety(&ms, &x, &ok_u, &u_set, &x_eta, &w, true, false).unwrap();
    assert!(v.emergency_required);

    // Upper facet of h₁ with the pump input pushing further up.
    let edge = DVector::from_vec(vec![cfg.constraints.state.hi[0] - 0.005, 0.0]);
    let push = DVector::from_vec(vec![cfg.constraints.input.hi[0], 0.0, 0.0]);
    let v = verify_safety(&ms, &edge, &push, &u_set, &x_eta, &w, false, false).unwrap();
    assert!(v.input_admissible && !v.one_step_safe && v.emergency_required);
}
