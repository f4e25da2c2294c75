mod common;

use std::sync::OnceLock;

use common::rng;
use ddguard_core::config::ScenarioConfig;
use ddguard_core::datamodel::ModelSet;
use ddguard_core::pipeline;
use ddguard_core::setops::{HPolytope, MatrixZonotope, Zonotope};
use ddguard_core::stc::{
    certify_rci, rosc_polytope, rosc_step, shrink_offsets, synth_family, synth_terminal, RciOptions, RoscFamily,
    Template, TerminalController,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

fn scalar_model(a: f64, b: f64) -> ModelSet {
    let ab = DMatrix::from_row_slice(1, 2, &[a, b]);
    ModelSet::new(1, 1, MatrixZonotope::new(ab, vec![]).unwrap())
        .unwrap()
        .with_vertices(1, 10)
        .unwrap()
}

fn interval(r: f64) -> Zonotope {
    Zonotope::from_box(&[-r], &[r]).unwrap()
}

fn hinterval(r: f64) -> HPolytope {
    HPolytope::from_box(&[-r], &[r]).unwrap()
}

fn zero_gain() -> TerminalController {
    TerminalController {
        gain: DMatrix::zeros(1, 1),
        offset: DVector::zeros(1),
    }
}

fn scalar_family(levels: usize) -> RoscFamily {
    let ms = scalar_model(1.0, 1.0);
    let template = Template::coupled(&ms.center_a(), &ms.center_b(), 0.05, 40);
    synth_family(
        &ms,
        zero_gain(),
        interval(0.1),
        &hinterval(2.0),
        &hinterval(1.0),
        &interval(0.1),
        levels,
        &template,
    )
    .unwrap()
}

struct Shipped {
    cfg: ScenarioConfig,
    ms: ModelSet,
    family: RoscFamily,
}

fn shipped() -> &'static Shipped {
    static CELL: OnceLock<Shipped> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ScenarioConfig::two_tank();
        let data = pipeline::collect(&cfg).unwrap();
        let ms = pipeline::identify(&cfg, &data).unwrap();
        let family = pipeline::synthesize(&cfg, &ms).unwrap();
        Shipped { cfg, ms, family }
    })
}

fn sample(r: &mut impl Rng, z: &Zonotope) -> DVector<f64> {
    let beta = DVector::from_fn(z.num_generators(), |_, _| r.random_range(-1.0..=1.0));
    z.center() + z.generators() * beta
}

#[test]
fn scalar_terminal_set() {
    let ms = scalar_model(0.5, 1.0);
    let opts = RciOptions {
        gain_override: Some(DMatrix::zeros(1, 1)),
        ..RciOptions::default()
    };
    let (term, t0) = synth_terminal(&ms, &hinterval(1.0), &hinterval(1.0), &interval(0.1), &opts).unwrap();
    assert_eq!(term.gain[(0, 0)], 0.0);
    let (lo, hi) = t0.interval_hull();
    assert!(lo[0] <= -0.2 + 1e-9 && hi[0] >= 0.2 - 1e-9);
    assert!(hi[0] <= 0.2 * 1.05 + 1e-6);
}

#[test]
fn scalar_certification() {
    let ms = scalar_model(0.5, 1.0);
    let vs = ms.vertex_models().unwrap();
    let x = hinterval(1.0);
    let u = hinterval(1.0);
    assert!(certify_rci(vs, &zero_gain(), &interval(0.2), &u, &interval(0.1), &x).unwrap());
    assert!(!certify_rci(vs, &zero_gain(), &interval(0.2), &u, &interval(0.2), &x).unwrap());
    assert!(!certify_rci(vs, &zero_gain(), &interval(0.2), &u, &interval(0.1), &hinterval(0.15)).unwrap());
}

#[test]
fn tiny_noise_shrinks_the_terminal_set() {
    let ms = scalar_model(0.5, 1.0);
    let opts = RciOptions {
        eps: 1e-12,
        ..RciOptions::default()
    };
    let (_, big) = synth_terminal(&ms, &hinterval(1.0), &hinterval(1.0), &interval(1e-3), &opts).unwrap();
    let (_, small) = synth_terminal(&ms, &hinterval(1.0), &hinterval(1.0), &interval(1e-9), &opts).unwrap();
    assert!(small.radius().amax() < 1e-8);
    assert!(small.radius().amax() < big.radius().amax());
}

#[test]
fn shipped_terminal_set_is_small_and_certified() {
    let s = shipped();
    let t0 = &s.family.t0;
    for i in 0..2 {
        let mut d = DVector::zeros(2);
        d[i] = 1.0;
        assert!(t0.support(&d).unwrap() <= 0.05);
        assert!(t0.support(&-d).unwrap() <= 0.05);
    }
    let vs = s.ms.vertex_models().unwrap();
    let ok = certify_rci(
        vs,
        &s.family.terminal,
        t0,
        &s.cfg.input_set(),
        &s.cfg.disturbance_set(),
        &s.cfg.state_set(),
    )
    .unwrap();
    assert!(ok);
}

#[test]
fn certification_ignores_generator_order() {
    let s = shipped();
    let vs = s.ms.vertex_models().unwrap();
    let t0 = &s.family.t0;
    let mut r = rng(3);
    for _ in 0..5 {
        let mut idx: Vec<usize> = (0..t0.num_generators()).collect();
        idx.shuffle(&mut r);
        let permuted = Zonotope::new(t0.center().clone(), t0.generators().select_columns(idx.iter())).unwrap();
        let args = (&s.cfg.input_set(), &s.cfg.disturbance_set(), &s.cfg.state_set());
        assert!(certify_rci(vs, &s.family.terminal, &permuted, args.0, args.1, args.2).unwrap());
        let inflated = permuted.scale_about_center(3.0);
        let base = certify_rci(
            vs,
            &s.family.terminal,
            &t0.scale_about_center(3.0),
            args.0,
            args.1,
            args.2,
        )
        .unwrap();
        assert_eq!(
            certify_rci(vs, &s.family.terminal, &inflated, args.0, args.1, args.2).unwrap(),
            base
        );
    }
}

#[test]
fn shrink_offsets_examples() {
    let w = Zonotope::from_box(&[-1e-3, -1e-3], &[1e-3, 1e-3]).unwrap();
    let h = DVector::from_vec(vec![1.0]);
    let row = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    assert!((shrink_offsets(&h, &row, &w).unwrap()[0] - 0.999).abs() < 1e-15);
    let origin = Zonotope::point(DVector::zeros(2));
    assert_eq!(shrink_offsets(&h, &row, &origin).unwrap(), h);
}

#[test]
fn shrink_offsets_match_sign_enumeration() {
    let mut r = rng(4);
    for _ in 0..20 {
        let w = common::random_zonotope(&mut r, 2, 4, 0.3);
        let normals = DMatrix::from_fn(6, 2, |_, _| r.random_range(-1.0..1.0));
        let h = DVector::from_fn(6, |_, _| r.random_range(0.0..2.0));
        let got = shrink_offsets(&h, &normals, &w).unwrap();
        let pts = common::sign_points(&w);
        for i in 0..6 {
            let row = normals.row(i).transpose();
            let oracle = h[i] - common::support_by_points(&pts, &row);
            assert!((got[i] - oracle).abs() < 1e-9);
        }
    }
}

#[test]
fn scalar_one_step_set() {
    let ms = scalar_model(1.0, 1.0);
    let vs = ms.vertex_models().unwrap();
    let t0_h = interval(0.1).to_hpolytope().unwrap();
    let target = HPolytope::new(
        t0_h.normals().clone(),
        shrink_offsets(t0_h.offsets(), t0_h.normals(), &interval(0.1)).unwrap(),
    )
    .unwrap();
    let template = Template::coupled(&ms.center_a(), &ms.center_b(), 0.05, 40);
    let (_, tx) = rosc_step(vs, &target, &hinterval(2.0), &hinterval(1.0), &template).unwrap();
    let (lo, hi) = tx.interval_hull();
    assert!((lo[0] + 1.0).abs() < 1e-7 && (hi[0] - 1.0).abs() < 1e-7, "{lo} {hi}");
}

#[test]
fn scalar_family_levels() {
    let fam = scalar_family(2);
    assert_eq!(fam.num_levels(), 2);
    let (lo, hi) = fam.state_set(1).interval_hull();
    assert!((lo[0] + 1.0).abs() < 1e-7 && (hi[0] - 1.0).abs() < 1e-7);
    let (lo, hi) = fam.state_set(2).interval_hull();
    assert!((lo[0] + 1.9).abs() < 1e-7 && (hi[0] - 1.9).abs() < 1e-7, "{lo} {hi}");
}

#[test]
fn scalar_control_cancels_the_state() {
    let fam = scalar_family(1);
    let (u, j) = fam.control(&DVector::from_vec(vec![0.7]), None).unwrap();
    assert_eq!(j, 1);
    assert!((u[0] + 0.7).abs() < 1e-9);
    let (u, j) = fam.control(&DVector::from_vec(vec![0.05]), None).unwrap();
    assert_eq!((j, u[0]), (0, 0.0));
}

#[test]
fn zero_levels_keep_only_the_terminal_set() {
    let fam = scalar_family(0);
    assert_eq!(fam.num_levels(), 0);
    assert_eq!(fam.membership_index(&DVector::from_vec(vec![0.0])).unwrap(), Some(0));
    assert_eq!(fam.membership_index(&DVector::from_vec(vec![0.5])).unwrap(), None);
}

#[test]
fn single_model_intersection_is_its_own_set() {
    let ms = scalar_model(0.8, 0.5);
    let vs = ms.vertex_models().unwrap();
    let target = hinterval(0.2);
    let p = rosc_polytope(vs, &target, &hinterval(2.0), &hinterval(1.0)).unwrap();
    assert_eq!(p.num_rows(), 2 + 2 + 2);
    // x + u pairs with 0.8x + 0.5u ∈ [−0.2, 0.2].
    assert!(p.contains(&DVector::from_vec(vec![0.5, -0.8])).unwrap());
    assert!(!p.contains(&DVector::from_vec(vec![0.5, 0.0])).unwrap());
}

#[test]
fn opposite_models_give_a_subset_of_each() {
    let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let g = DMatrix::from_row_slice(1, 2, &[0.5, 0.0]);
    let ms = ModelSet::new(1, 1, MatrixZonotope::new(a, vec![g]).unwrap())
        .unwrap()
        .with_vertices(1, 10)
        .unwrap();
    let vs = ms.vertex_models().unwrap();
    assert_eq!(vs.len(), 2);
    let template = Template::coupled(&DMatrix::from_element(1, 1, 0.5), &ms.center_b(), 0.05, 40);
    let target = hinterval(0.1);
    let (x_set, u_set) = (hinterval(2.0), hinterval(1.0));
    let (_, both) = rosc_step(vs, &target, &x_set, &u_set, &template).unwrap();
    // |0.5x + u| ≤ 0.1 alone allows |x| up to the state cap of 2; with the
    // mirrored model as well, only |x| ≤ 0.2.
    let (lo, hi) = both.interval_hull();
    assert!(lo[0] >= -0.2 - 1e-9 && hi[0] <= 0.2 + 1e-9, "{lo} {hi}");
    for single in [scalar_model(0.5, 1.0), scalar_model(-0.5, 1.0)] {
        let (_, own) = rosc_step(single.vertex_models().unwrap(), &target, &x_set, &u_set, &template).unwrap();
        for d in [1.0, -1.0] {
            let dir = DVector::from_vec(vec![d]);
            assert!(both.support(&dir).unwrap() <= own.support(&dir).unwrap() + 1e-9);
        }
    }
}

#[test]
fn membership_scans_upward() {
    let s = shipped();
    let fam = &s.family;
    assert_eq!(fam.membership_index(fam.t0.center()).unwrap(), Some(0));
    let mut r = rng(8);
    let mut found = false;
    for _ in 0..2000 {
        let x = sample(&mut r, fam.state_set(3));
        let inner = (0..3).any(|j| fam.state_set(j).contains_point(&x).unwrap());
        if !inner {
            assert_eq!(fam.membership_index(&x).unwrap(), Some(3));
            found = true;
            break;
        }
    }
    assert!(found);
    let far = DVector::from_vec(vec![10.0, 10.0]);
    assert_eq!(fam.membership_index(&far).unwrap(), None);
}

#[test]
fn projection_matches_lifted_supports() {
    let s = shipped();
    for level in &s.family.levels {
        for d in common::directions(12) {
            let mut lifted = DVector::zeros(level.xi.dim());
            lifted.rows_mut(0, 2).copy_from(&d);
            let a = level.tx.support(&d).unwrap();
            let b = level.xi.support(&lifted).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn augmented_sets_steer_into_the_shrunk_previous_level() {
    let s = shipped();
    let fam = &s.family;
    let w = s.cfg.disturbance_set();
    let vs = s.ms.vertex_models().unwrap();
    for j in 1..=fam.num_levels() {
        let prev = fam.state_set_h(j - 1);
        let shrunk = shrink_offsets(prev.offsets(), prev.normals(), &w).unwrap();
        let xi = &fam.levels[j - 1].xi;
        for v in vs.iter() {
            let ha = prev.normals() * &v.a;
            let hb = prev.normals() * &v.b;
            for r in 0..prev.num_rows() {
                let mut d = DVector::zeros(xi.dim());
                d.rows_mut(0, 2).copy_from(&ha.row(r).transpose());
                d.rows_mut(2, 3).copy_from(&hb.row(r).transpose());
                assert!(xi.support(&d).unwrap() <= shrunk[r] + 1e-7, "level {j} row {r}");
            }
        }
    }
}

#[test]
fn sampled_states_step_into_the_previous_level() {
    let s = shipped();
    let fam = &s.family;
    let w_pts = common::sign_points(&s.cfg.disturbance_set());
    let vs = s.ms.vertex_models().unwrap();
    let mut r = rng(10);
    for j in 1..=fam.num_levels() {
        let xi = &fam.levels[j - 1].xi;
        let target = fam.state_set_h(j - 1);
        for _ in 0..100 {
            let x = sample(&mut r, xi).rows(0, 2).into_owned();
            let u = fam.level_input(j, &x, None).unwrap();
            for v in vs.iter() {
                let next = &v.a * &x + &v.b * &u;
                for w in &w_pts {
                    assert!(target.contains_tol(&(&next + w), 1e-7).unwrap(), "level {j}");
                }
            }
        }
    }
}

#[test]
fn adversarial_closed_loop_reaches_the_terminal_set() {
    let s = shipped();
    let fam = &s.family;
    let n_levels = fam.num_levels();
    let w_pts = common::sign_points(&s.cfg.disturbance_set());
    let vs: Vec<_> = s.ms.vertex_models().unwrap().iter().cloned().collect();
    let mut r = rng(11);
    for _ in 0..30 {
        let start = r.random_range(1..=n_levels);
        let mut x = sample(&mut r, fam.state_set(start));
        let mut u_prev = None;
        let mut arrived = None;
        for k in 0..n_levels + 10 {
            let (u, j) = fam.control(&x, u_prev.as_ref()).unwrap();
            if j == 0 && arrived.is_none() {
                arrived = Some(k);
            }
            if arrived.is_some() {
                assert_eq!(j, 0, "left the terminal set");
            }
            let v = &vs[r.random_range(0..vs.len())];
            let w = &w_pts[r.random_range(0..w_pts.len())];
            x = &v.a * &x + &v.b * &u + w;
            u_prev = Some(u);
        }
        assert!(arrived.unwrap() <= n_levels);
    }
}

#[test]
fn family_round_trips_through_json() {
    let s = shipped();
    let text = s.family.to_json().unwrap();
    let back = RoscFamily::from_json(&text).unwrap();
    assert_eq!(back, s.family);
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["N"], 40);
    assert_eq!(doc["levels"].as_array().unwrap().len(), 40);
}
