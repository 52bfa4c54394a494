mod common;

use common::{line_net, random_net, random_region, rng, sample_in};
use proptest::prelude::*;
use rand::Rng;
use symadex::relaxation::RelaxationState;
use symadex::sampling::{
    approx_abstract_eval, far_point, gaussian_sample, worst_concrete_counterexample, HistorySet, SampleMode,
    SamplerConfig,
};
use symadex::{Polyhedron, RelaxationKind};

#[test]
fn approximation_bounds_exact_lp_from_above() {
    let mut r = rng(41);
    let mut checked = 0;
    while checked < 500 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[4, 3], 3);
        let p = random_region(&mut r, n0, 0.25, 2);
        let target = r.random_range(0..3);
        for kind in [RelaxationKind::Triangle, RelaxationKind::DeepPoly] {
            let state = RelaxationState::build(&net, &p, kind, None).unwrap();
            let v = state.verify(&net, target).unwrap();
            for _ in 0..10 {
                let x = sample_in(&mut r, &p).unwrap();
                let approx = approx_abstract_eval(&net, &state, &v.record, &x).unwrap();
                let exact = state.margin_at(&net, target, &x).unwrap();
                assert!(approx >= exact - 1e-6, "{kind:?}: approx {approx} < exact {exact}");
                checked += 1;
            }
        }
    }
}

#[test]
fn batches_are_pure_in_both_modes() {
    let mut r = rng(42);
    let mut admitted = 0;
    for round in 0..20 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[5, 4], 3);
        let p = random_region(&mut r, n0, 0.3, 1);
        let x = sample_in(&mut r, &p).unwrap();
        let target = net.classify(&x).unwrap();
        let state = RelaxationState::build(&net, &p, RelaxationKind::Triangle, None).unwrap();
        let v = state.verify(&net, target).unwrap();
        if v.verified {
            continue;
        }
        let x_star = v.record.input.clone();
        let (x_plus, _) = far_point(&p, &x_star).unwrap();
        for mode in [SampleMode::Abstract, SampleMode::Concrete] {
            let cfg = SamplerConfig::default();
            let b = gaussian_sample(&net, &state, &v.record, &x_star, &x_plus, 64, mode, &cfg, round).unwrap();
            let again = gaussian_sample(&net, &state, &v.record, &x_star, &x_plus, 64, mode, &cfg, round).unwrap();
            assert_eq!(b, again);
            assert!(b.len() <= 64);
            for pt in &b.points {
                assert!(p.contains(pt));
                match mode {
                    SampleMode::Abstract => assert!(state.margin_at(&net, target, pt).unwrap() < 0.0),
                    SampleMode::Concrete => assert!(!net.is_adversarial(pt, target).unwrap()),
                }
                admitted += 1;
            }
        }
    }
    assert!(admitted > 100, "only {admitted} samples admitted");
}

#[test]
fn concrete_samples_respect_line_boundary() {
    let net = line_net();
    let p = Polyhedron::from_box(vec![0.3], vec![0.7]).unwrap();
    let state = RelaxationState::build(&net, &p, RelaxationKind::Triangle, None).unwrap();
    let v = state.verify(&net, 0).unwrap();
    let x_star = worst_concrete_counterexample(&net, &p, 0, 5).unwrap().unwrap();
    assert!((x_star[0] - 0.3).abs() < 1e-9);
    let (x_plus, d) = far_point(&p, &x_star).unwrap();
    assert!((x_plus[0] - 0.7).abs() < 1e-9 && (d - 0.4).abs() < 1e-9);
    let b = gaussian_sample(
        &net,
        &state,
        &v.record,
        &x_star,
        &x_plus,
        100,
        SampleMode::Concrete,
        &SamplerConfig::default(),
        9,
    )
    .unwrap();
    assert!(!b.is_empty());
    assert!(b.points.iter().all(|x| x[0] < 0.5 && x[0] >= 0.3));
}

#[test]
fn far_point_beats_random_points() {
    let mut r = rng(43);
    for _ in 0..20 {
        let n0 = r.random_range(2..=5);
        let p = random_region(&mut r, n0, 0.3, 3);
        let x = sample_in(&mut r, &p).unwrap();
        let (far, d) = far_point(&p, &x).unwrap();
        assert!(p.contains(&far));
        for _ in 0..1000 {
            let y = sample_in(&mut r, &p).unwrap();
            let dy: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            assert!(d >= dy - 1e-9, "{d} < {dy}");
        }
    }
}

#[test]
fn worst_concrete_stays_inside_and_fails_target() {
    let mut r = rng(44);
    let mut found = 0;
    for seed in 0..40 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[6], 3);
        let p = random_region(&mut r, n0, 0.3, 2);
        let x = sample_in(&mut r, &p).unwrap();
        let target = net.classify(&x).unwrap();
        if let Some(w) = worst_concrete_counterexample(&net, &p, target, seed).unwrap() {
            assert!(p.contains(&w));
            assert!(!net.is_adversarial(&w, target).unwrap());
            found += 1;
        }
    }
    assert!(found > 5);
}

proptest! {
    #[test]
    fn history_keeps_latest_batches(sizes in proptest::collection::vec(0usize..4, 0..12), cap in 1usize..6) {
        let mut h = HistorySet::<f64>::new(cap);
        for (i, &n) in sizes.iter().enumerate() {
            h.push(vec![vec![i as f64]; n]);
        }
        prop_assert_eq!(h.len(), sizes.len().min(cap));
        let kept: Vec<f64> = h.batches().flat_map(|b| b.iter().map(|p| p[0])).collect();
        let start = sizes.len().saturating_sub(cap);
        let expect: Vec<f64> = (start..sizes.len()).flat_map(|i| vec![i as f64; sizes[i]]).collect();
        prop_assert_eq!(kept, expect);
        let region = Polyhedron::from_box(vec![0.0], vec![3.0]).unwrap();
        prop_assert!(h.filtered(&region).iter().all(|p| region.contains(p)));
    }
}
