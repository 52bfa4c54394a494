mod common;

use common::{
    box_backsub, exact_min_margin_2d, grid_violations, random_net, random_region, random_small_arch, reference_net,
    rng, sample_in, square,
};
use proptest::prelude::*;
use rand::Rng;
use symadex::network::Network;
use symadex::relaxation::{verify_region, worst_abstract_counterexample, Phase, RelaxationState};
use symadex::{Polyhedron, RelaxationKind};

const KINDS: [RelaxationKind; 2] = [RelaxationKind::Triangle, RelaxationKind::DeepPoly];

#[test]
fn reference_witness_attains_optimum() {
    let net = reference_net();
    let v = verify_region(&net, &square(), 1, RelaxationKind::Triangle).unwrap();
    assert!(!v.verified);
    assert!((v.margin + 4.0).abs() <= 1e-6);
    let x = worst_abstract_counterexample(&v.record).unwrap();
    assert!(square().contains(&x));
    let state = RelaxationState::build(&net, &square(), RelaxationKind::Triangle, None).unwrap();
    assert!((state.margin_at(&net, 1, &x).unwrap() + 4.0).abs() <= 1e-6);
}

#[test]
fn verified_regions_hold_under_enumeration() {
    let mut r = rng(31);
    let mut verified = 0;
    for _ in 0..60 {
        let arch = random_small_arch(&mut r, 6);
        let classes = r.random_range(2..=3);
        let net = random_net(&mut r, 2, &arch, classes);
        let (width, cuts) = (r.random_range(0.02..0.2), r.random_range(0..3));
        let p = random_region(&mut r, 2, width, cuts);
        let center = sample_in(&mut r, &p).unwrap();
        let target = net.classify(&center).unwrap();
        for kind in KINDS {
            let v = verify_region(&net, &p, target, kind).unwrap();
            let exact = exact_min_margin_2d(&net, &p, target);
            assert!(
                exact >= v.margin - 1e-7,
                "{kind:?}: exact {exact} < relaxed {}",
                v.margin
            );
            if v.verified {
                verified += 1;
                assert!(
                    exact > -1e-9,
                    "verified region has counterexample, exact margin {exact}"
                );
                assert_eq!(grid_violations(&net, &p, target, 60), 0);
            }
        }
    }
    assert!(verified > 20, "only {verified} regions verified; fixture too weak");
}

#[test]
fn deeppoly_on_boxes_matches_classic_backsubstitution() {
    let mut r = rng(32);
    for _ in 0..50 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[4, 3], 3);
        let p = random_region(&mut r, n0, 0.3, 0);
        let state = RelaxationState::build(&net, &p, RelaxationKind::DeepPoly, None).unwrap();
        let oracle = box_backsub(&net, p.lower(), p.upper());
        for (i, (l, u)) in oracle.iter().enumerate() {
            let (sl, su) = state.layer_bounds(i);
            for j in 0..l.len() {
                assert!(
                    (sl[j] - l[j]).abs() <= 1e-9,
                    "layer {i} neuron {j}: {} vs {}",
                    sl[j],
                    l[j]
                );
                assert!(
                    (su[j] - u[j]).abs() <= 1e-9,
                    "layer {i} neuron {j}: {} vs {}",
                    su[j],
                    u[j]
                );
            }
        }
    }
}

#[test]
fn deeppoly_is_never_tighter_than_triangle() {
    let mut r = rng(33);
    for _ in 0..50 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[4, 4], 3);
        let cuts = r.random_range(0..4);
        let p = random_region(&mut r, n0, 0.2, cuts);
        let target = r.random_range(0..3);
        let tri = verify_region(&net, &p, target, RelaxationKind::Triangle).unwrap();
        let dp = verify_region(&net, &p, target, RelaxationKind::DeepPoly).unwrap();
        assert!(dp.margin <= tri.margin + 1e-6, "{} > {}", dp.margin, tri.margin);
    }
}

#[test]
fn incremental_bounds_equal_scratch_bounds() {
    let mut r = rng(34);
    for _ in 0..30 {
        let n0 = r.random_range(2..=4);
        let net = random_net(&mut r, n0, &[5, 4], 2);
        let parent = random_region(&mut r, n0, 0.25, 1);
        let center = sample_in(&mut r, &parent).unwrap();
        let w: Vec<f64> = (0..n0).map(|_| r.random_range(-1.0..1.0)).collect();
        let c = w.iter().zip(&center).map(|(a, b)| a * b).sum::<f64>() + 0.02;
        let child = parent.intersect(w, c).unwrap();
        let prev = RelaxationState::build(&net, &parent, RelaxationKind::Triangle, None).unwrap();
        let inc = RelaxationState::build(&net, &child, RelaxationKind::Triangle, Some(&prev)).unwrap();
        let scratch = RelaxationState::build(&net, &child, RelaxationKind::Triangle, None).unwrap();
        for (i, phases) in prev.phases().iter().enumerate() {
            for (j, ph) in phases.iter().enumerate() {
                assert_eq!(inc.phase(i, j), scratch.phase(i, j));
                if ph.is_stable() {
                    assert_eq!(inc.phase(i, j), *ph, "stable neuron changed phase");
                } else if scratch.phase(i, j) == Phase::Unstable {
                    let (a, b) = (inc.bounds(i, j), scratch.bounds(i, j));
                    assert!((a.0 - b.0).abs() <= 1e-6 && (a.1 - b.1).abs() <= 1e-6, "{a:?} vs {b:?}");
                    let (pl, pu) = prev.bounds(i, j);
                    assert!(a.0 >= pl - 1e-9 && a.1 <= pu + 1e-9);
                }
            }
        }
        let (mi, ms) = (
            inc.verify(&net, 0).unwrap().margin,
            scratch.verify(&net, 0).unwrap().margin,
        );
        assert!((mi - ms).abs() <= 1e-6, "{mi} vs {ms}");
        assert!(inc.lp_solves() <= scratch.lp_solves());
    }
}

fn regions(seed: u64, n0: usize) -> (Network<f64>, Polyhedron, Polyhedron) {
    let mut r = rng(seed);
    let net = random_net(&mut r, n0, &[4, 3], 3);
    let p = random_region(&mut r, n0, 0.3, 2);
    let x = sample_in(&mut r, &p).unwrap();
    let w: Vec<f64> = (0..n0).map(|_| r.random_range(-1.0..1.0)).collect();
    let c = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    let sub = p.intersect(w, c).unwrap();
    (net, p, sub)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn soundness_sandwich(seed in 0u64..100_000, n0 in 2usize..=4) {
        let (net, p, _) = regions(seed, n0);
        let target = (seed % 3) as usize;
        let mut r = rng(seed ^ 0xABCD);
        for kind in KINDS {
            let state = RelaxationState::build(&net, &p, kind, None).unwrap();
            let margin = state.verify(&net, target).unwrap().margin;
            for _ in 0..100 {
                let x = sample_in(&mut r, &p).unwrap();
                let concrete = net.margin(&x, target).unwrap();
                let pinned = state.margin_at(&net, target, &x).unwrap();
                prop_assert!(concrete >= pinned - 1e-6);
                prop_assert!(pinned >= margin - 1e-6);
                let trace = net.forward(&x).unwrap();
                for (i, pre) in trace.pre.iter().enumerate() {
                    for (j, &a) in pre.iter().enumerate() {
                        let (l, u) = state.bounds(i, j);
                        prop_assert!(a >= l - 1e-7 && a <= u + 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_is_monotone(seed in 0u64..100_000, n0 in 2usize..=4) {
        let (net, p, sub) = regions(seed, n0);
        let target = (seed % 3) as usize;
        let parent = RelaxationState::build(&net, &p, RelaxationKind::Triangle, None).unwrap();
        let m = parent.verify(&net, target).unwrap().margin;
        let child = RelaxationState::build(&net, &sub, RelaxationKind::Triangle, None).unwrap();
        prop_assert!(child.verify(&net, target).unwrap().margin >= m - 1e-6);
        for (i, phases) in parent.phases().iter().enumerate() {
            for (j, ph) in phases.iter().enumerate() {
                if *ph != Phase::Unstable {
                    prop_assert_eq!(child.phase(i, j), *ph);
                }
            }
        }
    }

    #[test]
    fn record_satisfies_relaxation(seed in 0u64..100_000) {
        let (net, p, _) = regions(seed, 3);
        for kind in KINDS {
            let state = RelaxationState::build(&net, &p, kind, None).unwrap();
            let v = state.verify(&net, 0).unwrap();
            prop_assert!(p.contains(&v.record.input));
            if kind == RelaxationKind::Triangle {
                prop_assert!(state.violation(&net, &v.record.input, &v.record.pre, &v.record.post) <= 1e-6);
            }
        }
    }
}
