mod common;

use common::*;
use symadex::region::{region_from_json, region_to_json, QueryMeta, RegionMeta};
use symadex::relaxation::verify_region;
use symadex::synthesis::{synthesize, SynthesisConfig};
use symadex::{LabeledQuery, Polyhedron, RelaxationKind};

fn pocket_query() -> LabeledQuery {
    LabeledQuery::new(vec![0.4, 0.4], 0, 1, 0.4).unwrap()
}

/// Grid check of `inner ⊆ outer` over the bounding box of `inner`.
fn grid_subset(inner: &Polyhedron, outer: &Polyhedron, n: usize) -> bool {
    let (lo, hi) = (inner.lower(), inner.upper());
    (0..=n).all(|i| {
        (0..=n).all(|j| {
            let x = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
            ];
            !inner.contains(&x) || outer.contains(&x)
        })
    })
}

#[test]
fn pocket_region_is_verified_and_nested() {
    let net = pocket_net();
    for kind in [RelaxationKind::Triangle, RelaxationKind::DeepPoly] {
        let cfg = SynthesisConfig {
            relaxation: kind,
            ..Default::default()
        };
        let rep = synthesize(&net, &pocket_query(), &cfg).unwrap();
        assert!(rep.verified, "{kind:?} margin {}", rep.margin);
        assert!(grid_subset(&rep.region, &rep.initial_region, 200));
        assert!(exact_min_margin_2d(&net, &rep.region, 1) > 0.0);
        assert_eq!(grid_violations(&net, &rep.region, 1, 300), 0);
        let steps: Vec<f64> = rep.trace.iter().filter(|l| l.progress).map(|l| l.margin).collect();
        assert!(steps.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{steps:?}");
        assert_eq!(rep.trace.iter().filter(|l| l.t > 0 && l.progress).count(), rep.cuts);
    }
}

#[test]
fn saved_region_reverifies_from_scratch() {
    let net = pocket_net();
    let q = pocket_query();
    let rep = synthesize(&net, &q, &SynthesisConfig::default()).unwrap();
    let meta = RegionMeta {
        query: Some(QueryMeta {
            x_o: q.x_o.clone(),
            y_c: q.y_c,
            y_t: q.y_t,
            epsilon: q.epsilon,
        }),
        method: "triangle".into(),
        verified: rep.verified,
        margin: rep.margin,
        log10_under: rep.under.as_ref().map(|b| b.log10_count),
        log10_over: rep.over.as_ref().map(|b| b.log10_count),
    };
    let text = region_to_json(&rep.region, &meta).unwrap();
    let (p, m): (Polyhedron, _) = region_from_json(&text).unwrap();
    assert_eq!(p, rep.region);
    assert_eq!(m, meta);
    let v = verify_region(&net, &p, q.y_t, RelaxationKind::Triangle).unwrap();
    assert!(v.verified);
    assert!((v.margin - rep.margin).abs() < 1e-9);
}

#[test]
fn synthesis_is_deterministic() {
    let net = pocket_net();
    let cfg = SynthesisConfig {
        seed: 17,
        ..Default::default()
    };
    let a = synthesize(&net, &pocket_query(), &cfg).unwrap();
    let b = synthesize(&net, &pocket_query(), &cfg).unwrap();
    assert_eq!(a.region, b.region);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.attacks, b.attacks);
}

#[test]
fn zero_iterations_falls_back_to_shrinking() {
    let net = pocket_net();
    let cfg = SynthesisConfig {
        t_max: 0,
        ..Default::default()
    };
    let rep = synthesize(&net, &pocket_query(), &cfg).unwrap();
    assert_eq!(rep.cuts, 0);
    assert_eq!(rep.trace.len(), 1);
    if rep.verified && rep.shrunk {
        let theta = rep.theta.unwrap();
        assert!(theta > 0.0 && theta <= 1.0);
        assert_eq!(grid_violations(&net, &rep.region, 1, 300), 0);
    }
}

#[test]
fn no_attacks_is_an_error() {
    // Class 1 is unreachable from the origin with a tiny radius.
    let net = pocket_net();
    let q = LabeledQuery::new(vec![0.0, 0.0], 0, 1, 0.01).unwrap();
    let cfg = SynthesisConfig {
        s_plus: 20,
        ..Default::default()
    };
    assert!(matches!(
        synthesize(&net, &q, &cfg),
        Err(symadex::Error::NoAdversarialExamples)
    ));
}
