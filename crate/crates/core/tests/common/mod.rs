#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use symadex::network::{Activation, Layer, Network};
use symadex::{LabeledQuery, Polyhedron};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The 2-2-2-2 network with hand-picked weights used throughout the tests.
pub fn reference_net() -> Network<f64> {
    let l1 = Layer::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], Activation::Relu).unwrap();
    let l2 = Layer::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], Activation::Relu).unwrap();
    let l3 = Layer::new(
        vec![vec![1.0, 1.0], vec![0.0, 1.0]],
        vec![1.0, 0.0],
        Activation::Identity,
    )
    .unwrap();
    Network::new(vec![l1, l2, l3]).unwrap()
}

pub fn square() -> Polyhedron {
    Polyhedron::from_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
}

/// `f(x) = (x, 1 - x)` on one input.
pub fn line_net() -> Network<f64> {
    let l = Layer::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 1.0], Activation::Identity).unwrap();
    Network::new(vec![l]).unwrap()
}

/// Two inputs, three hidden ReLUs. Class 1 wins exactly where every hidden
/// unit is (nearly) off: the triangle `x1 ≥ 0.55, x2 ≥ 0.55,
/// x1 + x2 ≤ 1.5`, widened by a band of width at most 5e-4.
pub fn pocket_net() -> Network<f64> {
    let hidden = Layer::new(
        vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]],
        vec![0.55, 0.55, -1.5],
        Activation::Relu,
    )
    .unwrap();
    let out = Layer::new(
        vec![vec![100.0, 100.0, 100.0], vec![0.0, 0.0, 0.0]],
        vec![0.05, 0.1],
        Activation::Identity,
    )
    .unwrap();
    Network::new(vec![hidden, out]).unwrap()
}

/// Membership in the polyhedral core of the pocket.
pub fn in_pocket_core(x: &[f64]) -> bool {
    x[0] >= 0.55 && x[1] >= 0.55 && x[0] + x[1] <= 1.5
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Dense network with standard normal weights and biases.
pub fn random_net<R: Rng>(rng: &mut R, n0: usize, hidden: &[usize], n_out: usize) -> Network<f64> {
    let mut dims = vec![n0];
    dims.extend_from_slice(hidden);
    dims.push(n_out);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let weights = (0..w[1]).map(|_| (0..w[0]).map(|_| normal(rng)).collect()).collect();
            let bias = (0..w[1]).map(|_| 0.5 * normal(rng)).collect();
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer::new(weights, bias, act).unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

/// Random small hidden architecture with at most `max_relu` ReLUs.
pub fn random_small_arch<R: Rng>(rng: &mut R, max_relu: usize) -> Vec<usize> {
    match rng.random_range(0..3) {
        0 => vec![rng.random_range(1..=max_relu)],
        1 => {
            let a = rng.random_range(1..=max_relu / 2);
            vec![a, rng.random_range(1..=max_relu - a)]
        }
        _ => vec![2, 2, 2].into_iter().take(max_relu / 2).collect(),
    }
}

/// Random box with `cuts` extra random half-spaces through its interior.
pub fn random_region<R: Rng>(rng: &mut R, n0: usize, width: f64, cuts: usize) -> Polyhedron {
    let center: Vec<f64> = (0..n0).map(|_| rng.random_range(width..1.0 - width)).collect();
    let half: Vec<f64> = (0..n0).map(|_| width * rng.random_range(0.2..1.0)).collect();
    let lo: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c - h).collect();
    let hi: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c + h).collect();
    let mut p = Polyhedron::from_box(lo, hi).unwrap();
    for _ in 0..cuts {
        let w: Vec<f64> = (0..n0).map(|_| normal(rng)).collect();
        let off: f64 = w.iter().zip(&center).map(|(a, b)| a * b).sum::<f64>()
            + rng.random_range(0.0..0.5) * w.iter().zip(&half).map(|(a, h)| a.abs() * h).sum::<f64>();
        p = p.intersect(w, off).unwrap();
    }
    p
}

/// Uniform point in the bounding box that also lies in the region.
pub fn sample_in<R: Rng>(rng: &mut R, p: &Polyhedron) -> Option<Vec<f64>> {
    for _ in 0..10_000 {
        let x: Vec<f64> = p
            .lower()
            .iter()
            .zip(p.upper())
            .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
            .collect();
        if p.contains(&x) {
            return Some(x);
        }
    }
    None
}

/// Straightforward layer-by-layer evaluation, written independently of the
/// library's forward pass.
pub fn naive_forward(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    for layer in net.layers() {
        let mut next = Vec::new();
        for j in 0..layer.out_dim() {
            let mut s = layer.bias()[j];
            for (k, &vk) in v.iter().enumerate() {
                s += layer.weight(j, k) * vk;
            }
            if layer.activation() == Activation::Relu && s < 0.0 {
                s = 0.0;
            }
            next.push(s);
        }
        v = next;
    }
    v
}

#[derive(Clone)]
struct Aff {
    c: Vec<f64>,
    k: f64,
}

/// Exact minimum over a 2-D region of `f_target − f_y` for every rival `y`,
/// by enumerating activation patterns: on each pattern's cell the network is
/// affine, so its minimum over the cell is attained at a vertex, and the
/// vertices of each cell are intersections of pairs of constraint lines.
pub fn exact_min_margin_2d(net: &Network<f64>, p: &Polyhedron, target: usize) -> f64 {
    assert_eq!(net.input_dim(), 2);
    let relu: usize = net.relu_count();
    let mut best = f64::INFINITY;
    let mut base: Vec<(Vec<f64>, f64)> = p.rows().iter().cloned().zip(p.rhs().iter().copied()).collect();
    for j in 0..2 {
        let mut e = vec![0.0; 2];
        e[j] = 1.0;
        base.push((e.clone(), p.upper()[j]));
        e[j] = -1.0;
        base.push((e, -p.lower()[j]));
    }
    for mask in 0u64..(1u64 << relu) {
        let mut cons = base.clone();
        let mut post: Vec<Aff> = (0..2)
            .map(|j| {
                let mut c = vec![0.0; 2];
                c[j] = 1.0;
                Aff { c, k: 0.0 }
            })
            .collect();
        let mut bit = 0;
        let mut out = Vec::new();
        for layer in net.layers() {
            let pre: Vec<Aff> = (0..layer.out_dim())
                .map(|j| {
                    let mut a = Aff {
                        c: vec![0.0; 2],
                        k: layer.bias()[j],
                    };
                    for (k, q) in post.iter().enumerate() {
                        let w = layer.weight(j, k);
                        a.k += w * q.k;
                        a.c[0] += w * q.c[0];
                        a.c[1] += w * q.c[1];
                    }
                    a
                })
                .collect();
            if layer.activation() == Activation::Identity {
                out = pre;
                break;
            }
            post = pre
                .into_iter()
                .map(|a| {
                    let on = mask >> bit & 1 == 1;
                    bit += 1;
                    if on {
                        cons.push((vec![-a.c[0], -a.c[1]], a.k));
                        a
                    } else {
                        cons.push((a.c.clone(), -a.k));
                        Aff {
                            c: vec![0.0; 2],
                            k: 0.0,
                        }
                    }
                })
                .collect();
        }
        let feasible = |x: &[f64; 2]| {
            cons.iter().all(|(w, c)| {
                let scale = 1.0 + w[0].abs() + w[1].abs() + c.abs();
                w[0] * x[0] + w[1] * x[1] <= c + 1e-9 * scale
            })
        };
        for a in 0..cons.len() {
            for b in a + 1..cons.len() {
                let (w1, c1) = &cons[a];
                let (w2, c2) = &cons[b];
                let det = w1[0] * w2[1] - w1[1] * w2[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = [(c1 * w2[1] - c2 * w1[1]) / det, (w1[0] * c2 - w2[0] * c1) / det];
                if !feasible(&x) {
                    continue;
                }
                for (y, o) in out.iter().enumerate() {
                    if y == target {
                        continue;
                    }
                    let t = &out[target];
                    let m = (t.k - o.k) + (t.c[0] - o.c[0]) * x[0] + (t.c[1] - o.c[1]) * x[1];
                    best = best.min(m);
                }
            }
        }
    }
    best
}

/// Count grid points of the region's bounding box that lie in the region
/// and are not classified as `target`.
pub fn grid_violations(net: &Network<f64>, p: &Polyhedron, target: usize, n: usize) -> usize {
    let (lo, hi) = (p.lower(), p.upper());
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            let t = |k: usize| if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
            let x = [lo[0] + (hi[0] - lo[0]) * t(i), lo[1] + (hi[1] - lo[1]) * t(j)];
            if p.contains(&x) && !net.is_adversarial(&x, target).unwrap() {
                bad += 1;
            }
        }
    }
    bad
}

/// Classic back-substitution over a box, coded directly on the weights:
/// each neuron's bounds are found by substituting linear relaxations of the
/// earlier ReLUs down to the inputs and concretizing in closed form.
pub fn box_backsub(net: &Network<f64>, lo: &[f64], hi: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    // per ReLU layer: (lower slope, upper slope, upper intercept)
    let mut relax: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut l_i = Vec::new();
        let mut u_i = Vec::new();
        for j in 0..layer.out_dim() {
            let bound = |upper: bool| {
                let sgn = if upper { -1.0 } else { 1.0 };
                // minimize sgn · pre_{i,j}
                let mut coef: Vec<f64> = layer.row(j).iter().map(|w| sgn * w).collect();
                let mut cst = sgn * layer.bias()[j];
                for k in (0..i).rev() {
                    let prev = &net.layers()[k];
                    let mut next = vec![0.0; prev.in_dim()];
                    for (m, &c) in coef.iter().enumerate() {
                        let (alpha, lam, mu) = relax[k][m];
                        let (slope, icpt) = if c >= 0.0 { (alpha, 0.0) } else { (lam, mu) };
                        cst += c * icpt;
                        let cc = c * slope;
                        cst += cc * prev.bias()[m];
                        for (q, n) in next.iter_mut().enumerate() {
                            *n += cc * prev.weight(m, q);
                        }
                    }
                    coef = next;
                }
                let v = cst
                    + coef
                        .iter()
                        .enumerate()
                        .map(|(q, &c)| if c >= 0.0 { c * lo[q] } else { c * hi[q] })
                        .sum::<f64>();
                sgn * v
            };
            l_i.push(bound(false));
            u_i.push(bound(true));
        }
        if layer.activation() == Activation::Relu {
            relax.push(
                l_i.iter()
                    .zip(&u_i)
                    .map(|(&l, &u)| {
                        if l >= 0.0 {
                            (1.0, 1.0, 0.0)
                        } else if u <= 0.0 {
                            (0.0, 0.0, 0.0)
                        } else {
                            let lam = u / (u - l);
                            let alpha = if u <= -l { 0.0 } else { 1.0 };
                            (alpha, lam, -l * lam)
                        }
                    })
                    .collect(),
            );
        }
        out.push((l_i, u_i));
    }
    out
}

/// Ten-input network and query whose initial region holds few
/// counterexamples, so blind uniform sampling rarely finds one.
pub fn ablation_fixture() -> (Network<f64>, LabeledQuery, u64) {
    let seed = 5;
    let mut r = rng(1000 + seed);
    let net = random_net(&mut r, 10, &[12, 12], 3);
    let x: Vec<f64> = (0..10).map(|_| r.random_range(0.2..0.8)).collect();
    let y_c = net.classify(&x).unwrap();
    let y_t = (y_c + 1) % 3;
    (net, LabeledQuery::new(x, y_c, y_t, 0.3).unwrap(), seed)
}
