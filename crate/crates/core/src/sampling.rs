//! Counterexample collection for the cutting loop.
//!
//! A batch is gathered around the segment between a worst-case
//! counterexample `x*` and the point of the region farthest from it. Each
//! center on the segment gets its own Gaussian radius, found by a binary
//! search for the widest spread that still mostly yields counterexamples.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::lp::Sense;
use crate::network::{margin_of, Activation, Network};
use crate::relaxation::{upper_line, Phase, RelaxationKind, RelaxationState, SolveRecord};
use crate::rng::keyed;
use crate::scalar::{dot, Scalar};
use crate::work;

/// Which notion of counterexample a batch holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleMode {
    /// Points the network does not classify as the target.
    Concrete,
    /// Points whose relaxed margin is negative.
    Abstract,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub centers: usize,
    pub samples_per_probe: usize,
    pub threshold: f64,
    pub rho_iters: usize,
    /// Smallest radius tried, as a fraction of the region's diameter.
    pub rho_min_frac: f64,
    pub fallback_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            centers: 6,
            samples_per_probe: 64,
            threshold: 0.5,
            rho_iters: 12,
            rho_min_frac: 1e-4,
            fallback_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleBatch<S> {
    pub points: Vec<Vec<S>>,
    pub mode: SampleMode,
    /// `(center index, radius)` that produced each point.
    pub provenance: Vec<(usize, S)>,
}

impl<S> CounterexampleBatch<S> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const FW_ITERS: usize = 100;
const FW_GAP: f64 = 1e-4;

/// Frank-Wolfe descent on the concrete margin over `region` from `start`,
/// with an LP as the linear minimization oracle.
pub(crate) fn fw_descent<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    target: usize,
    start: Vec<S>,
) -> Result<Vec<S>> {
    let mut x = start;
    let mut value = net.margin(&x, target)?;
    for _ in 0..FW_ITERS {
        let g = net.margin_gradient(&x, target)?;
        let (_, s) = region.optimize(&g, Sense::Minimize)?;
        let dir: Vec<S> = s.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let gap = -dot(&g, &dir);
        if gap <= S::lit(FW_GAP) {
            break;
        }
        let mut best: Option<(S, Vec<S>)> = None;
        let mut gamma = S::one();
        for _ in 0..11 {
            let cand: Vec<S> = x.iter().zip(&dir).map(|(&a, &d)| a + gamma * d).collect();
            let v = net.margin(&cand, target)?;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, cand));
            }
            gamma = gamma / S::lit(2.0);
        }
        match best {
            Some((v, cand)) if v < value - S::lit(1e-12) => {
                value = v;
                x = cand;
            }
            _ => break,
        }
    }
    Ok(x)
}

/// Local minimum of the concrete margin over `region`, if it is negative.
pub fn worst_concrete_counterexample<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    target: usize,
    seed: u64,
) -> Result<Option<Vec<S>>> {
    let mut rng = keyed(seed, 0);
    let dir: Vec<S> = (0..region.dim()).map(|_| S::lit(rng.random_range(-1.0..1.0))).collect();
    let (_, start) = region.optimize(&dir, Sense::Minimize)?;
    let x = fw_descent(net, region, target, start)?;
    if net.is_adversarial(&x, target)? {
        Ok(None)
    } else {
        Ok(Some(x))
    }
}

/// Largest dimension for which every sign pattern is tried.
const EXACT_FAR_DIM: usize = 6;

/// Point of `region` farthest from `x` in L1 distance, with the distance.
///
/// `‖v‖₁ = max_s s·v` over sign vectors `s`, so the maximum over the region
/// is the best of one LP per sign pattern. That is exact for small
/// dimensions; beyond that a sign-fixing local search is used.
pub fn far_point<S: Scalar>(region: &Polyhedron<S>, x: &[S]) -> Result<(Vec<S>, S)> {
    let n = region.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let l1 = |p: &[S]| p.iter().zip(x).map(|(&a, &b)| (a - b).abs()).sum::<S>();
    let mut best: Option<(S, Vec<S>)> = None;
    let mut consider = |p: Vec<S>| {
        let d = l1(&p);
        if best.as_ref().is_none_or(|b| d > b.0) {
            best = Some((d, p));
        }
    };
    if n <= EXACT_FAR_DIM {
        for mask in 0..(1u32 << n) {
            let s: Vec<S> = (0..n)
                .map(|j| if mask >> j & 1 == 1 { -S::one() } else { S::one() })
                .collect();
            consider(region.optimize(&s, Sense::Maximize)?.1);
        }
    } else {
        let (lo, hi) = (region.lower(), region.upper());
        let mut s: Vec<S> = (0..n)
            .map(|j| {
                if hi[j] - x[j] >= x[j] - lo[j] {
                    S::one()
                } else {
                    -S::one()
                }
            })
            .collect();
        for _ in 0..50 {
            let p = region.optimize(&s, Sense::Maximize)?.1;
            let next: Vec<S> = p
                .iter()
                .zip(x)
                .zip(&s)
                .map(|((&a, &b), &old)| {
                    if a > b {
                        S::one()
                    } else if a < b {
                        -S::one()
                    } else {
                        old
                    }
                })
                .collect();
            consider(p);
            if next == s {
                break;
            }
            s = next;
        }
    }
    let (d, p) = best.expect("at least one candidate");
    Ok((p, d))
}

/// Values the approximate evaluator assigns to every neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxEval<S> {
    pub pre: Vec<Vec<S>>,
    pub post: Vec<Vec<S>>,
    pub objective: S,
}

/// Place each unstable ReLU output between its triangle bounds at the same
/// relative position the optimal solution `g*` took, then propagate. The
/// result is a feasible point of the relaxation with the input pinned to
/// `x`, so its objective bounds the exact relaxed margin at `x` from above.
pub fn approx_abstract_values<S: Scalar>(
    net: &Network<S>,
    state: &RelaxationState<S>,
    record: &SolveRecord<S>,
    x: &[S],
) -> Result<ApproxEval<S>> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    work::add_evals(1);
    let mut pre = Vec::with_capacity(net.layers().len());
    let mut post: Vec<Vec<S>> = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let input = if i == 0 { x } else { &post[i - 1] };
        let a = layer.affine(input);
        if layer.activation() == Activation::Identity {
            pre.push(a);
            break;
        }
        let r = a
            .iter()
            .enumerate()
            .map(|(j, &ga)| match state.phase(i, j) {
                Phase::Active => ga,
                Phase::Inactive => S::zero(),
                Phase::Unstable => {
                    let (l, u) = state.bounds(i, j);
                    let (lam, mu) = upper_line(l, u).expect("unstable");
                    interpolate(ga, record.pre[i][j], record.post[i][j], lam, mu)
                }
            })
            .collect();
        pre.push(a);
        post.push(r);
    }
    let objective = match state.kind() {
        RelaxationKind::Triangle => {
            let logits = pre.last().expect("output layer");
            margin_of(logits, record.target).0
        }
        RelaxationKind::DeepPoly => record.forms.iter().map(|(_, f)| f.eval(x)).fold(S::infinity(), S::min),
    };
    Ok(ApproxEval { pre, post, objective })
}

fn interpolate<S: Scalar>(ga: S, star_a: S, star_r: S, lam: S, mu: S) -> S {
    let lb = ga.max(S::zero());
    let ub = lam * ga + mu;
    let lb_star = star_a.max(S::zero());
    let ub_star = lam * star_a + mu;
    let d_lb = (star_r - lb_star).max(S::zero());
    let d_ub = (ub_star - star_r).max(S::zero());
    let total = d_lb + d_ub;
    if total <= S::zero() {
        return lb;
    }
    lb * (d_ub / total) + ub * (d_lb / total)
}

/// Approximate relaxed margin at `x`; negative only if the exact one is.
pub fn approx_abstract_eval<S: Scalar>(
    net: &Network<S>,
    state: &RelaxationState<S>,
    record: &SolveRecord<S>,
    x: &[S],
) -> Result<S> {
    Ok(approx_abstract_values(net, state, record, x)?.objective)
}

struct Checker<'a, S> {
    net: &'a Network<S>,
    state: &'a RelaxationState<S>,
    record: &'a SolveRecord<S>,
    mode: SampleMode,
}

impl<S: Scalar> Checker<'_, S> {
    fn region(&self) -> &Polyhedron<S> {
        self.state.region()
    }

    fn accepts(&self, x: &[S]) -> Result<bool> {
        if !self.region().contains(x) {
            return Ok(false);
        }
        match self.mode {
            SampleMode::Concrete => Ok(!self.net.is_adversarial(x, self.record.target)?),
            SampleMode::Abstract => Ok(approx_abstract_eval(self.net, self.state, self.record, x)? < S::zero()),
        }
    }

    fn accepts_exact(&self, x: &[S]) -> Result<bool> {
        if !self.region().contains(x) {
            return Ok(false);
        }
        match self.mode {
            SampleMode::Concrete => Ok(!self.net.is_adversarial(x, self.record.target)?),
            SampleMode::Abstract => match self.state.margin_at(self.net, self.record.target, x) {
                Ok(v) => Ok(v < S::zero()),
                Err(Error::Infeasible) => Ok(false),
                Err(e) => Err(e),
            },
        }
    }
}

/// Isotropic Gaussian draw clamped to the region's bounding box. Clamping
/// keeps flat coordinates (where every attack agreed) exactly on their value;
/// without it almost no draw would land in a region that is thin in some axis.
fn gaussian_point<S: Scalar, R: Rng>(rng: &mut R, region: &Polyhedron<S>, center: &[S], rho: S) -> Vec<S> {
    center
        .iter()
        .zip(region.lower().iter().zip(region.upper()))
        .map(|(&c, (&l, &u))| {
            let z: f64 = StandardNormal.sample(rng);
            (c + rho * S::lit(z)).max(l).min(u)
        })
        .collect()
}

/// Gather up to `s_minus` counterexamples of `mode` around the segment from
/// `x_star` to `x_plus`. Every returned point lies in the state's region.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_sample<S: Scalar>(
    net: &Network<S>,
    state: &RelaxationState<S>,
    record: &SolveRecord<S>,
    x_star: &[S],
    x_plus: &[S],
    s_minus: usize,
    mode: SampleMode,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<CounterexampleBatch<S>> {
    let checker = Checker {
        net,
        state,
        record,
        mode,
    };
    let region = state.region();
    let k = cfg.centers.max(1);
    let centers: Vec<Vec<S>> = (0..k)
        .map(|i| {
            let t = if k == 1 {
                S::zero()
            } else {
                S::lit(i as f64 / (k - 1) as f64)
            };
            x_star.iter().zip(x_plus).map(|(&a, &b)| a + t * (b - a)).collect()
        })
        .collect();
    let diam = region
        .lower()
        .iter()
        .zip(region.upper())
        .map(|(&l, &u)| (u - l).to_f64_lossy())
        .fold(0.0, f64::max);
    let quota = s_minus.div_ceil(k);
    let mut batch = CounterexampleBatch {
        points: Vec::new(),
        mode,
        provenance: Vec::new(),
    };
    let rho_min = diam * cfg.rho_min_frac;

    for (ci, center) in centers.iter().enumerate() {
        if batch.len() >= s_minus {
            break;
        }
        let mut rng = keyed(seed, ci as u64);
        if diam <= 0.0 {
            if checker.accepts(center)? {
                batch.points.push(center.clone());
                batch.provenance.push((ci, S::zero()));
            }
            continue;
        }
        let rate = |rng: &mut _, rho: f64| -> Result<f64> {
            let mut hits = 0;
            for _ in 0..cfg.samples_per_probe {
                if checker.accepts(&gaussian_point(rng, region, center, S::lit(rho)))? {
                    hits += 1;
                }
            }
            Ok(hits as f64 / cfg.samples_per_probe.max(1) as f64)
        };
        let (mut lo, mut hi) = (rho_min.ln(), diam.ln());
        let mut chosen = rho_min;
        for _ in 0..cfg.rho_iters {
            let mid = 0.5 * (lo + hi);
            if rate(&mut rng, mid.exp())? >= cfg.threshold {
                chosen = mid.exp();
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rho = S::lit(chosen);
        let want = quota.min(s_minus - batch.len());
        let mut found = 0;
        for _ in 0..4 * want.max(1) {
            if found >= want {
                break;
            }
            let p = gaussian_point(&mut rng, region, center, rho);
            if checker.accepts(&p)? {
                batch.points.push(p);
                batch.provenance.push((ci, rho));
                found += 1;
            }
        }
    }

    if batch.is_empty() && cfg.fallback_samples > 0 {
        let mut rng = keyed(seed, k as u64);
        let rho = S::lit(rho_min);
        for i in 0..cfg.fallback_samples {
            let (ci, p) = if i == 0 {
                (0, x_star.to_vec())
            } else {
                let ci = i % k;
                (ci, gaussian_point(&mut rng, region, &centers[ci], rho))
            };
            if checker.accepts_exact(&p)? {
                batch.points.push(p);
                batch.provenance.push((ci, rho));
            }
        }
    }
    Ok(batch)
}

/// The last `capacity` counterexample batches.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySet<S> {
    capacity: usize,
    batches: VecDeque<Vec<Vec<S>>>,
}

impl<S: Scalar> HistorySet<S> {
    pub fn new(capacity: usize) -> Self {
        HistorySet {
            capacity: capacity.max(1),
            batches: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batches(&self) -> impl Iterator<Item = &Vec<Vec<S>>> {
        self.batches.iter()
    }

    pub fn push(&mut self, points: Vec<Vec<S>>) {
        if self.batches.len() == self.capacity {
            self.batches.pop_front();
        }
        self.batches.push_back(points);
    }

    /// Every remembered point still inside `region`.
    pub fn filtered(&self, region: &Polyhedron<S>) -> Vec<Vec<S>> {
        self.batches
            .iter()
            .flatten()
            .filter(|p| region.contains(p))
            .cloned()
            .collect()
    }
}

pub fn update_history<S: Scalar>(mut history: HistorySet<S>, batch: &CounterexampleBatch<S>) -> HistorySet<S> {
    history.push(batch.points.clone());
    history
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use crate::relaxation::verify_region;

    fn line_net() -> Network<f64> {
        let l = Layer::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 1.0], Activation::Identity).unwrap();
        Network::new(vec![l]).unwrap()
    }

    #[test]
    fn worst_concrete_on_line() {
        let net = line_net();
        let p = Polyhedron::from_box(vec![0.3], vec![0.7]).unwrap();
        let x = worst_concrete_counterexample(&net, &p, 0, 3).unwrap().unwrap();
        assert!((x[0] - 0.3).abs() < 1e-12);
        let q = Polyhedron::from_box(vec![0.6], vec![0.7]).unwrap();
        assert!(worst_concrete_counterexample(&net, &q, 0, 3).unwrap().is_none());
    }

    #[test]
    fn far_point_cases() {
        let p = Polyhedron::from_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let (x, d) = far_point(&p, &[1.0, -1.0]).unwrap();
        assert_eq!(x, vec![-1.0, 1.0]);
        assert_eq!(d, 4.0);
        let pt = Polyhedron::from_box(vec![0.2, 0.4], vec![0.2, 0.4]).unwrap();
        let (x, d) = far_point(&pt, &[0.2, 0.4]).unwrap();
        assert_eq!(x, vec![0.2, 0.4]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn far_point_local_search_high_dim() {
        let n = 9;
        let p = Polyhedron::from_box(vec![0.0; n], vec![1.0; n]).unwrap();
        let x = vec![0.25; n];
        let (far, d) = far_point(&p, &x).unwrap();
        assert!((d - 0.75 * n as f64).abs() < 1e-12);
        assert!(far.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interpolation_cases() {
        assert_eq!(interpolate(0.0, 0.0, 1.0, 0.5, 1.0), 1.0);
        assert_eq!(interpolate(1.0, 2.0, 2.0, 0.5, 1.0), 1.0);
        assert_eq!(interpolate(0.0, -1.0, 0.5, 0.5, 1.0), 1.0);
        // strictly inside: halfway between the bounds at the witness
        let v: f64 = interpolate(0.0, 0.0, 0.5, 0.5, 1.0);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn concrete_batch_on_line() {
        let net = line_net();
        let p = Polyhedron::from_box(vec![0.3], vec![0.7]).unwrap();
        let st = RelaxationState::build(&net, &p, RelaxationKind::Triangle, None).unwrap();
        let v = st.verify(&net, 0).unwrap();
        let x_star = [0.3];
        let (x_plus, _) = far_point(&p, &x_star).unwrap();
        let cfg = SamplerConfig::default();
        let b = gaussian_sample(
            &net,
            &st,
            &v.record,
            &x_star,
            &x_plus,
            64,
            SampleMode::Concrete,
            &cfg,
            11,
        )
        .unwrap();
        assert!(!b.is_empty());
        assert!(b.len() <= 64);
        for x in &b.points {
            assert!(x[0] < 0.5 && p.contains(x));
        }
        let again = gaussian_sample(
            &net,
            &st,
            &v.record,
            &x_star,
            &x_plus,
            64,
            SampleMode::Concrete,
            &cfg,
            11,
        )
        .unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn abstract_batch_is_sound() {
        let l1 = Layer::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], Activation::Relu).unwrap();
        let l2 = Layer::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], Activation::Relu).unwrap();
        let l3 = Layer::new(
            vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![l1, l2, l3]).unwrap();
        let p = Polyhedron::from_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let st = RelaxationState::build(&net, &p, RelaxationKind::Triangle, None).unwrap();
        let v = verify_region(&net, &p, 1, RelaxationKind::Triangle).unwrap();
        let x_star = v.record.input.clone();
        let (x_plus, _) = far_point(&p, &x_star).unwrap();
        let b = gaussian_sample(
            &net,
            &st,
            &v.record,
            &x_star,
            &x_plus,
            48,
            SampleMode::Abstract,
            &SamplerConfig::default(),
            5,
        )
        .unwrap();
        assert!(!b.is_empty());
        for x in &b.points {
            assert!(st.margin_at(&net, 1, x).unwrap() < 0.0);
        }
    }

    #[test]
    fn history_ring() {
        let p = Polyhedron::from_box(vec![0.0], vec![1.0]).unwrap();
        let mut h = HistorySet::new(5);
        assert!(h.is_empty());
        let batch = CounterexampleBatch {
            points: vec![vec![0.5]],
            mode: SampleMode::Concrete,
            provenance: vec![(0, 0.1)],
        };
        h = update_history(h, &batch);
        assert_eq!(h.len(), 1);
        for i in 0..5 {
            h.push(vec![vec![i as f64], vec![2.0]]);
        }
        assert_eq!(h.len(), 5);
        assert!(h.batches().all(|b| b[0] != vec![0.5]));
        let kept = h.filtered(&p);
        assert!(kept.iter().all(|x| p.contains(x)));
        assert_eq!(kept.len(), 2);
    }
}
