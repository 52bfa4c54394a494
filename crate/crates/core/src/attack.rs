//! Concrete adversarial attacks inside the clipped ε-ball and the initial
//! candidate region they span.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::network::{LabeledQuery, Network};
use crate::rng::keyed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackMethod {
    Pgd,
    FrankWolfe,
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub seed: u64,
    pub steps: usize,
    /// Step length in input units; `None` means ε/10.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub method: AttackMethod,
}

impl AttackConfig {
    pub fn new(method: AttackMethod, seed: u64) -> Self {
        AttackConfig {
            seed,
            steps: 40,
            step_size: None,
            restarts: 1,
            method,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("attack needs at least one step".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("step size must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

fn uniform_in<S: Scalar, R: Rng>(rng: &mut R, lo: &[S], hi: &[S]) -> Vec<S> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| l + (h - l) * S::lit(rng.random::<f64>()))
        .collect()
}

fn clip<S: Scalar>(x: &mut [S], lo: &[S], hi: &[S]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(l).min(h);
    }
}

/// Sign with `sign(0) = 0`; `Float::signum` maps zero to one.
fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn pgd<S: Scalar>(
    net: &Network<S>,
    q: &LabeledQuery<S>,
    start: Vec<S>,
    steps: usize,
    alpha: S,
) -> Result<Option<Vec<S>>> {
    let (lo, hi) = q.ball();
    let mut x = start;
    let mut last_hit = None;
    for _ in 0..steps {
        let g = net.margin_gradient(&x, q.y_t)?;
        for (v, gi) in x.iter_mut().zip(&g) {
            *v = *v + alpha * sign(*gi);
        }
        clip(&mut x, &lo, &hi);
        if net.is_adversarial(&x, q.y_t)? {
            last_hit = Some(x.clone());
        }
    }
    Ok(last_hit)
}

fn frank_wolfe<S: Scalar>(
    net: &Network<S>,
    q: &LabeledQuery<S>,
    start: Vec<S>,
    steps: usize,
) -> Result<Option<Vec<S>>> {
    let (lo, hi) = q.ball();
    let mut x = start;
    let mut value = net.margin(&x, q.y_t)?;
    let mut last_hit = None;
    for _ in 0..steps {
        let g = net.margin_gradient(&x, q.y_t)?;
        let corner: Vec<S> = g
            .iter()
            .enumerate()
            .map(|(j, &gj)| {
                if gj > S::zero() {
                    hi[j]
                } else if gj < S::zero() {
                    lo[j]
                } else {
                    x[j]
                }
            })
            .collect();
        let mut gamma = S::one();
        let mut moved = false;
        for _ in 0..20 {
            let cand: Vec<S> = x.iter().zip(&corner).map(|(&a, &s)| a + gamma * (s - a)).collect();
            let v = net.margin(&cand, q.y_t)?;
            if v > value {
                x = cand;
                value = v;
                moved = true;
                break;
            }
            gamma = gamma / S::lit(2.0);
        }
        if net.is_adversarial(&x, q.y_t)? {
            last_hit = Some(x.clone());
        }
        if !moved {
            break;
        }
    }
    Ok(last_hit)
}

/// One attack run. The returned point, if any, lies in the clipped ε-ball and
/// is classified as the target label.
pub fn attack<S: Scalar>(net: &Network<S>, q: &LabeledQuery<S>, cfg: &AttackConfig) -> Result<Option<Vec<S>>> {
    q.validate(net)?;
    cfg.validate()?;
    let (lo, hi) = q.ball();
    let alpha = S::lit(cfg.step_size.unwrap_or(q.epsilon.to_f64_lossy() / 10.0));
    for r in 0..cfg.restarts.max(1) {
        let mut rng = keyed(cfg.seed, r as u64);
        let start = uniform_in(&mut rng, &lo, &hi);
        let found = match cfg.method {
            AttackMethod::Pgd => pgd(net, q, start, cfg.steps, alpha)?,
            AttackMethod::FrankWolfe => frank_wolfe(net, q, start, cfg.steps)?,
        };
        if let Some(p) = found {
            let inside = p.iter().zip(lo.iter().zip(&hi)).all(|(&v, (&l, &h))| v >= l && v <= h);
            if inside && net.is_adversarial(&p, q.y_t)? {
                return Ok(Some(p));
            }
        }
    }
    Ok(None)
}

/// Run `s_plus` attacks, the first half PGD and the rest Frank-Wolfe, each
/// with its own seed. Duplicates at 1e-9 resolution are dropped.
pub fn collect_attacks<S: Scalar>(
    net: &Network<S>,
    q: &LabeledQuery<S>,
    s_plus: usize,
    base_seed: u64,
) -> Result<Vec<Vec<S>>> {
    collect_attacks_with(net, q, s_plus, &AttackConfig::new(AttackMethod::Pgd, base_seed))
}

/// [`collect_attacks`] with the step count, step size and restarts taken
/// from `template`; its method is ignored and its seed is the base seed.
pub fn collect_attacks_with<S: Scalar>(
    net: &Network<S>,
    q: &LabeledQuery<S>,
    s_plus: usize,
    template: &AttackConfig,
) -> Result<Vec<Vec<S>>> {
    if s_plus == 0 {
        return Err(Error::InvalidParameter("s_plus must be at least 1".into()));
    }
    q.validate(net)?;
    template.validate()?;
    let half = s_plus.div_ceil(2);
    let found: Vec<Option<Vec<S>>> = (0..s_plus)
        .into_par_iter()
        .map(|i| {
            let cfg = AttackConfig {
                seed: template.seed.wrapping_add(i as u64),
                method: if i < half {
                    AttackMethod::Pgd
                } else {
                    AttackMethod::FrankWolfe
                },
                ..template.clone()
            };
            attack(net, q, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in found.into_iter().flatten() {
        let key: Vec<i64> = p.iter().map(|v| (v.to_f64_lossy() * 1e9).round() as i64).collect();
        if seen.insert(key) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Axis-aligned bounding box of a point set.
pub fn bounding_box<S: Scalar>(points: &[Vec<S>]) -> Result<Polyhedron<S>> {
    let first = points.first().ok_or(Error::NoAdversarialExamples)?;
    let mut lo = first.clone();
    let mut hi = first.clone();
    for p in &points[1..] {
        if p.len() != lo.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: p.len(),
            });
        }
        for j in 0..p.len() {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    Polyhedron::from_box(lo, hi)
}

/// Bounding box of the attacks, intersected with the clipped ε-ball.
pub fn initial_region<S: Scalar>(points: &[Vec<S>], q: &LabeledQuery<S>) -> Result<Polyhedron<S>> {
    let b = bounding_box(points)?;
    let (blo, bhi) = q.ball();
    let lo: Vec<S> = b.lower().iter().zip(&blo).map(|(&a, &c)| a.max(c)).collect();
    let hi: Vec<S> = b
        .upper()
        .iter()
        .zip(&bhi)
        .zip(&lo)
        .map(|((&a, &c), &l)| a.min(c).max(l))
        .collect();
    Polyhedron::from_box(lo, hi)
}
