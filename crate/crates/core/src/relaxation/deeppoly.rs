//! DeepPoly: one lower and one upper linear bound per neuron, obtained by
//! back-substituting through every earlier layer down to the inputs.

use crate::error::Result;
use crate::geometry::Polyhedron;
use crate::lp::Sense;
use crate::network::{Activation, Network};
use crate::scalar::{dot, Scalar};

use super::{upper_line, Phase, RelaxationKind, RelaxationState, SolveRecord};

/// `constant + coeffs · x` over the network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub coeffs: Vec<S>,
    pub constant: S,
}

impl<S: Scalar> Linear<S> {
    pub fn eval(&self, x: &[S]) -> S {
        self.constant + dot(&self.coeffs, x)
    }

    /// Minimum over the region's bounding box, with its minimizer.
    fn box_min(&self, lo: &[S], hi: &[S]) -> (S, Vec<S>) {
        let x: Vec<S> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| if c < S::zero() { hi[k] } else { lo[k] })
            .collect();
        (self.eval(&x), x)
    }

    fn negated(&self) -> Self {
        Linear {
            coeffs: self.coeffs.iter().map(|&c| -c).collect(),
            constant: -self.constant,
        }
    }

    /// Minimum over the region: closed form for boxes, LP otherwise.
    fn minimize(&self, region: &Polyhedron<S>) -> Result<(S, Vec<S>)> {
        let (v, x) = self.box_min(region.lower(), region.upper());
        if region.num_rows() == 0 {
            return Ok((v, x));
        }
        let (v, x) = region.optimize(&self.coeffs, Sense::Minimize)?;
        Ok((v + self.constant, x))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Forms<S> {
    pub lower: Vec<Vec<Linear<S>>>,
    pub upper: Vec<Vec<Linear<S>>>,
}

/// Back-substitute `weights · z^a_layer + constant` to the inputs, choosing
/// each ReLU bound so the result is a lower (or upper) bound.
fn backsub<S: Scalar>(
    net: &Network<S>,
    lower: &[Vec<S>],
    upper: &[Vec<S>],
    phases: &[Vec<Phase>],
    layer: usize,
    weights: Vec<S>,
    want_lower: bool,
) -> Linear<S> {
    let layers = net.layers();
    let mut c = weights;
    let mut constant = S::zero();
    let mut k = layer;
    loop {
        let l = &layers[k];
        constant = constant + dot(&c, l.bias());
        let mut below = vec![S::zero(); l.in_dim()];
        for (j, &w) in c.iter().enumerate() {
            if w == S::zero() {
                continue;
            }
            for (b, &a) in below.iter_mut().zip(l.row(j)) {
                *b = *b + w * a;
            }
        }
        if k == 0 {
            return Linear {
                coeffs: below,
                constant,
            };
        }
        k -= 1;
        c = below;
        for (m, w) in c.iter_mut().enumerate() {
            match phases[k][m] {
                Phase::Active => {}
                Phase::Inactive => *w = S::zero(),
                Phase::Unstable => {
                    let (lo, hi) = (lower[k][m], upper[k][m]);
                    let use_upper = (*w < S::zero()) == want_lower;
                    if use_upper {
                        let (lam, mu) = upper_line(lo, hi).expect("unstable bounds straddle zero");
                        constant = constant + *w * mu;
                        *w = *w * lam;
                    } else if hi <= -lo {
                        *w = S::zero();
                    }
                }
            }
        }
    }
}

fn unit<S: Scalar>(n: usize, j: usize) -> Vec<S> {
    let mut v = vec![S::zero(); n];
    v[j] = S::one();
    v
}

pub(super) fn build<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    prev: Option<&RelaxationState<S>>,
) -> Result<RelaxationState<S>> {
    let mut lower: Vec<Vec<S>> = Vec::new();
    let mut upper: Vec<Vec<S>> = Vec::new();
    let mut phases: Vec<Vec<Phase>> = Vec::new();
    let mut forms = Forms {
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let mut lp_solves = 0;
    let (blo, bhi) = (region.lower(), region.upper());

    for (i, layer) in net.layers().iter().enumerate() {
        let n = layer.out_dim();
        let relu = layer.activation() == Activation::Relu;
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        let mut ph = Vec::with_capacity(n);
        let mut flo = Vec::with_capacity(n);
        let mut fhi = Vec::with_capacity(n);
        for j in 0..n {
            let lf = backsub(net, &lower, &upper, &phases, i, unit(n, j), true);
            let uf = backsub(net, &lower, &upper, &phases, i, unit(n, j), false);
            let mut l = lf.box_min(blo, bhi).0;
            let mut u = -uf.negated().box_min(blo, bhi).0;
            if let Some(p) = prev {
                l = l.max(p.lower[i][j]);
                u = u.min(p.upper[i][j]);
            }
            let inherited = prev.filter(|_| relu).map(|p| p.phases[i][j]).filter(|p| p.is_stable());
            let phase = match inherited {
                Some(p) => p,
                None if !relu => Phase::Active,
                None => {
                    if !Phase::from_bounds(l, u).is_stable() && region.num_rows() > 0 {
                        l = l.max(lf.minimize(region)?.0);
                        u = u.min(-uf.negated().minimize(region)?.0);
                        lp_solves += 2;
                        if l > u {
                            let mid = (l + u) / S::lit(2.0);
                            l = mid;
                            u = mid;
                        }
                    }
                    Phase::from_bounds(l, u)
                }
            };
            lo.push(l);
            hi.push(u);
            ph.push(phase);
            flo.push(lf);
            fhi.push(uf);
        }
        lower.push(lo);
        upper.push(hi);
        if relu {
            phases.push(ph);
        }
        forms.lower.push(flo);
        forms.upper.push(fhi);
    }

    Ok(RelaxationState {
        kind: RelaxationKind::DeepPoly,
        region: region.clone(),
        lower,
        upper,
        phases,
        lp_solves,
        triangle: None,
        deeppoly: Some(forms),
    })
}

/// Lower bound of `z_target - z_rival` as a linear form, for every rival.
pub(super) fn margin_forms<S: Scalar>(
    state: &RelaxationState<S>,
    net: &Network<S>,
    target: usize,
) -> Vec<(usize, Linear<S>)> {
    let last = net.layers().len() - 1;
    let n = net.output_dim();
    (0..n)
        .filter(|&y| y != target)
        .map(|y| {
            let mut w = unit(n, target);
            w[y] = -S::one();
            (
                y,
                backsub(net, &state.lower, &state.upper, &state.phases, last, w, true),
            )
        })
        .collect()
}

pub(super) fn min_margin<S: Scalar>(
    state: &RelaxationState<S>,
    net: &Network<S>,
    target: usize,
) -> Result<SolveRecord<S>> {
    let forms = margin_forms(state, net, target);
    let mut best: Option<(S, usize, Vec<S>)> = None;
    for (y, f) in &forms {
        let (v, x) = f.minimize(&state.region)?;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, *y, x));
        }
    }
    let (objective, rival, input) = best.expect("at least two classes");
    let trace = net.forward(&input)?;
    let mut post = trace.post;
    post.pop();
    Ok(SolveRecord {
        kind: RelaxationKind::DeepPoly,
        target,
        rival,
        objective,
        pre: trace.pre,
        post,
        input,
        forms,
    })
}
