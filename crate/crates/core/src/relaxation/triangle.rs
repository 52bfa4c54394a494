//! Triangle relaxation as a single LP.
//!
//! Stable neurons are substituted away: an active ReLU output equals its
//! affine input and an inactive one is zero, so only the inputs and the
//! outputs of unstable neurons become LP variables. Every pre- and
//! post-activation is kept as an affine expression over those variables.

use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::lp::{LinearProgram, LpStatus, Relation, Sense};
use crate::network::{Activation, Network};
use crate::scalar::Scalar;

use super::{upper_line, Phase, RelaxationKind, RelaxationState, SolveRecord};

/// `constant + Σ coeffs[k] · var[k]`; missing trailing coefficients are zero.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Affine<S> {
    pub coeffs: Vec<S>,
    pub constant: S,
}

impl<S: Scalar> Affine<S> {
    fn var(k: usize, n: usize) -> Self {
        let mut coeffs = vec![S::zero(); n];
        coeffs[k] = S::one();
        Affine {
            coeffs,
            constant: S::zero(),
        }
    }

    fn constant(c: S) -> Self {
        Affine {
            coeffs: Vec::new(),
            constant: c,
        }
    }

    pub fn eval(&self, vals: &[S]) -> S {
        self.coeffs
            .iter()
            .zip(vals)
            .fold(self.constant, |acc, (&c, &v)| acc + c * v)
    }

    fn padded(&self, n: usize) -> Vec<S> {
        let mut v = self.coeffs.clone();
        v.resize(n, S::zero());
        v
    }

    /// Interval of the expression given per-variable bounds.
    fn interval(&self, lo: &[S], hi: &[S]) -> (S, S) {
        let mut a = self.constant;
        let mut b = self.constant;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c > S::zero() {
                a = a + c * lo[k];
                b = b + c * hi[k];
            } else if c < S::zero() {
                a = a + c * hi[k];
                b = b + c * lo[k];
            }
        }
        (a, b)
    }

    fn combine(weights: &[S], terms: &[Affine<S>], bias: S, n: usize) -> Self {
        let mut coeffs = vec![S::zero(); n];
        let mut constant = bias;
        for (&w, t) in weights.iter().zip(terms) {
            if w == S::zero() {
                continue;
            }
            constant = constant + w * t.constant;
            for (c, &tc) in coeffs.iter_mut().zip(&t.coeffs) {
                *c = *c + w * tc;
            }
        }
        Affine { coeffs, constant }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoding<S> {
    pub n_vars: usize,
    pub var_lo: Vec<S>,
    pub var_hi: Vec<S>,
    /// Relaxation rows over the LP variables (region rows excluded).
    pub rows: Vec<(Vec<S>, Relation, S)>,
    pub pre: Vec<Vec<Affine<S>>>,
    pub post: Vec<Vec<Affine<S>>>,
}

impl<S: Scalar> Encoding<S> {
    /// LP over the region intersected with the relaxation rows so far.
    fn lp(&self, region: &Polyhedron<S>) -> LinearProgram<S> {
        let n0 = region.dim();
        let mut lp = region.base_lp(self.n_vars - n0);
        for k in n0..self.n_vars {
            lp.set_bounds(k, self.var_lo[k], self.var_hi[k]);
        }
        for (coeffs, rel, rhs) in &self.rows {
            let mut c = coeffs.clone();
            c.resize(self.n_vars, S::zero());
            lp.add_constraint(c, *rel, *rhs);
        }
        lp
    }
}

fn solve_bound<S: Scalar>(lp: &mut LinearProgram<S>, obj: Vec<S>, sense: Sense) -> Result<S> {
    lp.set_objective(sense, obj);
    let sol = lp.solve();
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(Error::Infeasible),
        LpStatus::Unbounded => Err(Error::Unbounded),
        LpStatus::NumericalFailure => Err(Error::IterationLimit),
    }
}

pub(super) fn build<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    prev: Option<&RelaxationState<S>>,
) -> Result<RelaxationState<S>> {
    let n0 = net.input_dim();
    let mut enc = Encoding {
        n_vars: n0,
        var_lo: region.lower().to_vec(),
        var_hi: region.upper().to_vec(),
        rows: Vec::new(),
        pre: Vec::new(),
        post: Vec::new(),
    };
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut phases = Vec::new();
    let mut lp_solves = 0;

    let inputs: Vec<Affine<S>> = (0..n0).map(|k| Affine::var(k, n0)).collect();
    for (i, layer) in net.layers().iter().enumerate() {
        let prev_post = if i == 0 { &inputs } else { &enc.post[i - 1] };
        let pre: Vec<Affine<S>> = (0..layer.out_dim())
            .map(|j| Affine::combine(layer.row(j), prev_post, layer.bias()[j], enc.n_vars))
            .collect();
        let seeds: Vec<(S, S)> = pre.iter().map(|a| a.interval(&enc.var_lo, &enc.var_hi)).collect();
        let mut lo: Vec<S> = seeds.iter().map(|s| s.0).collect();
        let mut hi: Vec<S> = seeds.iter().map(|s| s.1).collect();
        if let Some(p) = prev {
            for j in 0..lo.len() {
                lo[j] = lo[j].max(p.lower[i][j]);
                hi[j] = hi[j].min(p.upper[i][j]);
            }
        }

        if layer.activation() == Activation::Identity {
            lower.push(lo);
            upper.push(hi);
            enc.pre.push(pre);
            break;
        }

        let mut phase: Vec<Phase> = Vec::with_capacity(lo.len());
        let mut lp: Option<LinearProgram<S>> = None;
        for j in 0..lo.len() {
            let inherited = prev.map(|p| p.phases[i][j]).filter(|ph| ph.is_stable());
            if let Some(ph) = inherited {
                phase.push(ph);
                continue;
            }
            if Phase::from_bounds(lo[j], hi[j]).is_stable() {
                phase.push(Phase::from_bounds(lo[j], hi[j]));
                continue;
            }
            let lp = lp.get_or_insert_with(|| enc.lp(region));
            let obj = pre[j].padded(enc.n_vars);
            let min = solve_bound(lp, obj.clone(), Sense::Minimize)? + pre[j].constant;
            let max = solve_bound(lp, obj, Sense::Maximize)? + pre[j].constant;
            lp_solves += 2;
            lo[j] = lo[j].max(min);
            hi[j] = hi[j].min(max);
            if lo[j] > hi[j] {
                let mid = (lo[j] + hi[j]) / S::lit(2.0);
                lo[j] = mid;
                hi[j] = mid;
            }
            phase.push(Phase::from_bounds(lo[j], hi[j]));
        }

        let mut post = Vec::with_capacity(pre.len());
        for (j, a) in pre.iter().enumerate() {
            match phase[j] {
                Phase::Active => post.push(a.clone()),
                Phase::Inactive => post.push(Affine::constant(S::zero())),
                Phase::Unstable => {
                    let (lam, mu) = upper_line(lo[j], hi[j]).expect("unstable bounds straddle zero");
                    let k = enc.n_vars;
                    enc.n_vars += 1;
                    enc.var_lo.push(S::zero());
                    enc.var_hi.push(hi[j]);
                    let mut ge = a.padded(k + 1).iter().map(|&c| -c).collect::<Vec<_>>();
                    ge[k] = S::one();
                    enc.rows.push((ge, Relation::Ge, a.constant));
                    let mut le = a.padded(k + 1).iter().map(|&c| -lam * c).collect::<Vec<_>>();
                    le[k] = S::one();
                    enc.rows.push((le, Relation::Le, mu + lam * a.constant));
                    post.push(Affine::var(k, k + 1));
                }
            }
        }
        lower.push(lo);
        upper.push(hi);
        phases.push(phase);
        enc.pre.push(pre);
        enc.post.push(post);
    }

    Ok(RelaxationState {
        kind: RelaxationKind::Triangle,
        region: region.clone(),
        lower,
        upper,
        phases,
        lp_solves,
        triangle: Some(enc),
        deeppoly: None,
    })
}

fn encoding<S: Scalar>(state: &RelaxationState<S>) -> &Encoding<S> {
    state.triangle.as_ref().expect("triangle state carries its encoding")
}

fn margin_objective<S: Scalar>(enc: &Encoding<S>, target: usize, rival: usize) -> (Vec<S>, S) {
    let out = enc.pre.last().expect("output layer");
    let t = out[target].padded(enc.n_vars);
    let r = out[rival].padded(enc.n_vars);
    let obj = t.iter().zip(&r).map(|(&a, &b)| a - b).collect();
    (obj, out[target].constant - out[rival].constant)
}

pub(super) fn min_margin<S: Scalar>(
    state: &RelaxationState<S>,
    net: &Network<S>,
    target: usize,
) -> Result<SolveRecord<S>> {
    let enc = encoding(state);
    let mut lp = enc.lp(&state.region);
    let mut best: Option<(S, usize, Vec<S>)> = None;
    for rival in (0..net.output_dim()).filter(|&y| y != target) {
        let (obj, constant) = margin_objective(enc, target, rival);
        lp.set_objective(Sense::Minimize, obj);
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => return Err(Error::Unbounded),
            LpStatus::NumericalFailure => return Err(Error::IterationLimit),
        }
        let value = sol.objective + constant;
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, rival, sol.primal));
        }
    }
    let (objective, rival, vals) = best.expect("at least two classes");
    Ok(SolveRecord {
        kind: RelaxationKind::Triangle,
        target,
        rival,
        objective,
        pre: enc
            .pre
            .iter()
            .map(|l| l.iter().map(|a| a.eval(&vals)).collect())
            .collect(),
        post: enc
            .post
            .iter()
            .map(|l| l.iter().map(|a| a.eval(&vals)).collect())
            .collect(),
        input: vals[..net.input_dim()].to_vec(),
        forms: Vec::new(),
    })
}

pub(super) fn margin_at<S: Scalar>(state: &RelaxationState<S>, net: &Network<S>, target: usize, x: &[S]) -> Result<S> {
    let enc = encoding(state);
    let n0 = net.input_dim();
    let mut lp = LinearProgram::new(enc.n_vars);
    for (k, &v) in x.iter().enumerate() {
        lp.set_bounds(k, v, v);
    }
    for k in n0..enc.n_vars {
        lp.set_bounds(k, enc.var_lo[k], enc.var_hi[k]);
    }
    for (coeffs, rel, rhs) in &enc.rows {
        let mut c = coeffs.clone();
        c.resize(enc.n_vars, S::zero());
        lp.add_constraint(c, *rel, *rhs);
    }
    let mut best = S::infinity();
    for rival in (0..net.output_dim()).filter(|&y| y != target) {
        let (obj, constant) = margin_objective(enc, target, rival);
        lp.set_objective(Sense::Minimize, obj);
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => best = best.min(sol.objective + constant),
            // The point lies outside the relaxed input range of this state.
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => return Err(Error::Unbounded),
            LpStatus::NumericalFailure => return Err(Error::IterationLimit),
        }
    }
    Ok(best)
}
