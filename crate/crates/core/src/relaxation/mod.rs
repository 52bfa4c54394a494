//! Convex relaxations of the network over a polyhedral input region.
//!
//! Two relaxations are supported. The triangle relaxation replaces each
//! unstable ReLU by the convex hull of its graph over `[l, u]` and is solved
//! as one LP. DeepPoly keeps a single lower bound per unstable ReLU and
//! back-substitutes every bound to a linear form over the inputs, which is
//! then minimized over the region by a small LP in the input variables only.
//!
//! Bounds are seeded from the region's bounding box and tightened by LP only
//! for neurons that the seed leaves unstable. When the state of a superset
//! region is supplied, neurons already stable there keep their phase.

mod deeppoly;
mod triangle;

use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::network::{Activation, Network};
use crate::scalar::{dot, Scalar};

pub use deeppoly::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelaxationKind {
    Triangle,
    DeepPoly,
}

impl RelaxationKind {
    pub fn name(self) -> &'static str {
        match self {
            RelaxationKind::Triangle => "triangle",
            RelaxationKind::DeepPoly => "deeppoly",
        }
    }
}

impl std::str::FromStr for RelaxationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triangle" => Ok(RelaxationKind::Triangle),
            "deeppoly" => Ok(RelaxationKind::DeepPoly),
            other => Err(Error::InvalidParameter(format!("unknown relaxation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Active,
    Inactive,
    Unstable,
}

impl Phase {
    pub fn from_bounds<S: Scalar>(lower: S, upper: S) -> Phase {
        if lower >= S::zero() {
            Phase::Active
        } else if upper <= S::zero() {
            Phase::Inactive
        } else {
            Phase::Unstable
        }
    }

    pub fn is_stable(self) -> bool {
        self != Phase::Unstable
    }
}

/// Slope and intercept of the upper triangle face, `u/(u-l)` and
/// `-l·u/(u-l)`. Only defined for unstable neurons.
pub fn upper_line<S: Scalar>(lower: S, upper: S) -> Option<(S, S)> {
    if lower < S::zero() && upper > S::zero() {
        let span = upper - lower;
        Some((upper / span, -lower * upper / span))
    } else {
        None
    }
}

/// Bounds, phases and the encoded relaxation for one region.
#[derive(Debug, Clone)]
pub struct RelaxationState<S> {
    kind: RelaxationKind,
    region: Polyhedron<S>,
    /// Pre-activation bounds per layer (output layer included).
    lower: Vec<Vec<S>>,
    upper: Vec<Vec<S>>,
    /// Phases of the ReLU layers.
    phases: Vec<Vec<Phase>>,
    /// Number of bound LPs solved while building.
    lp_solves: usize,
    triangle: Option<triangle::Encoding<S>>,
    deeppoly: Option<deeppoly::Forms<S>>,
}

/// Optimal solution of the relaxed margin LP for the minimizing rival.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord<S> {
    pub kind: RelaxationKind,
    pub target: usize,
    pub rival: usize,
    pub objective: S,
    /// Values assigned to every pre-activation (`g*a`), layer by layer.
    pub pre: Vec<Vec<S>>,
    /// Values assigned to every ReLU output (`g*r`).
    pub post: Vec<Vec<S>>,
    /// Input witness `x*`.
    pub input: Vec<S>,
    /// Back-substituted margin forms per rival (DeepPoly only).
    pub forms: Vec<(usize, Linear<S>)>,
}

#[derive(Debug, Clone)]
pub struct Verification<S> {
    pub verified: bool,
    pub margin: S,
    pub record: SolveRecord<S>,
}

pub(crate) fn check_target<S: Scalar>(net: &Network<S>, target: usize) -> Result<()> {
    if target >= net.output_dim() {
        return Err(Error::InvalidParameter(format!(
            "target {target} out of range for {} classes",
            net.output_dim()
        )));
    }
    Ok(())
}

impl<S: Scalar> RelaxationState<S> {
    /// Build the relaxation of `net` over `region`. `prev`, when given, must
    /// belong to a superset of `region` and have the same kind.
    pub fn build(
        net: &Network<S>,
        region: &Polyhedron<S>,
        kind: RelaxationKind,
        prev: Option<&RelaxationState<S>>,
    ) -> Result<Self> {
        if region.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: region.dim(),
            });
        }
        let prev = prev.filter(|p| p.kind == kind);
        match kind {
            RelaxationKind::Triangle => triangle::build(net, region, prev),
            RelaxationKind::DeepPoly => deeppoly::build(net, region, prev),
        }
    }

    pub fn kind(&self) -> RelaxationKind {
        self.kind
    }

    pub fn region(&self) -> &Polyhedron<S> {
        &self.region
    }

    /// Pre-activation bounds `(l, u)` of neuron `j` in layer `layer`.
    pub fn bounds(&self, layer: usize, j: usize) -> (S, S) {
        (self.lower[layer][j], self.upper[layer][j])
    }

    pub fn layer_bounds(&self, layer: usize) -> (&[S], &[S]) {
        (&self.lower[layer], &self.upper[layer])
    }

    pub fn phase(&self, layer: usize, j: usize) -> Phase {
        self.phases[layer][j]
    }

    pub fn phases(&self) -> &[Vec<Phase>] {
        &self.phases
    }

    pub fn unstable_count(&self) -> usize {
        self.phases.iter().flatten().filter(|p| !p.is_stable()).count()
    }

    pub fn lp_solves(&self) -> usize {
        self.lp_solves
    }

    /// `(λ, μ)` of an unstable neuron.
    pub fn upper_line(&self, layer: usize, j: usize) -> Option<(S, S)> {
        if self.phases.get(layer)?.get(j)? != &Phase::Unstable {
            return None;
        }
        upper_line(self.lower[layer][j], self.upper[layer][j])
    }

    /// Symbolic bounds of a neuron over the inputs (DeepPoly states only).
    pub fn symbolic_bounds(&self, layer: usize, j: usize) -> Option<(&Linear<S>, &Linear<S>)> {
        self.deeppoly.as_ref().map(|f| (&f.lower[layer][j], &f.upper[layer][j]))
    }

    /// Minimum relaxed margin over the region; verified iff it is positive.
    pub fn verify(&self, net: &Network<S>, target: usize) -> Result<Verification<S>> {
        check_target(net, target)?;
        let record = match self.kind {
            RelaxationKind::Triangle => triangle::min_margin(self, net, target)?,
            RelaxationKind::DeepPoly => deeppoly::min_margin(self, net, target)?,
        };
        Ok(Verification {
            verified: record.objective > S::zero(),
            margin: record.objective,
            record,
        })
    }

    /// Relaxed margin with the input pinned to `x`, keeping this region's
    /// bounds: negative iff `x` is an abstract counterexample.
    pub fn margin_at(&self, net: &Network<S>, target: usize, x: &[S]) -> Result<S> {
        check_target(net, target)?;
        if x.len() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: x.len(),
            });
        }
        match self.kind {
            RelaxationKind::Triangle => triangle::margin_at(self, net, target, x),
            RelaxationKind::DeepPoly => Ok(deeppoly::margin_forms(self, net, target)
                .iter()
                .map(|(_, f)| f.eval(x))
                .fold(S::infinity(), S::min)),
        }
    }

    /// Check that an assignment of neuron values satisfies this relaxation.
    /// Returns the largest violation.
    pub fn violation(&self, net: &Network<S>, input: &[S], pre: &[Vec<S>], post: &[Vec<S>]) -> S {
        let mut worst = S::zero();
        let region = &self.region;
        for (j, &v) in input.iter().enumerate() {
            worst = worst.max(region.lower()[j] - v).max(v - region.upper()[j]);
        }
        for (row, &c) in region.rows().iter().zip(region.rhs()) {
            worst = worst.max(dot(row, input) - c);
        }
        for (i, layer) in net.layers().iter().enumerate() {
            let inp = if i == 0 { input } else { &post[i - 1] };
            let z = layer.affine(inp);
            for (j, &zj) in z.iter().enumerate() {
                worst = worst.max((zj - pre[i][j]).abs());
            }
            if layer.activation() == Activation::Identity {
                continue;
            }
            for j in 0..layer.out_dim() {
                let (a, r) = (pre[i][j], post[i][j]);
                let v = match self.phases[i][j] {
                    Phase::Active => (r - a).abs(),
                    Phase::Inactive => r.abs(),
                    Phase::Unstable => {
                        let (l, u) = self.bounds(i, j);
                        let (lam, mu) = upper_line(l, u).expect("unstable");
                        let lower_gap = match self.kind {
                            RelaxationKind::Triangle => (-r).max(a - r),
                            RelaxationKind::DeepPoly => {
                                if u <= -l {
                                    -r
                                } else {
                                    a - r
                                }
                            }
                        };
                        lower_gap.max(r - (lam * a + mu))
                    }
                };
                worst = worst.max(v);
            }
        }
        worst
    }
}

/// Build the relaxation over `region` and check the margin in one call.
pub fn verify_region<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    target: usize,
    kind: RelaxationKind,
) -> Result<Verification<S>> {
    RelaxationState::build(net, region, kind, None)?.verify(net, target)
}

/// Input minimizing the relaxed margin of an unverified region.
pub fn worst_abstract_counterexample<S: Scalar>(record: &SolveRecord<S>) -> Result<Vec<S>> {
    if record.objective >= S::zero() {
        return Err(Error::NoCounterexample(record.objective.to_f64_lossy()));
    }
    Ok(record.input.clone())
}

/// DeepPoly bounds for every neuron over a polyhedral input region.
pub fn deeppoly_bounds<S: Scalar>(net: &Network<S>, region: &Polyhedron<S>) -> Result<RelaxationState<S>> {
    RelaxationState::build(net, region, RelaxationKind::DeepPoly, None)
}
