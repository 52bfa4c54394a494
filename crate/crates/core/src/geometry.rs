//! Polyhedral candidate regions and the box approximations used to count
//! the discrete images they contain.

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpStatus, Relation, Sense};
use crate::scalar::{dot, norm2, Scalar};

/// `{x : W x <= c, lb <= x <= ub}`.
///
/// The bounding box is always present; it carries the initial attack box
/// intersected with the epsilon ball and the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron<S> {
    w: Vec<Vec<S>>,
    c: Vec<S>,
    lb: Vec<S>,
    ub: Vec<S>,
}

impl<S: Scalar> Polyhedron<S> {
    pub fn from_box(lb: Vec<S>, ub: Vec<S>) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), lb, ub)
    }

    pub fn new(w: Vec<Vec<S>>, c: Vec<S>, lb: Vec<S>, ub: Vec<S>) -> Result<Self> {
        let n = lb.len();
        if n == 0 {
            return Err(Error::InvalidParameter("polyhedron of dimension zero".into()));
        }
        if ub.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ub.len(),
            });
        }
        if c.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: c.len(),
            });
        }
        if lb.iter().zip(&ub).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter("box lower bound exceeds upper bound".into()));
        }
        for row in &w {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            let norm = norm2(row);
            if !(norm > S::zero()) || !norm.is_finite() {
                return Err(Error::ZeroNormal);
            }
        }
        Ok(Polyhedron { w, c, lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn num_rows(&self) -> usize {
        self.w.len()
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.w
    }

    pub fn rhs(&self) -> &[S] {
        &self.c
    }

    pub fn lower(&self) -> &[S] {
        &self.lb
    }

    pub fn upper(&self) -> &[S] {
        &self.ub
    }

    pub fn contains(&self, x: &[S]) -> bool {
        let tol = S::member_tol();
        x.len() == self.dim()
            && x.iter()
                .zip(self.lb.iter().zip(&self.ub))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
            && self.w.iter().zip(&self.c).all(|(row, &c)| dot(row, x) <= c + tol)
    }

    /// `self ∩ {x : normal · x <= offset}`.
    pub fn intersect(&self, normal: Vec<S>, offset: S) -> Result<Self> {
        if normal.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: normal.len(),
            });
        }
        if !(norm2(&normal) > S::zero()) {
            return Err(Error::ZeroNormal);
        }
        let mut out = self.clone();
        out.w.push(normal);
        out.c.push(offset);
        Ok(out)
    }

    /// LP over the region's variables with every region constraint added.
    pub fn base_lp(&self, extra_vars: usize) -> LinearProgram<S> {
        let n = self.dim();
        let mut lp = LinearProgram::new(n + extra_vars);
        for j in 0..n {
            lp.set_bounds(j, self.lb[j], self.ub[j]);
        }
        for (row, &c) in self.w.iter().zip(&self.c) {
            let mut coeffs = row.clone();
            coeffs.resize(n + extra_vars, S::zero());
            lp.add_constraint(coeffs, Relation::Le, c);
        }
        lp
    }

    /// Optimize a linear function over the region; returns value and argument.
    pub fn optimize(&self, objective: &[S], sense: Sense) -> Result<(S, Vec<S>)> {
        let mut lp = self.base_lp(0);
        lp.set_objective(sense, objective.to_vec());
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => Ok((sol.objective, sol.primal)),
            LpStatus::Infeasible => Err(Error::Infeasible),
            LpStatus::Unbounded => Err(Error::Unbounded),
            LpStatus::NumericalFailure => Err(Error::IterationLimit),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(
            self.optimize(&vec![S::zero(); self.dim()], Sense::Minimize),
            Err(Error::Infeasible)
        )
    }

    /// Per-coordinate extrema over the region (2·n LPs).
    pub fn overapprox_box(&self) -> Result<BoxApprox<S>> {
        let n = self.dim();
        if self.w.is_empty() {
            return Ok(BoxApprox::new(self.lb.clone(), self.ub.clone(), BoxKind::Over));
        }
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![S::zero(); n];
            e[j] = S::one();
            lower.push(self.optimize(&e, Sense::Minimize)?.0.max(self.lb[j]));
            upper.push(self.optimize(&e, Sense::Maximize)?.0.min(self.ub[j]));
        }
        Ok(BoxApprox::new(lower, upper, BoxKind::Over))
    }

    /// Inscribed box maximizing its smallest half-width, with a small bonus on
    /// the total half-width to break ties toward volume.
    pub fn underapprox_box(&self) -> Result<BoxApprox<S>> {
        let n = self.dim();
        // variables: center (n), half-widths (n), t
        let nv = 2 * n + 1;
        let mut lp = LinearProgram::new(nv);
        let two = S::lit(2.0);
        for j in 0..n {
            lp.set_bounds(j, self.lb[j], self.ub[j]);
            lp.set_bounds(n + j, S::zero(), (self.ub[j] - self.lb[j]) / two);
        }
        lp.set_bounds(2 * n, S::zero(), S::infinity());
        for (row, &c) in self.w.iter().zip(&self.c) {
            let mut coeffs = vec![S::zero(); nv];
            for j in 0..n {
                coeffs[j] = row[j];
                coeffs[n + j] = row[j].abs();
            }
            lp.add_constraint(coeffs, Relation::Le, c);
        }
        for j in 0..n {
            let mut lo = vec![S::zero(); nv];
            lo[j] = S::one();
            lo[n + j] = -S::one();
            lp.add_constraint(lo, Relation::Ge, self.lb[j]);
            let mut hi = vec![S::zero(); nv];
            hi[j] = S::one();
            hi[n + j] = S::one();
            lp.add_constraint(hi, Relation::Le, self.ub[j]);
            let mut tie = vec![S::zero(); nv];
            tie[n + j] = S::one();
            tie[2 * n] = -S::one();
            lp.add_constraint(tie, Relation::Ge, S::zero());
        }
        let mut obj = vec![S::zero(); nv];
        for o in obj.iter_mut().skip(n).take(n) {
            *o = S::lit(1e-6);
        }
        obj[2 * n] = S::one();
        lp.set_objective(Sense::Maximize, obj);
        let sol = lp.solve();
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => return Err(Error::Unbounded),
            LpStatus::NumericalFailure => return Err(Error::IterationLimit),
        }
        let center: Vec<S> = (0..n).map(|j| sol.primal[j].max(self.lb[j]).min(self.ub[j])).collect();
        let mut radius: Vec<S> = (0..n).map(|j| sol.primal[n + j].max(S::zero())).collect();

        // Rescale half-widths so every row certificate holds in floating point.
        let mut alpha = S::one();
        for (row, &c) in self.w.iter().zip(&self.c) {
            let spread: S = row.iter().zip(&radius).map(|(&w, &r)| w.abs() * r).sum();
            if spread > S::zero() {
                let room = (c - dot(row, &center)).max(S::zero());
                alpha = alpha.min(room / spread);
            }
        }
        for r in radius.iter_mut() {
            *r = *r * alpha;
        }
        let lower = (0..n).map(|j| (center[j] - radius[j]).max(self.lb[j])).collect();
        let upper = (0..n).map(|j| (center[j] + radius[j]).min(self.ub[j])).collect();
        Ok(BoxApprox::new(lower, upper, BoxKind::Under))
    }

    /// True iff the axis-aligned box lies inside the region (row-wise
    /// worst-corner test).
    pub fn contains_box(&self, lower: &[S], upper: &[S]) -> bool {
        let tol = S::member_tol();
        let two = S::lit(2.0);
        let inside_bounds = lower
            .iter()
            .zip(upper)
            .zip(self.lb.iter().zip(&self.ub))
            .all(|((&l, &u), (&bl, &bu))| l >= bl - tol && u <= bu + tol);
        inside_bounds
            && self.w.iter().zip(&self.c).all(|(row, &c)| {
                let worst: S = row
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&w, (&l, &u))| w * (l + u) / two + w.abs() * (u - l) / two)
                    .sum();
                worst <= c + tol
            })
    }

    /// Move every facet toward `center` by the fraction `theta`: row offsets
    /// become `c - theta (c - W x_c)` and the box closes in likewise. Facet
    /// normals are unchanged.
    pub fn shrink_toward(&self, center: &[S], theta: S) -> Result<Self> {
        if center.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: center.len(),
            });
        }
        let c = self
            .w
            .iter()
            .zip(&self.c)
            .map(|(row, &c)| {
                let gap = (c - dot(row, center)).abs();
                c - theta * gap
            })
            .collect();
        let lb: Vec<S> = self
            .lb
            .iter()
            .zip(center)
            .map(|(&l, &x)| l + theta * (x - l).abs())
            .collect();
        let ub: Vec<S> = self
            .ub
            .iter()
            .zip(center)
            .map(|(&u, &x)| u - theta * (u - x).abs())
            .collect();
        let ub = ub.iter().zip(&lb).map(|(&u, &l)| u.max(l)).collect();
        Ok(Polyhedron {
            w: self.w.clone(),
            c,
            lb,
            ub,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxKind {
    Over,
    Under,
}

/// Default number of intensity levels per input (8-bit images).
pub const LEVELS: u32 = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxApprox<S> {
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub kind: BoxKind,
    pub log10_count: f64,
}

impl<S: Scalar> BoxApprox<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>, kind: BoxKind) -> Self {
        let mut b = BoxApprox {
            lower,
            upper,
            kind,
            log10_count: 0.0,
        };
        b.log10_count = log10_discrete_count(&b, LEVELS);
        b
    }

    pub fn contains(&self, x: &[S]) -> bool {
        let tol = S::member_tol();
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }
}

fn level_count<S: Scalar>(lower: S, upper: S, levels: u32) -> u32 {
    let width = (upper - lower).to_f64_lossy().max(0.0);
    let steps = (width * f64::from(levels - 1)).floor() as u32;
    steps.min(levels - 1) + 1
}

/// `Σ_j log10(floor(width_j · (levels - 1)) + 1)`.
pub fn log10_discrete_count<S: Scalar>(b: &BoxApprox<S>, levels: u32) -> f64 {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(&l, &u)| f64::from(level_count(l, u, levels)).log10())
        .sum()
}

/// Number of distinct values each input can take inside the box.
pub fn sensitivity_map<S: Scalar>(b: &BoxApprox<S>, levels: u32) -> Vec<u32> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(&l, &u)| level_count(l, u, levels))
        .collect()
}
