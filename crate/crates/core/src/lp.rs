//! Dense two-phase simplex for the small linear programs that bound
//! neurons, verify regions and answer geometric queries.
//!
//! Variables carry optional bounds and are shifted or split into
//! non-negative columns. Pricing is largest-coefficient until a run of
//! degenerate pivots is seen, after which Bland's rule takes over for the rest
//! of the solve, so cycling cannot occur. Ties in the ratio test go to the
//! lowest column index, which keeps results deterministic.

use crate::scalar::Scalar;
use crate::work;

const PIVOT_CAP: u64 = 1_000_000;
const DEGENERATE_STREAK: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<S> {
    pub coeffs: Vec<S>,
    pub relation: Relation,
    pub rhs: S,
}

/// `optimize objective · x` subject to row constraints and per-variable bounds.
/// Variables are free unless bounded with [`LinearProgram::set_bounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<S> {
    objective: Vec<S>,
    sense: Sense,
    constraints: Vec<Constraint<S>>,
    lower: Vec<S>,
    upper: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Pivot cap reached or the final basis failed the feasibility replay.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub objective: S,
    pub primal: Vec<S>,
    pub pivots: u64,
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "linear program needs at least one variable");
        LinearProgram {
            objective: vec![S::zero(); n],
            sense: Sense::Minimize,
            constraints: Vec::new(),
            lower: vec![S::neg_infinity(); n],
            upper: vec![S::infinity(); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraints(&self) -> &[Constraint<S>] {
        &self.constraints
    }

    pub fn bounds(&self, j: usize) -> (S, S) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_objective(&mut self, sense: Sense, coeffs: Vec<S>) {
        assert_eq!(coeffs.len(), self.num_vars());
        self.sense = sense;
        self.objective = coeffs;
    }

    pub fn set_bounds(&mut self, j: usize, lo: S, hi: S) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<S>, relation: Relation, rhs: S) {
        assert_eq!(coeffs.len(), self.num_vars());
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    /// Largest violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[S]) -> S {
        let mut worst = S::zero();
        for c in &self.constraints {
            let lhs = crate::scalar::dot(&c.coeffs, x);
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn solve(&self) -> LpSolution<S> {
        let sol = Standard::build(self).solve(self);
        work::add_pivots(sol.pivots);
        sol
    }
}

#[derive(Debug, Clone, Copy)]
enum Column<S> {
    /// x = offset + y
    Shifted(S, usize),
    /// x = offset - y
    Mirrored(S, usize),
    /// x = y+ - y-
    Split(usize, usize),
}

struct Standard<S> {
    columns: Vec<Column<S>>,
    n_struct: usize,
    /// rows as (coeffs over structural columns, is_ge, rhs)
    rows: Vec<(Vec<S>, bool, S)>,
    cost: Vec<S>,
}

impl<S: Scalar> Standard<S> {
    fn build(lp: &LinearProgram<S>) -> Self {
        let mut columns = Vec::with_capacity(lp.num_vars());
        let mut n_struct = 0;
        for j in 0..lp.num_vars() {
            let (lo, hi) = (lp.lower[j], lp.upper[j]);
            let col = if lo.is_finite() {
                n_struct += 1;
                Column::Shifted(lo, n_struct - 1)
            } else if hi.is_finite() {
                n_struct += 1;
                Column::Mirrored(hi, n_struct - 1)
            } else {
                n_struct += 2;
                Column::Split(n_struct - 2, n_struct - 1)
            };
            columns.push(col);
        }

        let translate = |coeffs: &[S]| -> (Vec<S>, S) {
            let mut row = vec![S::zero(); n_struct];
            let mut shift = S::zero();
            for (&a, col) in coeffs.iter().zip(&columns) {
                if a == S::zero() {
                    continue;
                }
                match *col {
                    Column::Shifted(off, c) => {
                        row[c] = a;
                        shift = shift + a * off;
                    }
                    Column::Mirrored(off, c) => {
                        row[c] = -a;
                        shift = shift + a * off;
                    }
                    Column::Split(p, n) => {
                        row[p] = a;
                        row[n] = -a;
                    }
                }
            }
            (row, shift)
        };

        let mut rows = Vec::new();
        for c in &lp.constraints {
            let (row, shift) = translate(&c.coeffs);
            let rhs = c.rhs - shift;
            match c.relation {
                Relation::Le => rows.push((row, false, rhs)),
                Relation::Ge => rows.push((row, true, rhs)),
                Relation::Eq => {
                    rows.push((row.clone(), false, rhs));
                    rows.push((row, true, rhs));
                }
            }
        }
        for (j, col) in columns.iter().enumerate() {
            if let Column::Shifted(lo, c) = *col {
                if lp.upper[j].is_finite() {
                    let mut row = vec![S::zero(); n_struct];
                    row[c] = S::one();
                    rows.push((row, false, lp.upper[j] - lo));
                }
            }
        }

        let sign = match lp.sense {
            Sense::Minimize => S::one(),
            Sense::Maximize => -S::one(),
        };
        let (cost, _) = translate(&lp.objective.iter().map(|&c| c * sign).collect::<Vec<_>>());
        Standard {
            columns,
            n_struct,
            rows,
            cost,
        }
    }

    fn solve(self, lp: &LinearProgram<S>) -> LpSolution<S> {
        let n = lp.num_vars();
        let fail = |status, pivots| LpSolution {
            status,
            objective: S::nan(),
            primal: vec![S::nan(); n],
            pivots,
        };

        let m = self.rows.len();
        let n_art = self
            .rows
            .iter()
            .filter(|(_, ge, rhs)| *ge != (*rhs < S::zero()))
            .count();
        let n_cols = self.n_struct + m + n_art;
        let mut tab = Tableau::new(m, n_cols);
        let mut art = self.n_struct + m;
        let art_start = art;
        for (i, (row, ge, rhs)) in self.rows.iter().enumerate() {
            let flip = *rhs < S::zero();
            let s = if flip { -S::one() } else { S::one() };
            for (j, &a) in row.iter().enumerate() {
                tab.set(i, j, a * s);
            }
            tab.set_rhs(i, *rhs * s);
            // slack enters with +1 for <=, -1 for >=, before normalisation
            let slack = if *ge { -S::one() } else { S::one() };
            tab.set(i, self.n_struct + i, slack * s);
            if *ge != flip {
                tab.set(i, art, S::one());
                tab.basis[i] = art;
                art += 1;
            } else {
                tab.basis[i] = self.n_struct + i;
            }
        }

        let mut pivots = 0u64;
        if n_art > 0 {
            let mut phase1 = vec![S::zero(); n_cols];
            for c in phase1.iter_mut().skip(art_start) {
                *c = S::one();
            }
            tab.load_costs(&phase1);
            match tab.optimize(n_cols, &mut pivots) {
                Outcome::Optimal => {}
                Outcome::Unbounded => return fail(LpStatus::NumericalFailure, pivots),
                Outcome::Cap => return fail(LpStatus::NumericalFailure, pivots),
            }
            let scale = self.rows.iter().fold(S::one(), |acc, (_, _, r)| acc.max(r.abs()));
            if -tab.objective_value() > S::feas_tol() * scale {
                return fail(LpStatus::Infeasible, pivots);
            }
            // drive remaining artificials out of the basis
            for i in 0..m {
                if tab.basis[i] >= art_start {
                    if let Some(j) = (0..art_start).find(|&j| tab.get(i, j).abs() > S::pivot_tol()) {
                        tab.pivot(i, j);
                        pivots += 1;
                    }
                }
            }
        }

        let mut phase2 = vec![S::zero(); n_cols];
        phase2[..self.n_struct].copy_from_slice(&self.cost);
        tab.load_costs(&phase2);
        match tab.optimize(art_start, &mut pivots) {
            Outcome::Optimal => {}
            Outcome::Unbounded => return fail(LpStatus::Unbounded, pivots),
            Outcome::Cap => return fail(LpStatus::NumericalFailure, pivots),
        }

        let mut y = vec![S::zero(); n_cols];
        for i in 0..m {
            y[tab.basis[i]] = tab.rhs(i).max(S::zero());
        }
        let primal: Vec<S> = self
            .columns
            .iter()
            .map(|col| match *col {
                Column::Shifted(off, c) => off + y[c],
                Column::Mirrored(off, c) => off - y[c],
                Column::Split(p, q) => y[p] - y[q],
            })
            .collect();

        let scale = lp.constraints.iter().fold(S::one(), |acc, c| acc.max(c.rhs.abs()));
        if lp.max_violation(&primal) > S::lit(10.0) * S::feas_tol() * scale {
            return fail(LpStatus::NumericalFailure, pivots);
        }
        let objective = crate::scalar::dot(&lp.objective, &primal);
        LpSolution {
            status: LpStatus::Optimal,
            objective,
            primal,
            pivots,
        }
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    Cap,
}

/// Row-major tableau; row `m` holds reduced costs, the last column the rhs.
struct Tableau<S> {
    m: usize,
    width: usize,
    data: Vec<S>,
    basis: Vec<usize>,
}

impl<S: Scalar> Tableau<S> {
    fn new(m: usize, n_cols: usize) -> Self {
        let width = n_cols + 1;
        Tableau {
            m,
            width,
            data: vec![S::zero(); (m + 1) * width],
            basis: vec![0; m],
        }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.width + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.width + j] = v;
    }

    #[inline]
    fn rhs(&self, i: usize) -> S {
        self.get(i, self.width - 1)
    }

    fn set_rhs(&mut self, i: usize, v: S) {
        let w = self.width;
        self.set(i, w - 1, v);
    }

    /// Negated objective value, as kept in the cost row's rhs.
    fn objective_value(&self) -> S {
        self.rhs(self.m)
    }

    fn load_costs(&mut self, cost: &[S]) {
        let (m, w) = (self.m, self.width);
        for j in 0..w {
            let c = if j < cost.len() { cost[j] } else { S::zero() };
            self.set(m, j, c);
        }
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != S::zero() {
                for j in 0..w {
                    let v = self.get(m, j) - cb * self.get(i, j);
                    self.set(m, j, v);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.get(r, c);
        let inv = S::one() / p;
        for j in 0..w {
            let v = self.get(r, j) * inv;
            self.set(r, j, v);
        }
        self.set(r, c, S::one());
        let (before, rest) = self.data.split_at_mut(r * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != S::zero() {
                for (x, &pr) in row.iter_mut().zip(pivot_row.iter()) {
                    *x = *x - f * pr;
                }
                row[c] = S::zero();
            }
        }
        self.basis[r] = c;
    }

    /// Minimise the loaded costs; only columns `< allowed` may enter.
    fn optimize(&mut self, allowed: usize, pivots: &mut u64) -> Outcome {
        let m = self.m;
        let mut bland = false;
        let mut streak = 0u32;
        loop {
            if *pivots >= PIVOT_CAP {
                return Outcome::Cap;
            }
            let mut enter = None;
            let mut best = -S::opt_tol();
            for j in 0..allowed {
                let d = self.get(m, j);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Outcome::Optimal;
            };

            let mut leave: Option<(usize, S)> = None;
            for i in 0..m {
                let a = self.get(i, c);
                if a > S::pivot_tol() {
                    let ratio = self.rhs(i).max(S::zero()) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr || (ratio == lr && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Outcome::Unbounded;
            };
            if ratio <= S::zero() {
                streak += 1;
                if streak >= DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                streak = 0;
            }
            self.pivot(r, c);
            *pivots += 1;
        }
    }
}
