//! Weighted logistic regression for the cutting hyperplane.
//!
//! Counterexamples are the positive class of the model and end up on the
//! side `w·x > c` that the cut removes; adversarial examples stay on the kept
//! side `w·x ≤ c`.

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSeparator<S> {
    pub w: Vec<S>,
    pub c: S,
}

impl<S: Scalar> LinearSeparator<S> {
    /// True iff the cut removes `x`.
    pub fn removes(&self, x: &[S]) -> bool {
        dot(&self.w, x) > self.c
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    /// Weight of each counterexample relative to an adversarial example.
    pub weight_ratio: f64,
    pub l2: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            weight_ratio: 100.0,
            l2: 1e-6,
            max_iters: 5000,
            grad_tol: 1e-6,
        }
    }
}

struct Problem {
    /// Standardized features with a trailing 1 for the bias.
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
    weights: Vec<f64>,
    l2: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Problem {
    fn loss_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = theta.len();
        let total: f64 = self.weights.iter().sum();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for ((row, &y), &wt) in self.rows.iter().zip(&self.labels).zip(&self.weights) {
            let z: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
            loss += wt * (softplus(z) - y * z);
            let r = wt * (sigmoid(z) - y);
            for (g, &a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        loss /= total;
        for g in &mut grad {
            *g /= total;
        }
        for k in 0..n - 1 {
            loss += 0.5 * self.l2 * theta[k] * theta[k];
            grad[k] += self.l2 * theta[k];
        }
        (loss, grad)
    }

    fn fit(&self, cfg: &ClassifierConfig) -> Vec<f64> {
        let n = self.rows[0].len();
        let mut theta = vec![0.0; n];
        let (mut loss, mut grad) = self.loss_grad(&theta);
        let mut step = 1.0;
        for _ in 0..cfg.max_iters {
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2.sqrt() <= cfg.grad_tol {
                break;
            }
            step *= 2.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
                let (l, g) = self.loss_grad(&cand);
                if l <= loss - 0.5 * step * gnorm2 {
                    theta = cand;
                    loss = l;
                    grad = g;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    return theta;
                }
            }
        }
        theta
    }
}

/// Fit a hyperplane keeping `positives` (adversarial examples) and removing
/// `negatives` (counterexamples).
pub fn fit_separator<S: Scalar>(
    positives: &[Vec<S>],
    negatives: &[Vec<S>],
    cfg: &ClassifierConfig,
) -> Result<LinearSeparator<S>> {
    if positives.is_empty() {
        return Err(Error::EmptyDataset("adversarial examples"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyDataset("counterexamples"));
    }
    let d = positives[0].len();
    if let Some(bad) = positives.iter().chain(negatives).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let to64 = |p: &Vec<S>| p.iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>();
    let pos: Vec<Vec<f64>> = positives.iter().map(to64).collect();
    let neg: Vec<Vec<f64>> = negatives.iter().map(to64).collect();
    let all = pos.iter().chain(&neg);
    let count = (pos.len() + neg.len()) as f64;

    let mut mean = vec![0.0; d];
    for p in all.clone() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / count;
        }
    }
    let mut scale = vec![0.0; d];
    for p in all.clone() {
        for ((s, v), m) in scale.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }

    let standardize = |p: &Vec<f64>| {
        let mut row: Vec<f64> = p.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect();
        row.push(1.0);
        row
    };
    let problem = Problem {
        rows: pos.iter().chain(&neg).map(standardize).collect(),
        labels: pos.iter().map(|_| 0.0).chain(neg.iter().map(|_| 1.0)).collect(),
        weights: pos
            .iter()
            .map(|_| 1.0)
            .chain(neg.iter().map(|_| cfg.weight_ratio))
            .collect(),
        l2: cfg.l2,
    };
    let theta = problem.fit(cfg);

    let mut w: Vec<f64> = theta[..d].iter().zip(&scale).map(|(t, s)| t / s).collect();
    let mut c = theta[..d]
        .iter()
        .zip(&mean)
        .zip(&scale)
        .map(|((t, m), s)| t * m / s)
        .sum::<f64>()
        - theta[d];

    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !c.is_finite() {
        let centroid = |set: &[Vec<f64>]| {
            let mut m = vec![0.0; d];
            for p in set {
                for (a, v) in m.iter_mut().zip(p) {
                    *a += v / set.len() as f64;
                }
            }
            m
        };
        let (mp, mn) = (centroid(&pos), centroid(&neg));
        w = mn.iter().zip(&mp).map(|(a, b)| a - b).collect();
        if w.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-12 {
            let mid: Vec<f64> = mn.iter().zip(&mp).map(|(a, b)| 0.5 * (a + b)).collect();
            c = w.iter().zip(&mid).map(|(a, b)| a * b).sum();
        } else {
            w = vec![0.0; d];
            w[0] = 1.0;
            c = mp[0];
        }
    }

    let proj = |p: &Vec<f64>| w.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
    let max_pos = pos.iter().map(proj).fold(f64::NEG_INFINITY, f64::max);
    let min_neg = neg.iter().map(proj).fold(f64::INFINITY, f64::min);
    if max_pos < min_neg && !(c >= max_pos && c < min_neg) {
        c = 0.5 * (max_pos + min_neg);
    }

    Ok(LinearSeparator {
        w: w.into_iter().map(S::lit).collect(),
        c: S::lit(c),
    })
}
