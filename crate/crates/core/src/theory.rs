//! Sample-complexity bounds for shrinking a region onto an axis-aligned
//! adversarial box `[0, σ]^d` by half-space cuts, with Monte Carlo checks.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::keyed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryInstance {
    pub d: usize,
    pub sigma: f64,
    pub omega_min: f64,
    pub m: usize,
}

impl TheoryInstance {
    pub fn new(d: usize, sigma: f64, omega_min: f64, m: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must lie in (0, 1), got {sigma}"
            )));
        }
        if !(omega_min > 0.0 && omega_min <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "omega_min must lie in (0, 1], got {omega_min}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("number of cuts must be positive".into()));
        }
        Ok(TheoryInstance { d, sigma, omega_min, m })
    }
}

/// Widest extra cut a slope error within the cosine bound can cause:
/// `σ·√((d−1)(1−ω²))/ω`.
pub fn delta_bound(inst: &TheoryInstance) -> Result<f64> {
    let w = inst.omega_min;
    if !(w > 0.0) {
        return Err(Error::InvalidParameter("omega_min must be positive".into()));
    }
    Ok(inst.sigma * ((inst.d as f64 - 1.0) * (1.0 - w * w)).sqrt() / w)
}

/// `max σ − p[κ]` over the points inside `[0, σ]^d`; `σ` when none is.
pub fn epsilon_i(dataset: &[Vec<f64>], sigma: f64, kappa: usize) -> f64 {
    dataset
        .iter()
        .filter(|p| p.iter().all(|&v| (0.0..=sigma).contains(&v)))
        .map(|p| sigma - p[kappa])
        .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))))
        .unwrap_or(sigma)
}

/// Expected uniform samples until one cut keeps a fraction `v` of the box.
pub fn expected_samples_single(inst: &TheoryInstance, v: f64) -> Result<f64> {
    let delta = delta_bound(inst)?;
    let room = 1.0 - delta / inst.sigma - v;
    if !(v >= 0.0) || !(room > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "v must lie in [0, {}), got {v}",
            1.0 - delta / inst.sigma
        )));
    }
    Ok(1.0 / (inst.sigma.powi(inst.d as i32) * room))
}

/// Expected samples per cut so that `m` cuts keep a fraction `V` overall.
pub fn expected_samples_region(inst: &TheoryInstance, big_v: f64) -> Result<f64> {
    let delta = delta_bound(inst)?;
    let per_cut = big_v.powf(1.0 / inst.m as f64);
    let room = 1.0 - delta / inst.sigma - per_cut;
    if !(big_v >= 0.0) || !(room > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "V must lie in [0, {}), got {big_v}",
            (1.0 - delta / inst.sigma).powi(inst.m as i32)
        )));
    }
    Ok(1.0 / (inst.sigma.powi(inst.d as i32) * room))
}

/// Expected samples for a cut to remove a fraction `1 − v` of the excess
/// width `u − σ` along one axis: `u/((u−σ)v)`.
pub fn expected_samples_progress(u: f64, sigma: f64, v: f64) -> Result<f64> {
    if !(u > sigma) {
        return Err(Error::InvalidParameter(format!(
            "u must exceed sigma, got u={u}, sigma={sigma}"
        )));
    }
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidParameter(format!("v must lie in (0, 1], got {v}")));
    }
    Ok(u / ((u - sigma) * v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl MonteCarlo {
    pub fn relative_error(&self, expected: f64) -> f64 {
        (self.mean - expected).abs() / expected
    }
}

fn summarize(counts: &[u64]) -> MonteCarlo {
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    MonteCarlo {
        trials: counts.len(),
        mean,
        std_err: (var / n).sqrt(),
    }
}

/// Draw until `hit` accepts a sample; returns the number of draws.
fn geometric<R: Rng>(rng: &mut R, mut hit: impl FnMut(&mut R) -> bool) -> u64 {
    let mut n = 1;
    while !hit(rng) {
        n += 1;
    }
    n
}

/// Uniform samples on `[0,1]^d` until one lands where it guarantees the cut
/// keeps a fraction `v`: `[0,σ]^{d−1} × [δ+vσ, σ]`. One count per trial.
pub fn simulate_single_cut(inst: &TheoryInstance, v: f64, trials: usize, seed: u64) -> Result<MonteCarlo> {
    expected_samples_single(inst, v)?;
    let delta = delta_bound(inst)?;
    let (sigma, d) = (inst.sigma, inst.d);
    let floor = delta + v * sigma;
    let counts: Vec<u64> = (0..trials.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = keyed(seed, t as u64);
            geometric(&mut rng, |r| {
                let last: f64 = r.random();
                let mut inside = last >= floor && last <= sigma;
                for _ in 1..d {
                    inside &= r.random::<f64>() <= sigma;
                }
                inside
            })
        })
        .collect();
    Ok(summarize(&counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainStep {
    pub iteration: usize,
    /// Extent of the region along the cut axis before this cut.
    pub u: f64,
    pub formula: f64,
    pub empirical: MonteCarlo,
    /// Mean samples per cut over iterations `0..=iteration`.
    pub running_mean: f64,
}

/// A sequence of axis-aligned cuts. At each step the region spans `[0,u]`
/// along the cut axis; samples are drawn uniformly until one lands in the
/// strip `[σ, σ+(u−σ)v]`, and the next region is cut at the strip's far end.
pub fn simulate_cut_chain(
    u0: f64,
    sigma: f64,
    v: f64,
    iterations: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<ChainStep>> {
    let mut u = u0;
    let mut steps = Vec::with_capacity(iterations);
    let mut total = 0.0;
    for it in 0..iterations {
        let formula = expected_samples_progress(u, sigma, v)?;
        let hi = sigma + (u - sigma) * v;
        let counts: Vec<u64> = (0..trials.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = keyed(seed.wrapping_add(it as u64), t as u64);
                geometric(&mut rng, |r| {
                    let x = r.random::<f64>() * u;
                    x >= sigma && x <= hi
                })
            })
            .collect();
        let empirical = summarize(&counts);
        total += empirical.mean;
        steps.push(ChainStep {
            iteration: it,
            u,
            formula,
            empirical,
            running_mean: total / (it + 1) as f64,
        });
        u = hi;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_cases() {
        let perfect = TheoryInstance::new(7, 0.3, 1.0, 1).unwrap();
        assert_eq!(delta_bound(&perfect).unwrap(), 0.0);
        let half = TheoryInstance::new(2, 0.5, 2f64.sqrt() / 2.0, 1).unwrap();
        assert!((delta_bound(&half).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Two-point problem in 2-D: over unit slopes within the cosine bound and
    /// point pairs in the box, the widest κ-gap on a common hyperplane.
    fn grid_delta(alpha: f64, sigma: f64, steps: usize) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=steps {
            let theta = alpha * i as f64 / steps as f64;
            let (a_k, a_o) = (theta.cos(), theta.sin());
            for j in 0..=steps {
                let p1 = sigma * j as f64 / steps as f64;
                for k in 0..=steps {
                    let p2 = sigma * k as f64 / steps as f64;
                    let gap = a_o * (p1 - p2) / a_k;
                    if gap <= sigma {
                        best = best.max(gap);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn delta_matches_grid_maximum() {
        let alpha: f64 = 0.6;
        let inst = TheoryInstance::new(2, 0.999, alpha.cos(), 1).unwrap();
        let formula = delta_bound(&inst).unwrap();
        assert!((formula - 0.999 * alpha.tan()).abs() < 1e-12);
        let coarse = grid_delta(alpha, 0.999, 20);
        let fine = grid_delta(alpha, 0.999, 200);
        assert!(coarse <= formula + 1e-12 && fine <= formula + 1e-12);
        assert!(formula - fine <= formula - coarse);
        assert!(formula - fine < 1e-9);
    }

    #[test]
    fn delta_monotone() {
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let w = i as f64 / 20.0;
            let d = delta_bound(&TheoryInstance::new(5, 0.5, w, 1).unwrap()).unwrap();
            assert!(d <= prev);
            prev = d;
        }
        let mut prev = -1.0;
        for d in 1..30 {
            let v = delta_bound(&TheoryInstance::new(d, 0.5, 0.9, 1).unwrap()).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn epsilon_cases() {
        assert_eq!(epsilon_i(&[vec![0.1, 0.5]], 0.5, 1), 0.0);
        assert_eq!(epsilon_i(&[vec![0.9, 0.9]], 0.5, 0), 0.5);
        let e = epsilon_i(&[vec![0.1, 0.1], vec![0.4, 0.2]], 0.5, 1);
        assert!((e - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_cut_value_and_pole() {
        let inst = TheoryInstance::new(3, 0.5, 1.0, 1).unwrap();
        assert!((expected_samples_single(&inst, 0.5).unwrap() - 16.0).abs() < 1e-12);
        assert!(expected_samples_single(&inst, 1.0).is_err());
        assert!(expected_samples_single(&inst, -0.1).is_err());
    }

    #[test]
    fn region_bound() {
        let inst = TheoryInstance::new(100, 0.8, 1.0, 100).unwrap();
        let a = expected_samples_region(&inst, 0.9).unwrap();
        let b = expected_samples_region(&inst, 0.95).unwrap();
        assert!(a > 4.6e12 && a < 4.8e12, "{a}");
        assert!(b > 9.5e12 && b < 9.7e12, "{b}");
        let one = TheoryInstance::new(4, 0.6, 0.95, 1).unwrap();
        let r = expected_samples_region(&one, 0.3).unwrap();
        let s = expected_samples_single(&one, 0.3).unwrap();
        assert!((r - s).abs() < 1e-9 * s);
        assert!(expected_samples_region(&inst, 1.0).is_err());
    }

    #[test]
    fn region_bound_monotone() {
        let inst = TheoryInstance::new(10, 0.8, 1.0, 10).unwrap();
        let mut prev = 0.0;
        for i in 0..10 {
            let v = expected_samples_region(&inst, i as f64 / 10.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 0.0;
        for d in 1..20 {
            let v = expected_samples_region(&TheoryInstance::new(d, 0.8, 1.0, 10).unwrap(), 0.5).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn progress_value_and_pole() {
        assert!((expected_samples_progress(1.0, 0.5, 0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!(expected_samples_progress(0.5, 0.5, 0.5).is_err());
        assert!(expected_samples_progress(0.5000001, 0.5, 0.5).unwrap() > 1e6);
    }

    #[test]
    fn chain_reproducible_and_harder() {
        let a = simulate_cut_chain(1.0, 0.5, 0.5, 3, 200, 9).unwrap();
        let b = simulate_cut_chain(1.0, 0.5, 0.5, 3, 200, 9).unwrap();
        assert_eq!(a, b);
        assert!(a[0].formula < a[1].formula && a[1].formula < a[2].formula);
        assert!((a[1].u - 0.75).abs() < 1e-12);
    }
}
