//! The region synthesis loop: start from the bounding box of many attacks,
//! cut away counterexamples with fitted half-spaces until the relaxation
//! verifies, and shrink toward the attacks' median if it never does.

use std::time::Instant;

use log::{debug, info};
use rand::Rng;

use crate::attack::{collect_attacks_with, initial_region, AttackConfig, AttackMethod};
use crate::classifier::{fit_separator, ClassifierConfig, LinearSeparator};
use crate::error::{Error, Result};
use crate::geometry::{BoxApprox, Polyhedron};
use crate::network::{LabeledQuery, Network};
use crate::relaxation::{verify_region, worst_abstract_counterexample, RelaxationKind, RelaxationState, Verification};
use crate::rng::keyed;
use crate::sampling::{
    far_point, gaussian_sample, worst_concrete_counterexample, HistorySet, SampleMode, SamplerConfig,
};
use crate::scalar::Scalar;
use crate::work::WorkCount;

/// How the worst-case counterexample of a step is found: Frank-Wolfe on the
/// network (concrete counterexamples) or the relaxation's LP witness
/// (abstract counterexamples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FrankWolfe,
    Lp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FrankWolfe => "fw",
            Method::Lp => "lp",
        }
    }

    fn mode(self) -> SampleMode {
        match self {
            Method::FrankWolfe => SampleMode::Concrete,
            Method::Lp => SampleMode::Abstract,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub s_plus: usize,
    pub s_minus: usize,
    pub t_max: usize,
    /// Iterations between method re-evaluations.
    pub period: usize,
    pub history: usize,
    pub relaxation: RelaxationKind,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub classifier: ClassifierConfig,
    /// Steps per attack and step length (`None` means ε/10).
    pub attack_steps: usize,
    pub attack_step: Option<f64>,
    /// Consecutive low-gain steps after which the loop gives up cutting.
    pub stall_steps: usize,
    pub stall_gain: f64,
    pub shrink_steps: usize,
    pub shrink_tol: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            s_plus: 400,
            s_minus: 256,
            t_max: 20,
            period: 5,
            history: 5,
            relaxation: RelaxationKind::Triangle,
            seed: 0,
            sampler: SamplerConfig::default(),
            classifier: ClassifierConfig::default(),
            attack_steps: 40,
            attack_step: None,
            stall_steps: 3,
            stall_gain: 1e-6,
            shrink_steps: 12,
            shrink_tol: 1e-3,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::InvalidParameter("period must be at least 1".into()));
        }
        if self.s_plus == 0 || self.s_minus == 0 {
            return Err(Error::InvalidParameter("sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the synthesis log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub t: usize,
    pub method: Option<Method>,
    pub margin: f64,
    pub negatives: usize,
    pub positives: usize,
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct RegionReport<S> {
    pub region: Polyhedron<S>,
    pub verified: bool,
    pub margin: S,
    pub cuts: usize,
    pub trace: Vec<IterationLog>,
    pub over: Option<BoxApprox<S>>,
    pub under: Option<BoxApprox<S>>,
    /// Shrink factor applied at the end, if shrinking ran and succeeded.
    pub theta: Option<f64>,
    pub shrunk: bool,
    pub initial_region: Polyhedron<S>,
    pub attacks: Vec<Vec<S>>,
    pub relaxation: RelaxationKind,
    pub work_units: f64,
    pub wall_seconds: f64,
}

/// Result of one cutting step.
#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    pub region: Polyhedron<S>,
    pub progress: bool,
    pub negatives: usize,
    pub separator: Option<LinearSeparator<S>>,
    /// Method actually used (FW falls back to LP when it finds nothing).
    pub method: Method,
}

/// Everything a step needs to know about the current region.
pub struct StepContext<'a, S> {
    pub net: &'a Network<S>,
    pub target: usize,
    pub state: &'a RelaxationState<S>,
    pub verification: &'a Verification<S>,
    pub positives: &'a [Vec<S>],
    pub cfg: &'a SynthesisConfig,
}

/// Sample counterexamples with `method`, fit a separator against the
/// adversarial examples and intersect it with the current region.
pub fn generate_region_step<S: Scalar>(
    ctx: &StepContext<'_, S>,
    method: Method,
    history: &mut HistorySet<S>,
    seed: u64,
) -> Result<StepOutcome<S>> {
    let region = ctx.state.region();
    let unchanged = |method| StepOutcome {
        region: region.clone(),
        progress: false,
        negatives: 0,
        separator: None,
        method,
    };
    let record = &ctx.verification.record;
    let (method, x_star) = match method {
        Method::FrankWolfe => match worst_concrete_counterexample(ctx.net, region, ctx.target, seed)? {
            Some(x) => (Method::FrankWolfe, x),
            None => match worst_abstract_counterexample(record).ok() {
                Some(x) => (Method::Lp, x),
                None => return Ok(unchanged(Method::FrankWolfe)),
            },
        },
        Method::Lp => match worst_abstract_counterexample(record).ok() {
            Some(x) => (Method::Lp, x),
            None => return Ok(unchanged(Method::Lp)),
        },
    };
    let (x_plus, _) = far_point(region, &x_star)?;
    let batch = gaussian_sample(
        ctx.net,
        ctx.state,
        record,
        &x_star,
        &x_plus,
        ctx.cfg.s_minus,
        method.mode(),
        &ctx.cfg.sampler,
        seed,
    )?;
    if batch.is_empty() {
        return Ok(unchanged(method));
    }
    history.push(batch.points.clone());
    let negatives = history.filtered(region);
    let separator = fit_separator(ctx.positives, &negatives, &ctx.cfg.classifier)?;
    let removed = batch.points.iter().filter(|p| separator.removes(p)).count();
    if removed == 0 {
        return Ok(StepOutcome {
            negatives: negatives.len(),
            separator: Some(separator),
            ..unchanged(method)
        });
    }
    let next = match region.intersect(separator.w.clone(), separator.c) {
        Ok(p) => p,
        Err(Error::ZeroNormal) => return Ok(unchanged(method)),
        Err(e) => return Err(e),
    };
    Ok(StepOutcome {
        region: next,
        progress: true,
        negatives: negatives.len(),
        separator: Some(separator),
        method,
    })
}

/// Relaxation state and verification of a candidate region, or `None` if
/// the region turned out empty.
fn assess<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    target: usize,
    kind: RelaxationKind,
    prev: Option<&RelaxationState<S>>,
) -> Result<Option<(RelaxationState<S>, Verification<S>)>> {
    let built = RelaxationState::build(net, region, kind, prev).and_then(|s| {
        let v = s.verify(net, target)?;
        Ok((s, v))
    });
    match built {
        Ok(pair) => Ok(Some(pair)),
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Keep the previous method except every `period` iterations, when one
/// trial step with each method is scored by margin gain per unit of work.
/// The higher score wins; ties keep Frank-Wolfe. Trial regions are dropped.
pub fn choose_method<S: Scalar>(
    t: usize,
    previous: Method,
    ctx: &StepContext<'_, S>,
    history: &HistorySet<S>,
    seed: u64,
) -> Result<Method> {
    if !t.is_multiple_of(ctx.cfg.period.max(1)) {
        return Ok(previous);
    }
    let base = ctx.verification.margin.to_f64_lossy();
    let score = |method| -> Result<f64> {
        let start = WorkCount::now();
        let mut h = history.clone();
        let step = generate_region_step(ctx, method, &mut h, seed)?;
        let gain = if step.progress {
            match assess(ctx.net, &step.region, ctx.target, ctx.cfg.relaxation, Some(ctx.state))? {
                Some((_, v)) => v.margin.to_f64_lossy() - base,
                None => 0.0,
            }
        } else {
            0.0
        };
        Ok(gain / WorkCount::now().units_since(&start))
    };
    let fw = score(Method::FrankWolfe)?;
    let lp = score(Method::Lp)?;
    debug!("method scores at t={t}: fw={fw:.3e} lp={lp:.3e}");
    Ok(if lp > fw { Method::Lp } else { Method::FrankWolfe })
}

fn step_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Coordinate-wise median.
fn median<S: Scalar>(points: &[Vec<S>]) -> Vec<S> {
    let d = points[0].len();
    (0..d)
        .map(|j| {
            let mut col: Vec<S> = points.iter().map(|p| p[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / S::lit(2.0)
            }
        })
        .collect()
}

fn nearest<'a, S: Scalar>(points: &'a [Vec<S>], x: &[S]) -> &'a Vec<S> {
    let dist = |p: &Vec<S>| p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>();
    points
        .iter()
        .min_by(|a, b| dist(a).partial_cmp(&dist(b)).expect("finite distances"))
        .expect("nonempty")
}

#[derive(Debug, Clone)]
pub struct Shrunk<S> {
    pub region: Polyhedron<S>,
    pub theta: f64,
    pub center: Vec<S>,
    pub verification: Verification<S>,
}

#[derive(Debug, Clone)]
pub struct ShrinkConfig {
    pub steps: usize,
    pub tol: f64,
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        ShrinkConfig { steps: 12, tol: 1e-3 }
    }
}

fn shrink_about<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    center: &[S],
    target: usize,
    kind: RelaxationKind,
    cfg: &ShrinkConfig,
) -> Result<Option<Shrunk<S>>> {
    let at = |theta: f64| -> Result<Option<(Polyhedron<S>, Verification<S>)>> {
        let p = region.shrink_toward(center, S::lit(theta))?;
        Ok(assess(net, &p, target, kind, None)?.map(|(_, v)| (p, v)))
    };
    let Some((mut best, mut best_v)) = at(1.0)?.filter(|(_, v)| v.verified) else {
        return Ok(None);
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..cfg.steps {
        if hi - lo <= cfg.tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match at(mid)? {
            Some((p, v)) if v.verified => {
                hi = mid;
                best = p;
                best_v = v;
            }
            _ => lo = mid,
        }
    }
    Ok(Some(Shrunk {
        region: best,
        theta: hi,
        center: center.to_vec(),
        verification: best_v,
    }))
}

/// Shrink `region` uniformly toward the median of `positives` and binary
/// search the smallest shrink factor that verifies. The nearest positive is
/// tried as a second center if the median fails. `Ok(None)` means even the
/// fully collapsed region does not verify.
pub fn shrink_region<S: Scalar>(
    net: &Network<S>,
    region: &Polyhedron<S>,
    positives: &[Vec<S>],
    target: usize,
    kind: RelaxationKind,
    cfg: &ShrinkConfig,
) -> Result<Option<Shrunk<S>>> {
    if positives.is_empty() {
        return Err(Error::NoAdversarialExamples);
    }
    let med = median(positives);
    let fallback = nearest(positives, &med).clone();
    let mut centers = Vec::new();
    if region.contains(&med) && net.is_adversarial(&med, target)? {
        centers.push(med);
    }
    if region.contains(&fallback) && centers.first() != Some(&fallback) {
        if !net.is_adversarial(&fallback, target)? {
            return Err(Error::CenterNotAdversarial);
        }
        centers.push(fallback);
    }
    if centers.is_empty() {
        return Err(Error::CenterNotAdversarial);
    }
    for c in &centers {
        if let Some(s) = shrink_about(net, region, c, target, kind, cfg)? {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

fn finish<S: Scalar>(mut report: RegionReport<S>, start: Instant, work: WorkCount) -> Result<RegionReport<S>> {
    report.over = report.region.overapprox_box().ok();
    report.under = report.region.underapprox_box().ok();
    report.work_units = WorkCount::now().units_since(&work);
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Run the whole pipeline for one query.
pub fn synthesize<S: Scalar>(net: &Network<S>, q: &LabeledQuery<S>, cfg: &SynthesisConfig) -> Result<RegionReport<S>> {
    let start = Instant::now();
    let work = WorkCount::now();
    cfg.validate()?;
    q.validate(net)?;
    let target = q.y_t;
    let kind = cfg.relaxation;

    let template = AttackConfig {
        steps: cfg.attack_steps,
        step_size: cfg.attack_step,
        ..AttackConfig::new(AttackMethod::Pgd, cfg.seed)
    };
    let attacks = collect_attacks_with(net, q, cfg.s_plus, &template)?;
    if attacks.is_empty() {
        return Err(Error::NoAdversarialExamples);
    }
    info!("collected {} distinct adversarial examples", attacks.len());
    let p0 = initial_region(&attacks, q)?;
    let (mut state, mut ver) = assess(net, &p0, target, kind, None)?.ok_or(Error::Infeasible)?;
    let mut region = p0.clone();
    let mut report = RegionReport {
        region: p0.clone(),
        verified: ver.verified,
        margin: ver.margin,
        cuts: 0,
        trace: vec![IterationLog {
            t: 0,
            method: None,
            margin: ver.margin.to_f64_lossy(),
            negatives: 0,
            positives: attacks.len(),
            progress: true,
        }],
        over: None,
        under: None,
        theta: None,
        shrunk: false,
        initial_region: p0,
        attacks: attacks.clone(),
        relaxation: kind,
        work_units: 0.0,
        wall_seconds: 0.0,
    };
    info!(
        "t=0 margin={:.6} positives={}",
        ver.margin.to_f64_lossy(),
        attacks.len()
    );
    if ver.verified {
        return finish(report, start, work);
    }

    let mut method = if keyed(cfg.seed, u64::MAX).random_bool(0.5) {
        Method::FrankWolfe
    } else {
        Method::Lp
    };
    let mut history = HistorySet::new(cfg.history);
    let mut stall = 0;
    for t in 1..=cfg.t_max {
        let positives: Vec<Vec<S>> = attacks.iter().filter(|p| region.contains(p)).cloned().collect();
        if positives.is_empty() {
            break;
        }
        let seed = step_seed(cfg.seed, t);
        let ctx = StepContext {
            net,
            target,
            state: &state,
            verification: &ver,
            positives: &positives,
            cfg,
        };
        method = choose_method(t, method, &ctx, &history, seed)?;
        let step = generate_region_step(&ctx, method, &mut history, seed)?;
        let mut log = IterationLog {
            t,
            method: Some(step.method),
            margin: ver.margin.to_f64_lossy(),
            negatives: step.negatives,
            positives: positives.len(),
            progress: false,
        };
        let mut gain = 0.0;
        if step.progress {
            if let Some((s, v)) = assess(net, &step.region, target, kind, Some(&state))? {
                gain = (v.margin - ver.margin).to_f64_lossy();
                region = step.region;
                state = s;
                ver = v;
                report.cuts += 1;
                log.margin = ver.margin.to_f64_lossy();
                log.progress = true;
            }
        }
        info!(
            "t={} method={} margin={:.6} negatives={} positives={}",
            t,
            step.method.name(),
            log.margin,
            log.negatives,
            log.positives
        );
        report.trace.push(log);
        if ver.verified {
            // Confirm from a cold start before accepting.
            let cold = verify_region(net, &region, target, kind)?;
            if cold.verified {
                report.region = region;
                report.verified = true;
                report.margin = cold.margin;
                return finish(report, start, work);
            }
        }
        stall = if gain < cfg.stall_gain { stall + 1 } else { 0 };
        if stall >= cfg.stall_steps {
            info!("no progress for {stall} steps; shrinking");
            break;
        }
    }

    let positives: Vec<Vec<S>> = attacks.iter().filter(|p| region.contains(p)).cloned().collect();
    let shrink_cfg = ShrinkConfig {
        steps: cfg.shrink_steps,
        tol: cfg.shrink_tol,
    };
    let shrunk = if positives.is_empty() {
        None
    } else {
        match shrink_region(net, &region, &positives, target, kind, &shrink_cfg) {
            Ok(s) => s,
            Err(Error::CenterNotAdversarial) => None,
            Err(e) => return Err(e),
        }
    };
    report.shrunk = true;
    match shrunk {
        Some(s) => {
            info!(
                "shrunk by theta={:.4}; margin={:.6}",
                s.theta,
                s.verification.margin.to_f64_lossy()
            );
            report.region = s.region;
            report.verified = true;
            report.margin = s.verification.margin;
            report.theta = Some(s.theta);
        }
        None => {
            info!("shrinking failed; region stays unverified");
            report.region = region;
            report.verified = false;
            report.margin = ver.margin;
        }
    }
    finish(report, start, work)
}
