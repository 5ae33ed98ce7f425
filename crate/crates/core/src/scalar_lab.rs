//! One-dimensional constrained problems where everything is computable:
//! the distance to the feasible region, the shortest-path direction, and
//! whole trajectories of both the constraint guided update and hinge-penalty
//! descent.
//!
//! The reference instance is the degree-8 polynomial
//! `L(w) = (w−2)(w−4)(w−3)(w−1.5)(w−1)(w−2.75)(w−5)² + 7` under the
//! constraint `(w−1)(w−2)(w−3)(w−4) ≤ 0`, whose feasible region is
//! `[1, 2] ∪ [3, 4]`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Result};
use crate::optim::{lemma1_next_eta, StepSchedule};

/// Interval on which the reference problem is studied.
pub const WORKING_INTERVAL: (f64, f64) = (0.5, 5.5);

/// Trajectory limits closer than this are the same attractor.
pub const MERGE_TOLERANCE: f64 = 1e-3;

/// `|w_{j+1} − w_j|` below this for [`STILL_STEPS`] consecutive steps counts as converged.
pub const STILL_THRESHOLD: f64 = 1e-9;
pub const STILL_STEPS: usize = 10;

/// `|w|` beyond this counts as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Offset used to probe whether a limit is reached only from itself.
pub const PROBE_OFFSET: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, w: f64) -> bool {
        self.lo <= w && w <= self.hi
    }
}

/// Union of sorted, disjoint, closed intervals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibleRegion {
    intervals: Vec<Interval>,
}

impl FeasibleRegion {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(config("feasible region needs at least one interval"));
        }
        for iv in &intervals {
            if !(iv.lo <= iv.hi) {
                return Err(config(format!("empty interval [{}, {}]", iv.lo, iv.hi)));
            }
        }
        for pair in intervals.windows(2) {
            if !(pair[0].hi < pair[1].lo) {
                return Err(config("intervals must be sorted and disjoint"));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, w: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(w))
    }

    /// Closest feasible point; ties go to the lower interval.
    pub fn nearest(&self, w: f64) -> f64 {
        let mut best = f64::NAN;
        let mut best_d = f64::INFINITY;
        for iv in &self.intervals {
            let y = w.clamp(iv.lo, iv.hi);
            let d = (w - y).abs();
            // strict comparison keeps the earlier (lower) interval on ties
            if d < best_d {
                best_d = d;
                best = y;
            }
        }
        best
    }

    pub fn distance(&self, w: f64) -> f64 {
        (w - self.nearest(w)).abs()
    }
}

/// Shortest-path direction from the feasible region to `w`, and the distance.
///
/// The direction is `sign(w − nearest)`: `0` inside, `+1` right of the
/// nearest feasible point, `−1` left of it.
pub fn fr_dir_and_distance(fr: &FeasibleRegion, w: f64) -> (f64, f64) {
    let y = fr.nearest(w);
    let d = (w - y).abs();
    let dir = if d == 0.0 { 0.0 } else { (w - y).signum() };
    (dir, d)
}

/// How CGGD picks its direction outside the feasible region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub enum DirectionRule {
    /// Toward the nearest feasible point.
    #[default]
    ShortestPath,
    /// Toward interval `target` of the region regardless of distance.
    TowardInterval(usize),
}

impl DirectionRule {
    pub fn direction(&self, fr: &FeasibleRegion, w: f64) -> f64 {
        match *self {
            Self::ShortestPath => fr_dir_and_distance(fr, w).0,
            Self::TowardInterval(i) => {
                if fr.contains(w) {
                    return 0.0;
                }
                let iv = fr.intervals[i.min(fr.intervals.len() - 1)];
                if w < iv.lo {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Loss, its derivative, a feasible region, and a constraint function with
/// `constraint_value(w) ≤ 0` on the region (used by the hinge penalty).
#[derive(Clone)]
pub struct ScalarProblem {
    pub name: String,
    pub loss: ScalarFn,
    pub loss_grad: ScalarFn,
    pub fr: FeasibleRegion,
    pub constraint_value: ScalarFn,
    pub constraint_grad: ScalarFn,
}

impl fmt::Debug for ScalarProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarProblem")
            .field("name", &self.name)
            .field("fr", &self.fr)
            .finish_non_exhaustive()
    }
}

/// `Π (w − r_i)` and its derivative.
fn root_product(roots: &'static [f64]) -> (ScalarFn, ScalarFn) {
    let value = Arc::new(move |w: f64| roots.iter().map(|r| w - r).product());
    let grad = Arc::new(move |w: f64| {
        (0..roots.len())
            .map(|i| {
                roots
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, r)| w - r)
                    .product::<f64>()
            })
            .sum()
    });
    (value, grad)
}

const LOSS_ROOTS: [f64; 8] = [2.0, 4.0, 3.0, 1.5, 1.0, 2.75, 5.0, 5.0];
const CONSTRAINT_ROOTS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// The reference instance on `[1, 2] ∪ [3, 4]`.
pub fn polynomial_problem() -> ScalarProblem {
    let (poly, poly_grad) = root_product(&LOSS_ROOTS);
    let (cv, cg) = root_product(&CONSTRAINT_ROOTS);
    ScalarProblem {
        name: "polynomial".into(),
        loss: Arc::new(move |w| poly(w) + 7.0),
        loss_grad: poly_grad,
        fr: FeasibleRegion::new(vec![Interval::new(1.0, 2.0), Interval::new(3.0, 4.0)])
            .expect("static intervals"),
        constraint_value: cv,
        constraint_grad: cg,
    }
}

/// `L(w) = w²` on `[1, 2]`; `L′` is exactly 2-Lipschitz.
pub fn quadratic_problem() -> ScalarProblem {
    ScalarProblem {
        name: "quadratic".into(),
        loss: Arc::new(|w| w * w),
        loss_grad: Arc::new(|w| 2.0 * w),
        fr: FeasibleRegion::new(vec![Interval::new(1.0, 2.0)]).expect("static interval"),
        constraint_value: Arc::new(|w| (w - 1.0) * (w - 2.0)),
        constraint_grad: Arc::new(|w| 2.0 * w - 3.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarMethod {
    Cggd,
    Fuzzy,
}

impl fmt::Display for ScalarMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cggd => "cggd",
            Self::Fuzzy => "fuzzy",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalarSettings {
    pub rescale_factor: f64,
    pub epsilon: f64,
    /// Hinge penalty weight for [`ScalarMethod::Fuzzy`].
    pub lambda: f64,
    pub rule: DirectionRule,
    pub max_steps: usize,
    /// Restore the initial `η` whenever the iterate is feasible. The
    /// step-size recurrence only constrains steps taken outside the region.
    pub restore_eta_in_fr: bool,
}

impl Default for ScalarSettings {
    fn default() -> Self {
        Self {
            rescale_factor: 1.5,
            epsilon: 0.5,
            lambda: 1.0,
            rule: DirectionRule::ShortestPath,
            max_steps: 100_000,
            restore_eta_in_fr: true,
        }
    }
}

/// Update direction without the step size: the iteration is `w ← w − η · u(w)`.
pub fn update_value(
    method: ScalarMethod,
    problem: &ScalarProblem,
    settings: &ScalarSettings,
    w: f64,
) -> f64 {
    let g = (problem.loss_grad)(w);
    match method {
        ScalarMethod::Cggd => {
            let dir = settings.rule.direction(&problem.fr, w);
            g + settings.rescale_factor * dir * settings.epsilon.max(g.abs())
        }
        ScalarMethod::Fuzzy => {
            let penalty = if (problem.constraint_value)(w) > 0.0 {
                settings.lambda * (problem.constraint_grad)(w)
            } else {
                0.0
            };
            g + penalty
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    pub converged: bool,
    pub diverged: bool,
    pub final_eta: f64,
}

/// Iterates one method from `w0`.
///
/// With a [`StepSchedule::Lemma1`] schedule (CGGD only), `η` is replaced by
/// [`lemma1_next_eta`] whenever the new point lies outside the region at
/// distance below `1.5 · η · max{ε, |L′|}`, i.e. when the next step could
/// overshoot. Stops on convergence, divergence, or after `max_steps`.
pub fn run_scalar(
    method: ScalarMethod,
    problem: &ScalarProblem,
    w0: f64,
    schedule: &StepSchedule,
    settings: &ScalarSettings,
) -> Result<Trajectory> {
    schedule.validate()?;
    if settings.max_steps == 0 {
        return Err(config("at least one step is required"));
    }
    let mut w = w0;
    let mut eta = schedule.initial_eta();
    let mut still = 0;
    let mut steps = 0;
    let mut converged = false;
    let mut diverged = false;
    for step in 0..settings.max_steps {
        let eta_now = match *schedule {
            StepSchedule::ExponentialDecay { eta0, gamma } => eta0 * gamma.powi(step as i32),
            _ => eta,
        };
        let next = w - eta_now * update_value(method, problem, settings, w);
        steps = step + 1;
        if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
            diverged = true;
            w = next;
            break;
        }
        if let (StepSchedule::Lemma1 { lipschitz, epsilon, .. }, ScalarMethod::Cggd) =
            (schedule, method)
        {
            let (dir, d) = fr_dir_and_distance(&problem.fr, next);
            let g_next = (problem.loss_grad)(next).abs();
            if dir != 0.0 && d < 1.5 * eta * epsilon.max(g_next) {
                let g_curr = (problem.loss_grad)(w).abs();
                eta = lemma1_next_eta(eta, *lipschitz, *epsilon, g_next, g_curr)?;
            } else if dir == 0.0 && settings.restore_eta_in_fr {
                eta = schedule.initial_eta();
            }
        }
        if (next - w).abs() < STILL_THRESHOLD {
            still += 1;
        } else {
            still = 0;
        }
        w = next;
        if still >= STILL_STEPS {
            converged = true;
            break;
        }
    }
    Ok(Trajectory {
        start: w0,
        end: w,
        steps,
        converged,
        diverged,
        final_eta: eta,
    })
}

/// `1.1 × max |ΔL′/Δw|` over `points` equally spaced samples of `[lo, hi]`.
pub fn estimate_lipschitz(problem: &ScalarProblem, lo: f64, hi: f64, points: usize) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let mut prev = (problem.loss_grad)(lo);
    let mut max: f64 = 0.0;
    for i in 1..points {
        let g = (problem.loss_grad)(lo + step * i as f64);
        max = max.max(((g - prev) / step).abs());
        prev = g;
    }
    1.1 * max
}

/// The step schedule used for CGGD on the reference problem.
pub fn default_cggd_schedule(problem: &ScalarProblem, settings: &ScalarSettings) -> StepSchedule {
    StepSchedule::Lemma1 {
        eta0: 1e-4,
        lipschitz: estimate_lipschitz(problem, WORKING_INTERVAL.0, WORKING_INTERVAL.1, 100_000),
        epsilon: settings.epsilon,
    }
}

/// The step schedule used for hinge-penalty descent on the reference problem.
pub fn default_fuzzy_schedule() -> StepSchedule {
    StepSchedule::Fixed { eta: 1e-4 }
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Attractor {
    pub location: f64,
    /// Reached from some start other than itself.
    pub stable: bool,
    pub in_fr_closure: bool,
    pub basin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttractorReport {
    pub method: ScalarMethod,
    pub settings: ScalarSettings,
    pub attractors: Vec<Attractor>,
    /// Locations of attractors outside the closure of the feasible region.
    pub non_fr_attractors: Vec<f64>,
    pub diverged: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl AttractorReport {
    pub fn stable_locations(&self) -> Vec<f64> {
        self.attractors
            .iter()
            .filter(|a| a.stable)
            .map(|a| a.location)
            .collect()
    }
}

/// Runs every grid start and merges the limits into attractors.
///
/// Limits within [`MERGE_TOLERANCE`] of an existing attractor join it; each
/// attractor's location is the mean of its members. Attractors are sorted by
/// location.
pub fn classify_attractors(
    method: ScalarMethod,
    problem: &ScalarProblem,
    grid: &[f64],
    schedule: &StepSchedule,
    settings: &ScalarSettings,
) -> Result<AttractorReport> {
    if grid.is_empty() {
        return Err(config("attractor grid is empty"));
    }
    // collect keeps grid order, so merging below is deterministic
    let trajectories = grid
        .par_iter()
        .map(|&w0| run_scalar(method, problem, w0, schedule, settings))
        .collect::<Result<Vec<_>>>()?;

    struct Cluster {
        sum: f64,
        members: Vec<(f64, f64)>,
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut diverged = Vec::new();
    for t in &trajectories {
        if t.diverged {
            diverged.push(t.start);
            continue;
        }
        let found = clusters
            .iter_mut()
            .find(|c| (c.sum / c.members.len() as f64 - t.end).abs() < MERGE_TOLERANCE);
        match found {
            Some(c) => {
                c.sum += t.end;
                c.members.push((t.start, t.end));
            }
            None => clusters.push(Cluster {
                sum: t.end,
                members: vec![(t.start, t.end)],
            }),
        }
    }
    let mut attractors: Vec<Attractor> = clusters
        .into_iter()
        .map(|c| {
            let location = c.sum / c.members.len() as f64;
            let stable = c.members.iter().any(|&(s, e)| (s - e).abs() > STILL_THRESHOLD);
            let fr = &problem.fr;
            Attractor {
                location,
                stable,
                in_fr_closure: fr.distance(location) <= MERGE_TOLERANCE,
                basin: c.members.into_iter().map(|(s, _)| s).collect(),
            }
        })
        .collect();
    attractors.sort_by(|a, b| a.location.total_cmp(&b.location));
    let non_fr_attractors = attractors
        .iter()
        .filter(|a| !a.in_fr_closure)
        .map(|a| a.location)
        .collect();
    Ok(AttractorReport {
        method,
        settings: settings.clone(),
        attractors,
        non_fr_attractors,
        diverged,
        trajectories,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointProbe {
    pub point: f64,
    pub exact_end: f64,
    pub left_end: f64,
    pub right_end: f64,
    /// The exact start stays put.
    pub fixed: bool,
    /// Fixed, and neither perturbed start comes back.
    pub unstable: bool,
}

/// Starts exactly at `point` and at `point ± PROBE_OFFSET`.
pub fn probe_point(
    method: ScalarMethod,
    problem: &ScalarProblem,
    point: f64,
    schedule: &StepSchedule,
    settings: &ScalarSettings,
) -> Result<PointProbe> {
    let end = |w0| run_scalar(method, problem, w0, schedule, settings).map(|t| t.end);
    let exact_end = end(point)?;
    let left_end = end(point - PROBE_OFFSET)?;
    let right_end = end(point + PROBE_OFFSET)?;
    let near = |e: f64| (e - point).abs() < MERGE_TOLERANCE;
    let fixed = near(exact_end);
    Ok(PointProbe {
        point,
        exact_end,
        left_end,
        right_end,
        fixed,
        unstable: fixed && !near(left_end) && !near(right_end),
    })
}

/// Points where the update value crosses zero (or flips sign across a
/// discontinuity) on a grid of `points` samples, refined by bisection.
pub fn update_sign_changes(
    method: ScalarMethod,
    problem: &ScalarProblem,
    settings: &ScalarSettings,
    lo: f64,
    hi: f64,
    points: usize,
) -> Vec<f64> {
    let u = |w| update_value(method, problem, settings, w);
    let grid = linspace(lo, hi, points);
    let mut out = Vec::new();
    for pair in grid.windows(2) {
        let (mut a, mut b) = (pair[0], pair[1]);
        let (ua, ub) = (u(a), u(b));
        if ua == 0.0 {
            out.push(a);
            continue;
        }
        if ua.signum() == ub.signum() || ub == 0.0 {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if u(mid).signum() == ua.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Samples of the update value `u(w)` on a grid, for plotting.
pub fn update_curve(
    method: ScalarMethod,
    problem: &ScalarProblem,
    settings: &ScalarSettings,
    grid: &[f64],
) -> Vec<(f64, f64, f64)> {
    grid.iter()
        .map(|&w| (w, (problem.loss)(w), update_value(method, problem, settings, w)))
        .collect()
}

/// CSV with header `w,loss,update` for [`update_curve`] samples.
pub fn curve_csv(samples: &[(f64, f64, f64)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["w", "loss", "update"])?;
    for (x, l, u) in samples {
        w.write_record([x.to_string(), l.to_string(), u.to_string()])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::error::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Whether a [`verify_lemma1`] run shrinks `η` by the recurrence or keeps it
/// constant (the negative control).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EtaPolicy {
    Lemma1,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Settings {
    pub eta0: f64,
    pub epsilon: f64,
    pub lipschitz: f64,
    pub rescale_factor: f64,
    pub policy: EtaPolicy,
    pub max_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    /// Number of inequalities checked.
    pub checks: usize,
    pub violations: usize,
    pub log: Vec<String>,
}

impl Verdict {
    fn record(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
            if self.log.len() < 20 {
                self.log.push(msg());
            }
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.violations == 0;
        self
    }
}

/// Checks that the update step outside the feasible region never grows at
/// an iteration where `η` is shrunk.
///
/// For every start, CGGD is iterated with the shortest-path direction. At
/// each iteration `j → j+1` where both points lie outside the region and the
/// overshoot trigger `d(w_{j+1}) < 1.5 η_j max{ε, |L′(w_{j+1})|}` fires, `η`
/// is updated per `settings.policy` and `|step_{j+1}| ≤ |step_j|` is
/// asserted. Every failing state is logged.
pub fn verify_lemma1(
    problem: &ScalarProblem,
    starts: &[f64],
    settings: &Lemma1Settings,
) -> Result<Verdict> {
    let mut verdict = Verdict::default();
    let rho = settings.rescale_factor;
    let eps = settings.epsilon;
    let fr = &problem.fr;
    let grad = |w: f64| (problem.loss_grad)(w);
    for &w0 in starts {
        let mut w = w0;
        let mut eta = settings.eta0;
        for j in 0..settings.max_steps {
            let (dir, _) = fr_dir_and_distance(fr, w);
            let g = grad(w);
            let step = eta * (g + rho * dir * eps.max(g.abs()));
            let next = w - step;
            let (dir_next, d_next) = fr_dir_and_distance(fr, next);
            let g_next = grad(next);
            let m_next = eps.max(g_next.abs());
            let trigger = dir_next != 0.0 && d_next < 1.5 * eta * m_next;
            let eta_next = match (trigger, settings.policy) {
                (true, EtaPolicy::Lemma1) => {
                    lemma1_next_eta(eta, settings.lipschitz, eps, g_next.abs(), g.abs())?
                }
                _ => eta,
            };
            if trigger && dir != 0.0 {
                let step_next = eta_next * (g_next + rho * dir_next * m_next);
                verdict.record(step_next.abs() <= step.abs() * (1.0 + 1e-12), || {
                    format!(
                        "start {w0}: iteration {j}, w = {w}, w' = {next}, eta = {eta}, \
                         eta' = {eta_next}, |step| = {}, |step'| = {}",
                        step.abs(),
                        step_next.abs()
                    )
                });
            }
            if (next - w).abs() < STILL_THRESHOLD || !next.is_finite() {
                break;
            }
            w = next;
            eta = eta_next;
        }
    }
    Ok(verdict.finish())
}

/// Random starts outside the feasible region inside `[lo, hi]`.
pub fn random_infeasible_starts(
    problem: &ScalarProblem,
    count: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = rng.random_range(lo..hi);
        if !problem.fr.contains(w) {
            out.push(w);
        }
    }
    out
}

/// Checks the one-step distance contraction
/// `d(w′, FR) ≤ d(w, FR) − (η/2) · max{ε, |L′(w)|}` on `trials` random
/// states satisfying `1.5 · η · max{ε, |L′(w)|} < d(w, FR)`.
pub fn verify_lemma2(
    problem: &ScalarProblem,
    trials: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdict = Verdict::default();
    let (lo, hi) = (0.0, 6.0);
    let mut attempts = 0usize;
    while verdict.checks < trials {
        attempts += 1;
        if attempts > trials * 10_000 {
            return Err(config("could not sample enough states meeting the precondition"));
        }
        let w: f64 = rng.random_range(lo..hi);
        let eta = 10f64.powf(rng.random_range(-7.0..-1.0));
        let Some(ok) = lemma2_holds_1d(problem, w, eta, epsilon) else {
            continue;
        };
        verdict.record(ok.0, || {
            format!("w = {w}, eta = {eta}: d' = {} exceeds bound {}", ok.1, ok.2)
        });
    }
    Ok(verdict.finish())
}

/// `Some((holds, d', bound))`, or `None` when the precondition fails.
pub fn lemma2_holds_1d(
    problem: &ScalarProblem,
    w: f64,
    eta: f64,
    epsilon: f64,
) -> Option<(bool, f64, f64)> {
    let (dir, k) = fr_dir_and_distance(&problem.fr, w);
    let g = (problem.loss_grad)(w);
    let m = epsilon.max(g.abs());
    if !(1.5 * eta * m < k) {
        return None;
    }
    let next = w - eta * (g + 1.5 * dir * m);
    let d_next = problem.fr.distance(next);
    let bound = k - eta / 2.0 * m;
    Some((d_next <= bound + 1e-12, d_next, bound))
}

/// Two-dimensional separable extension: `L(w) = L₁(w₁) + L₂(w₂)` on the box
/// `I₁ × I₂` with the Euclidean shortest-path direction.
#[derive(Clone, Debug)]
pub struct BoxProblem {
    pub first: ScalarProblem,
    pub second: ScalarProblem,
    pub boxed: [Interval; 2],
}

impl BoxProblem {
    /// Reference polynomial on `[3, 4]` times the quadratic on `[1, 2]`.
    pub fn reference() -> Self {
        Self {
            first: polynomial_problem(),
            second: quadratic_problem(),
            boxed: [Interval::new(3.0, 4.0), Interval::new(1.0, 2.0)],
        }
    }

    pub fn grad(&self, w: [f64; 2]) -> [f64; 2] {
        [(self.first.loss_grad)(w[0]), (self.second.loss_grad)(w[1])]
    }

    pub fn project(&self, w: [f64; 2]) -> [f64; 2] {
        [
            w[0].clamp(self.boxed[0].lo, self.boxed[0].hi),
            w[1].clamp(self.boxed[1].lo, self.boxed[1].hi),
        ]
    }

    pub fn distance(&self, w: [f64; 2]) -> f64 {
        let p = self.project(w);
        (w[0] - p[0]).hypot(w[1] - p[1])
    }
}

/// Two-dimensional version of [`verify_lemma2`].
pub fn verify_lemma2_box(
    problem: &BoxProblem,
    trials: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdict = Verdict::default();
    let mut attempts = 0usize;
    while verdict.checks < trials {
        attempts += 1;
        if attempts > trials * 10_000 {
            return Err(config("could not sample enough states meeting the precondition"));
        }
        let w = [rng.random_range(0.0..6.0), rng.random_range(-2.0..5.0)];
        let eta = 10f64.powf(rng.random_range(-7.0..-1.0));
        let k = problem.distance(w);
        let g = problem.grad(w);
        let m = epsilon.max(g[0].hypot(g[1]));
        if !(1.5 * eta * m < k) {
            continue;
        }
        let p = problem.project(w);
        let dir = [(w[0] - p[0]) / k, (w[1] - p[1]) / k];
        let next = [
            w[0] - eta * (g[0] + 1.5 * dir[0] * m),
            w[1] - eta * (g[1] + 1.5 * dir[1] * m),
        ];
        let d_next = problem.distance(next);
        let bound = k - eta / 2.0 * m;
        verdict.record(d_next <= bound + 1e-12, || {
            format!("w = {w:?}, eta = {eta}: d' = {d_next} exceeds bound {bound}")
        });
    }
    Ok(verdict.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_values() {
        let p = polynomial_problem();
        for w in [2.0, 4.0, 5.0] {
            assert_eq!((p.loss)(w), 7.0);
        }
        assert!(((p.constraint_value)(2.5) - 0.5625).abs() < 1e-15);
        assert!((p.constraint_value)(1.5) < 0.0);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let p = polynomial_problem();
        for w in linspace(0.5, 5.5, 23) {
            let h = 1e-6;
            let fd = ((p.loss)(w + h) - (p.loss)(w - h)) / (2.0 * h);
            let g = (p.loss_grad)(w);
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "w = {w}: {fd} vs {g}");
        }
    }

    #[test]
    fn constraint_sign_matches_region() {
        let p = polynomial_problem();
        for w in linspace(0.0, 5.0, 501) {
            assert_eq!((p.constraint_value)(w) <= 0.0, p.fr.contains(w), "w = {w}");
        }
    }

    #[test]
    fn direction_and_distance() {
        let fr = polynomial_problem().fr;
        assert_eq!(fr_dir_and_distance(&fr, 0.5), (-1.0, 0.5));
        let (dir, d) = fr_dir_and_distance(&fr, 2.1);
        assert_eq!(dir, 1.0);
        assert!((d - 0.1).abs() < 1e-12);
        assert_eq!(fr_dir_and_distance(&fr, 2.5), (1.0, 0.5));
        assert_eq!(fr_dir_and_distance(&fr, 3.5), (0.0, 0.0));
        assert_eq!(fr_dir_and_distance(&fr, 4.25), (1.0, 0.25));
    }

    #[test]
    fn region_validation() {
        assert!(FeasibleRegion::new(vec![]).is_err());
        assert!(FeasibleRegion::new(vec![Interval::new(2.0, 1.0)]).is_err());
        assert!(
            FeasibleRegion::new(vec![Interval::new(3.0, 4.0), Interval::new(1.0, 2.0)]).is_err()
        );
        assert!(
            FeasibleRegion::new(vec![Interval::new(1.0, 3.0), Interval::new(2.0, 4.0)]).is_err()
        );
    }

    #[test]
    fn alternative_rule_from_just_right_of_two() {
        let p = polynomial_problem();
        let settings = ScalarSettings::default();
        let schedule = default_cggd_schedule(&p, &settings);
        let shortest = run_scalar(ScalarMethod::Cggd, &p, 2.1, &schedule, &settings).unwrap();
        assert!((shortest.end - 2.0).abs() < 1e-3, "{shortest:?}");

        let toward = ScalarSettings {
            rule: DirectionRule::TowardInterval(1),
            ..settings
        };
        let alt = run_scalar(ScalarMethod::Cggd, &p, 2.1, &schedule, &toward).unwrap();
        assert!((3.0..=4.0).contains(&alt.end), "{alt:?}");
    }

    #[test]
    fn cggd_stays_at_boundary_point_two() {
        let p = polynomial_problem();
        let settings = ScalarSettings::default();
        let schedule = default_cggd_schedule(&p, &settings);
        let t = run_scalar(ScalarMethod::Cggd, &p, 2.0, &schedule, &settings).unwrap();
        assert!((t.end - 2.0).abs() < 1e-3, "{t:?}");
    }

    #[test]
    fn fuzzy_stalls_outside_region() {
        let p = polynomial_problem();
        let settings = ScalarSettings::default();
        let t = run_scalar(ScalarMethod::Fuzzy, &p, 2.4, &default_fuzzy_schedule(), &settings)
            .unwrap();
        assert!(t.converged);
        assert!((t.end - 2.27).abs() < 0.05, "{t:?}");
        assert!(!p.fr.contains(t.end));
    }

    #[test]
    fn lemma2_skips_feasible_states() {
        let p = polynomial_problem();
        assert!(lemma2_holds_1d(&p, 1.5, 0.01, 0.5).is_none());
        assert!(lemma2_holds_1d(&p, 3.2, 1e-6, 0.5).is_none());
    }

    #[test]
    fn lemma2_at_five() {
        let p = polynomial_problem();
        // L'(5) = 0 (double root), so m = epsilon
        let (ok, d, bound) = lemma2_holds_1d(&p, 5.0, 0.1, 0.5).unwrap();
        assert!(ok, "{d} > {bound}");
        assert!((d - (1.0 - 0.1 * 1.5 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_lemma1_control() {
        let p = quadratic_problem();
        let v = verify_lemma1(
            &p,
            &[5.0],
            &Lemma1Settings {
                eta0: 0.1,
                epsilon: 0.5,
                lipschitz: 2.0,
                rescale_factor: 1.5,
                policy: EtaPolicy::Lemma1,
                max_steps: 10_000,
            },
        )
        .unwrap();
        assert!(v.passed, "{:?}", v.log);
        assert!(v.checks > 0);
    }
}
