//! Rigorous checking of the coverage guarantee `ccp(p) <= delta` for all `p`.
//!
//! Two checkers are provided: the adapted branch-and-bound, which bisects the
//! parameter interval and discards pieces whose upper bound is at most
//! `delta`, and the backward adaptive maximum checking algorithm, which walks
//! from the right end with an adaptive step. Both use the interval bounds of
//! [`ExactEngine::ccp_bounds`].

use std::time::Instant;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decimal::Offset;
use crate::error::{Error, Result};
use crate::exact::ExactEngine;
use crate::rules::SamplingPlan;

pub const DEFAULT_BNB_ETA: f64 = 1e-10;
pub const DEFAULT_AMCA_ETA: f64 = 1e-15;
pub const DEFAULT_MAX_EVALUATIONS: usize = 1_000_000;
/// Initial AMCA step as a fraction of the interval length.
pub const DEFAULT_AMCA_STEP_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bnb,
    Amca,
}

impl Method {
    pub fn default_eta(self) -> f64 {
        match self {
            Method::Bnb => DEFAULT_BNB_ETA,
            Method::Amca => DEFAULT_AMCA_ETA,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Bnb => "bnb",
            Method::Amca => "amca",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bnb" => Ok(Method::Bnb),
            "amca" => Ok(Method::Amca),
            other => Err(Error::InvalidParams(format!("unknown verification method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub method: Method,
    /// Termination tolerance; the method's default when `None`.
    pub eta: Option<f64>,
    pub max_evaluations: usize,
    pub deadline: Option<Instant>,
    pub amca_step_fraction: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            method: Method::Bnb,
            eta: None,
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
            deadline: None,
            amca_step_fraction: DEFAULT_AMCA_STEP_FRACTION,
        }
    }
}

impl VerifyOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| self.method.default_eta())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Guaranteed,
    Violated,
}

/// An interval on which the complementary coverage provably exceeds `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub a: f64,
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyStats {
    /// Interval bound evaluations.
    pub evaluations: usize,
    /// Bisection generations (B&B) or accepted steps (AMCA).
    pub iterations: usize,
    /// Largest lower bound on the complementary coverage seen.
    pub max_lower: f64,
    /// Narrowest interval examined.
    pub min_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub method: Method,
    pub eta: f64,
    pub delta: f64,
    /// The interval the checker ran on.
    pub domain: (f64, f64),
    /// Width of the edge strips certified separately.
    pub edge: f64,
    pub symmetric: bool,
    pub witness: Option<Witness>,
    pub stats: VerifyStats,
}

fn inconclusive(reason: impl Into<String>, lower: f64, upper: f64) -> Error {
    Error::Inconclusive {
        reason: reason.into(),
        lower,
        upper,
    }
}

/// Interval bounds for many intervals, computing each distinct endpoint's profile once.
fn evaluate_intervals(engine: &ExactEngine, intervals: &[(f64, f64)]) -> Result<Vec<IntervalBounds>> {
    let mut points: Vec<f64> = intervals.iter().flat_map(|&(a, b)| [a, b]).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let index = |x: f64| points.binary_search_by(|q| q.total_cmp(&x)).unwrap_or(0);
    // per point: (interval, neighbour, point is the left end)
    let mut requests: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); points.len()];
    for (i, &(a, b)) in intervals.iter().enumerate() {
        requests[index(a)].push((i, b, true));
        requests[index(b)].push((i, a, false));
    }
    // answers: (interval, left end?, low(+eps) at neighbour, high(-eps) at neighbour, truncated, ccp at the point)
    let answers: Vec<Vec<(usize, bool, f64, f64, f64, f64)>> = points
        .par_iter()
        .zip(requests.par_iter())
        .map(|(&x, reqs)| {
            let prof = engine.profile(x)?;
            let at_point = engine.ccp_from_profile(&prof);
            Ok(reqs
                .iter()
                .map(|&(i, y, left)| {
                    (
                        i,
                        left,
                        engine.low(&prof, Offset::Plus, y),
                        engine.high(&prof, Offset::Minus, y),
                        prof.truncated(),
                        at_point,
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<IntervalBounds> = intervals
        .iter()
        .map(|&(a, b)| IntervalBounds {
            a,
            b,
            lower: 0.0,
            upper: 0.0,
            endpoint_max: 0.0,
        })
        .collect();
    for list in answers {
        for (i, left, low_plus, high_minus, trunc, at_point) in list {
            let bnd = &mut out[i];
            bnd.endpoint_max = bnd.endpoint_max.max(at_point);
            if left {
                // profile at a: upper gets Pr_a{p_hat <= b - eps}, lower gets Pr_a{p_hat >= b + eps}
                bnd.upper += low_plus + trunc;
                bnd.lower += high_minus;
            } else {
                // profile at b: lower gets Pr_b{p_hat <= a - eps}, upper gets Pr_b{p_hat >= a + eps}
                bnd.lower += low_plus;
                bnd.upper += high_minus + trunc;
            }
        }
    }
    for bnd in &mut out {
        bnd.lower = bnd.lower.clamp(0.0, 1.0);
        bnd.upper = bnd.upper.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Interval bounds plus the larger of the two endpoint values.
#[derive(Clone, Copy, Debug, PartialEq)]
struct IntervalBounds {
    a: f64,
    b: f64,
    lower: f64,
    upper: f64,
    endpoint_max: f64,
}

impl IntervalBounds {
    /// Lower bound on the maximum over the interval.
    fn max_lower(&self) -> f64 {
        self.lower.max(self.endpoint_max)
    }
}

/// Bounds on the maximum over `[a, b]` with `b` the successor of `a`, splitting
/// exactly at the discontinuity points in between.
fn resolve_unsplittable(engine: &ExactEngine, a: f64, b: f64) -> Result<(f64, f64)> {
    let pa = engine.profile(a)?;
    let pb = engine.profile(b)?;
    let trunc = pa.truncated() + pb.truncated();
    let mut lower = engine.ccp_from_profile(&pa).max(engine.ccp_from_profile(&pb));
    let mut upper = lower + trunc;
    let cuts = engine.discontinuities_between(a, b);
    let (ra, rb) = match (BigRational::from_float(a), BigRational::from_float(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Ok((lower, engine.ccp_bounds(a, b)?.upper)),
    };
    // open pieces between consecutive cuts
    let mut ends = Vec::with_capacity(cuts.len() + 2);
    ends.push(ra);
    ends.extend(cuts.iter().cloned());
    ends.push(rb);
    for w in ends.windows(2) {
        let up = engine.low_at(&pa, &w[1], true) + engine.high_at(&pb, &w[0], true) + trunc;
        upper = upper.max(up);
    }
    // the cuts themselves
    for c in &cuts {
        let lo = engine.low_at(&pb, c, false) + engine.high_at(&pa, c, false);
        let up = engine.low_at(&pa, c, false) + engine.high_at(&pb, c, false) + trunc;
        lower = lower.max(lo);
        upper = upper.max(up);
    }
    Ok((lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0)))
}

fn check_deadline(deadline: Option<Instant>, lower: f64, upper: f64) -> Result<()> {
    match deadline {
        Some(t) if Instant::now() >= t => Err(inconclusive("time budget exhausted", lower, upper)),
        _ => Ok(()),
    }
}

fn base_report(method: Method, eta: f64, delta: f64, domain: (f64, f64)) -> VerificationReport {
    VerificationReport {
        verdict: Verdict::Guaranteed,
        method,
        eta,
        delta,
        domain,
        edge: 0.0,
        symmetric: false,
        witness: None,
        stats: VerifyStats {
            min_width: domain.1 - domain.0,
            ..VerifyStats::default()
        },
    }
}

/// Adapted branch-and-bound on `[lo, hi]`.
///
/// Returns an [`Error::Inconclusive`] when the bounds stall within `eta` of
/// each other on both sides of `delta`, when an interval can no longer be
/// split, or when the evaluation budget or deadline runs out.
pub fn adapted_bnb(engine: &ExactEngine, lo: f64, hi: f64, delta: f64, eta: f64, opts: &VerifyOptions) -> Result<VerificationReport> {
    if !(eta > 0.0) || !(lo < hi) {
        return Err(Error::InvalidParams(format!("need eta > 0 and lo < hi, got eta={eta}, [{lo}, {hi}]")));
    }
    let mut report = base_report(Method::Bnb, eta, delta, (lo, hi));
    let stats = &mut report.stats;
    let mut set = evaluate_intervals(engine, &[(lo, hi)])?;
    stats.evaluations = 1;
    // the lower bound of an interval's maximum also uses the exact values at its ends
    let maxes = |s: &[IntervalBounds]| {
        s.iter()
            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(l, u), b| (l.max(b.max_lower()), u.max(b.upper)))
    };
    let (mut l, mut u) = maxes(&set);
    stats.max_lower = l;
    set.retain(|b| b.upper > delta);
    while !set.is_empty() {
        if l >= delta {
            if l > delta {
                let w = set.iter().max_by(|x, y| x.max_lower().total_cmp(&y.max_lower())).copied();
                report.verdict = Verdict::Violated;
                report.witness = w.map(|b| Witness {
                    a: b.a,
                    b: b.b,
                    lower: b.max_lower(),
                    upper: b.upper,
                });
                return Ok(report);
            }
            return Err(inconclusive("largest lower bound equals delta", l, u));
        }
        if u <= l + eta {
            let lean = if u <= delta + eta { ", leaning guaranteed" } else { "" };
            return Err(inconclusive(
                format!("bounds within eta = {eta} of each other while straddling delta{lean}"),
                l,
                u,
            ));
        }
        if stats.evaluations + 2 * set.len() > opts.max_evaluations {
            return Err(inconclusive(
                format!("evaluation budget of {} exhausted", opts.max_evaluations),
                l,
                u,
            ));
        }
        check_deadline(opts.deadline, l, u)?;
        let mut children = Vec::with_capacity(2 * set.len());
        for b in &set {
            let mid = 0.5 * (b.a + b.b);
            if !(b.a < mid && mid < b.b) {
                let (lower, upper) = resolve_unsplittable(engine, b.a, b.b)?;
                stats.evaluations += 1;
                stats.max_lower = stats.max_lower.max(lower);
                if lower > delta {
                    report.verdict = Verdict::Violated;
                    report.witness = Some(Witness {
                        a: b.a,
                        b: b.b,
                        lower,
                        upper,
                    });
                    return Ok(report);
                }
                if upper > delta {
                    return Err(inconclusive(
                        format!("interval [{}, {}] cannot be split further", b.a, b.b),
                        lower,
                        upper,
                    ));
                }
                continue;
            }
            children.push((b.a, mid));
            children.push((mid, b.b));
            stats.min_width = stats.min_width.min(mid - b.a).min(b.b - mid);
        }
        let bounds = evaluate_intervals(engine, &children)?;
        stats.evaluations += children.len();
        stats.iterations += 1;
        set = bounds.into_iter().filter(|b| b.upper > delta).collect();
        (l, u) = maxes(&set);
        stats.max_lower = stats.max_lower.max(l);
    }
    Ok(report)
}

/// Outcome of the backward adaptive maximum check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmcaOutcome {
    /// `false` certifies the bound below `delta` everywhere; `true` is the failure signal.
    pub failed: bool,
    /// The last interval tried.
    pub last: (f64, f64),
    /// The last interval whose bound was not below `delta`.
    pub last_rejected: Option<(f64, f64)>,
    pub evaluations: usize,
    pub accepted: usize,
    pub min_step: f64,
}

/// Backward adaptive maximum checking on `[lo, hi]` with an interval upper bound.
///
/// Transcribes the algorithm directly: after each accepted interval the step
/// is doubled, after each rejection it is rescaled by `2^l` with `l`
/// decreasing, and the check fails once the step drops below `eta`.
pub fn amca_backward<F>(mut bound: F, lo: f64, hi: f64, delta: f64, eta: f64, d0: f64) -> Result<AmcaOutcome>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if !(d0 > eta && eta > 0.0) || !(lo < hi) {
        return Err(Error::InvalidParams(format!(
            "need d0 > eta > 0 and lo < hi, got d0={d0}, eta={eta}, [{lo}, {hi}]"
        )));
    }
    let mut out = AmcaOutcome {
        failed: false,
        last: (hi, hi),
        last_rejected: None,
        evaluations: 0,
        accepted: 0,
        min_step: d0,
    };
    let mut d = d0;
    let mut f = false;
    let mut t = false;
    let mut b = hi;
    while !f && !t {
        let mut st = false;
        let mut l: i32 = 2;
        while !st {
            l -= 1;
            d *= 2f64.powi(l);
            let a;
            if b - d > lo {
                a = b - d;
                t = false;
            } else {
                a = lo;
                t = true;
            }
            out.last = (a, b);
            out.evaluations += 1;
            out.min_step = out.min_step.min(d);
            if bound(a, b)? < delta {
                st = true;
                b = a;
                out.accepted += 1;
            } else {
                out.last_rejected = Some((a, b));
            }
            if d < eta {
                st = true;
                f = true;
            }
        }
    }
    out.failed = f;
    Ok(out)
}

/// Upper bound on the complementary coverage over `[0, edge]` (and `[1 - edge, 1]`
/// when `both_sides`), shrinking `edge` until it is at most `delta`.
fn certify_edges(engine: &ExactEngine, delta: f64, start: f64, both_sides: bool) -> Result<f64> {
    let mut edge = start;
    for _ in 0..40 {
        let left = engine.ccp_bounds(0.0, edge)?.upper;
        let right = if both_sides {
            engine.ccp_bounds(1.0 - edge, 1.0)?.upper
        } else {
            0.0
        };
        if left <= delta && right <= delta {
            return Ok(edge);
        }
        edge /= 10.0;
    }
    Err(inconclusive("no edge strip could be certified", 0.0, 1.0))
}

/// Checks `ccp(p) <= delta` for all `p` in `(0, 1)`.
///
/// Plans with reflection-symmetric continuation sets are checked on
/// `[edge, 1/2]` only. The strips `(0, edge]` (and `[1 - edge, 1)`) are
/// certified by a single interval bound.
pub fn verify_plan(plan: &SamplingPlan, delta: f64, opts: &VerifyOptions) -> Result<VerificationReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            expected: "0 < delta < 1",
        });
    }
    let engine = ExactEngine::new(plan);
    let symmetric = plan.is_symmetric();
    let eps = plan.eps().value();
    let edge = certify_edges(&engine, delta, (eps / 2.0).min(1e-4), !symmetric)?;
    let (lo, hi) = if symmetric { (edge, 0.5) } else { (edge, 1.0 - edge) };
    let eta = opts.eta();
    let mut report = match opts.method {
        Method::Bnb => adapted_bnb(&engine, lo, hi, delta, eta, opts)?,
        Method::Amca => {
            let d0 = opts.amca_step_fraction * (hi - lo);
            let mut evals = 0usize;
            let deadline = opts.deadline;
            let budget = opts.max_evaluations;
            let outcome = amca_backward(
                |a, b| {
                    evals += 1;
                    if evals > budget {
                        return Err(inconclusive(format!("evaluation budget of {budget} exhausted"), 0.0, 1.0));
                    }
                    if evals % 64 == 0 {
                        check_deadline(deadline, 0.0, 1.0)?;
                    }
                    Ok(engine.ccp_bounds(a, b)?.upper)
                },
                lo,
                hi,
                delta,
                eta,
                d0,
            )?;
            let mut report = base_report(Method::Amca, eta, delta, (lo, hi));
            report.stats.evaluations = outcome.evaluations;
            report.stats.iterations = outcome.accepted;
            report.stats.min_width = outcome.min_step;
            if outcome.failed {
                let (a, b) = outcome.last_rejected.unwrap_or(outcome.last);
                // confirm with branch-and-bound on windows widening leftward from the failure
                let bnd = evaluate_intervals(&engine, &[(a, b)])?[0];
                let mut found = (bnd.max_lower() > delta).then_some(Witness {
                    a,
                    b,
                    lower: bnd.max_lower(),
                    upper: bnd.upper,
                });
                let mut width = (b - a).max(f64::EPSILON);
                while found.is_none() {
                    let left = (b - width).max(lo);
                    if left < b {
                        // a window ending on the crossing itself can be inconclusive; widen past it
                        match adapted_bnb(&engine, left, b, delta, eta, opts) {
                            Ok(local) if local.verdict == Verdict::Violated => {
                                found = local.witness;
                                break;
                            }
                            Ok(_) | Err(Error::Inconclusive { .. }) => {}
                            Err(e) => return Err(e),
                        }
                    }
                    if left <= lo {
                        break;
                    }
                    width *= 16.0;
                }
                match found {
                    Some(w) => {
                        report.stats.max_lower = w.lower;
                        report.verdict = Verdict::Violated;
                        report.witness = Some(w);
                    }
                    None => {
                        return Err(inconclusive(
                            format!("step fell below eta = {eta} near [{a}, {b}] without a violating lower bound"),
                            bnd.max_lower(),
                            bnd.upper,
                        ));
                    }
                }
            }
            report
        }
    };
    report.edge = edge;
    report.symmetric = symmetric;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ExactEngine;
    use crate::rules::{DesignParams, SchedulePolicy};

    #[test]
    fn amca_constant_bounds() {
        let delta = 0.05;
        let ok = amca_backward(|_, _| Ok(delta / 2.0), 0.0, 0.5, delta, 1e-15, 0.025).unwrap();
        assert!(!ok.failed);
        // the step doubles after every acceptance: 0.05, 0.1, 0.2, then the left end
        assert!(ok.evaluations <= 6, "{ok:?}");
        let bad = amca_backward(|_, _| Ok(2.0 * delta), 0.0, 0.5, delta, 1e-15, 0.025).unwrap();
        assert!(bad.failed);
        assert!(bad.min_step < 1e-15);
    }

    #[test]
    fn tiny_zeta_is_guaranteed() {
        let params = DesignParams::double_parabolic(0.1, 0.05, 0.75, 1e-12, 1)
            .unwrap()
            .with_schedule(SchedulePolicy::FullySequential);
        let plan = SamplingPlan::materialize(&params).unwrap();
        let r = verify_plan(&plan, 0.05, &VerifyOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Guaranteed);
        assert!(r.symmetric);
    }

    #[test]
    fn inflated_zeta_is_violated() {
        let params = DesignParams::double_parabolic(0.1, 0.05, 0.75, 4.0, 1)
            .unwrap()
            .with_schedule(SchedulePolicy::FullySequential);
        let plan = SamplingPlan::materialize(&params).unwrap();
        for method in [Method::Bnb, Method::Amca] {
            let r = verify_plan(&plan, 0.05, &VerifyOptions::with_method(method)).unwrap();
            assert_eq!(r.verdict, Verdict::Violated, "{method}");
            let w = r.witness.unwrap();
            assert!(w.lower > 0.05);
            let eng = ExactEngine::new(&plan);
            let worst = (0..=100)
                .map(|i| eng.ccp(w.a + (w.b - w.a) * i as f64 / 100.0).unwrap())
                .fold(0.0, f64::max);
            assert!(worst > 0.05);
        }
    }

    #[test]
    fn interval_evaluation_matches_direct_bounds() {
        let plan = SamplingPlan::materialize(&DesignParams::double_parabolic(0.05, 0.05, 0.75, 2.6759, 7).unwrap()).unwrap();
        let eng = ExactEngine::new(&plan);
        let iv = [(0.1, 0.2), (0.2, 0.25), (0.3, 0.31), (0.31, 0.31)];
        let got = evaluate_intervals(&eng, &iv).unwrap();
        for (g, &(a, b)) in got.iter().zip(&iv) {
            let want = eng.ccp_bounds(a, b).unwrap();
            assert!((g.lower - want.lower).abs() < 1e-15);
            assert!((g.upper - want.upper).abs() < 1e-15);
        }
    }
}
