//! Stopping rules, sample-size ranges, schedules and materialized plans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decimal::ExactDecimal;
use crate::error::{Error, Result};
use crate::mathkern::{binom_range_sum, ci_limits, large_dev, normal_quantile, CiFamily};

/// Default shift for the revised Wald interval.
pub const REVISED_WALD_DEFAULT_A: f64 = 4.0;

/// Stopping-rule family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleFamily {
    /// From Chernoff bounds (Fishman intervals).
    Fishman,
    /// From Massart's inequality; the double-parabolic rule with `rho = 2/3`.
    Massart,
    /// From Clopper-Pearson intervals.
    ClopperPearson,
    /// From Wald intervals; the double-parabolic rule with `rho = 0`.
    ///
    /// With `min_size_override` the first sample size is `ceil(ln(1/(zeta delta)) / eps)`.
    Wald {
        #[serde(default)]
        min_size_override: bool,
    },
    /// The double-parabolic rule with the dilation `rho` taken from [`DesignParams`].
    DoubleParabolic,
    /// Revised Wald intervals, in closed form.
    RevisedWald { a: f64 },
    /// Wilson intervals, in the closed form `(|p - 1/2| - eps)^2 >= 1/4 - n (eps / Z)^2`.
    Wilson,
    /// Inclusion principle applied to explicitly computed interval limits.
    Inclusion { ci: CiFamily },
}

/// How the sample sizes `n_1 < ... < n_s` are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sizes", rename_all = "kebab-case")]
pub enum SchedulePolicy {
    /// `s` sizes spread evenly between the minimum and maximum sample sizes.
    EqualGroups,
    /// Every integer from the minimum to the maximum sample size.
    FullySequential,
    Explicit(Vec<u64>),
}

/// The design knobs of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub eps: ExactDecimal,
    pub delta: ExactDecimal,
    pub rho: f64,
    pub zeta: f64,
    pub stages: usize,
    pub family: RuleFamily,
    pub schedule: SchedulePolicy,
}

impl DesignParams {
    /// Double-parabolic design with equal groups.
    pub fn double_parabolic(eps: f64, delta: f64, rho: f64, zeta: f64, stages: usize) -> Result<Self> {
        let params = Self {
            eps: ExactDecimal::from_f64(eps)?,
            delta: ExactDecimal::from_f64(delta)?,
            rho,
            zeta,
            stages,
            family: RuleFamily::DoubleParabolic,
            schedule: SchedulePolicy::EqualGroups,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_zeta(&self, zeta: f64) -> Self {
        Self { zeta, ..self.clone() }
    }

    pub fn with_family(mut self, family: RuleFamily) -> Self {
        self.family = family;
        self
    }

    pub fn with_schedule(mut self, schedule: SchedulePolicy) -> Self {
        if let SchedulePolicy::Explicit(sizes) = &schedule {
            self.stages = sizes.len();
        }
        self.schedule = schedule;
        self
    }

    pub fn eps(&self) -> f64 {
        self.eps.value()
    }

    pub fn delta(&self) -> f64 {
        self.delta.value()
    }

    /// The per-stage risk `zeta * delta`.
    pub fn level(&self) -> f64 {
        self.zeta * self.delta()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        let (eps, delta) = (self.eps(), self.delta());
        if !(eps > 0.0 && eps < 0.5) {
            return bad(format!("eps = {eps} must lie in (0, 1/2)"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return bad(format!("delta = {delta} must lie in (0, 1)"));
        }
        if !(self.zeta > 0.0 && self.level() < 1.0) {
            return bad(format!("zeta * delta = {} must lie in (0, 1)", self.level()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho = {} must lie in [0, 1]", self.rho));
        }
        if self.rho * eps > 0.25 {
            return bad(format!("rho * eps = {} exceeds 1/4", self.rho * eps));
        }
        if self.stages == 0 {
            return bad("at least one stage is required".into());
        }
        match self.family {
            RuleFamily::RevisedWald { a } | RuleFamily::Inclusion { ci: CiFamily::RevisedWald { a } } if !(a > 0.0) => {
                return bad(format!("revised Wald shift a = {a} must be positive"));
            }
            _ => {}
        }
        if let SchedulePolicy::Explicit(sizes) = &self.schedule {
            if sizes.len() != self.stages {
                return bad(format!("{} explicit sizes given for {} stages", sizes.len(), self.stages));
            }
        }
        Ok(())
    }

    /// Whether the family has the closed double-parabolic form, and with which
    /// dilation and per-stage risk.
    fn parabolic_form(&self) -> Result<Option<(f64, f64)>> {
        let level = self.level();
        Ok(match self.family {
            RuleFamily::DoubleParabolic => Some((self.rho, level)),
            RuleFamily::Massart | RuleFamily::Inclusion { ci: CiFamily::ChenMassart } => Some((2.0 / 3.0, level)),
            RuleFamily::Wald { .. } => Some((0.0, level)),
            RuleFamily::Wilson | RuleFamily::Inclusion { ci: CiFamily::Wilson } => {
                Some((1.0, wald_equivalent_level(level)?))
            }
            RuleFamily::Inclusion { ci: CiFamily::Wald } => Some((0.0, wald_equivalent_level(level)?)),
            _ => None,
        })
    }
}

/// `zeta' delta` such that `Z_{zeta delta} = sqrt(2 ln(1/(zeta' delta)))`.
fn wald_equivalent_level(level: f64) -> Result<f64> {
    let z = normal_quantile(level)?;
    if z <= 0.0 {
        return Err(Error::Domain {
            name: "zeta*delta",
            value: level,
            expected: "zeta*delta < 1/2 for normal-quantile based rules",
        });
    }
    Ok((-0.5 * z * z).exp())
}

/// The `zeta'` for which the Wald-type rule at `zeta` equals the
/// double-parabolic rule at `zeta'`.
pub fn wald_equivalent_zeta(zeta: f64, delta: f64) -> Result<f64> {
    Ok(wald_equivalent_level(zeta * delta)? / delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Predicate {
    Fishman,
    ClopperPearson,
    /// `(|z - 1/2| - rho eps)^2 >= 1/4 + eps^2 n / (2 ln level)`
    Parabolic { rho: f64, ln_level: f64 },
    /// `(|z - 1/2| - eps)^2 >= 1/4 - n (eps / z)^2`
    WilsonClosed { z: f64 },
    /// `(z~ - 1/2)^2 >= 1/4 - n eps^2 / z^2` with `z~ = (k + a) / (n + 2a)`
    RevisedWald { a: f64, z: f64 },
    Inclusion(CiFamily),
}

/// A decision predicate over `(k, n)` built from design parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingRule {
    predicate: Predicate,
    eps: f64,
    level: f64,
}

impl StoppingRule {
    pub fn new(params: &DesignParams) -> Result<Self> {
        params.validate()?;
        let level = params.level();
        let predicate = match params.family {
            RuleFamily::Fishman => Predicate::Fishman,
            RuleFamily::ClopperPearson => Predicate::ClopperPearson,
            RuleFamily::DoubleParabolic => Predicate::Parabolic {
                rho: params.rho,
                ln_level: level.ln(),
            },
            RuleFamily::Massart => Predicate::Parabolic {
                rho: 2.0 / 3.0,
                ln_level: level.ln(),
            },
            RuleFamily::Wald { .. } => Predicate::Parabolic {
                rho: 0.0,
                ln_level: level.ln(),
            },
            RuleFamily::Wilson => Predicate::WilsonClosed {
                z: normal_quantile(level)?,
            },
            RuleFamily::RevisedWald { a } => Predicate::RevisedWald {
                a,
                z: normal_quantile(level)?,
            },
            RuleFamily::Inclusion { ci } => {
                ci.validate()?;
                Predicate::Inclusion(ci)
            }
        };
        Ok(Self {
            predicate,
            eps: params.eps(),
            level,
        })
    }

    /// Whether sampling stops with `k` successes among `n` trials.
    pub fn decide(&self, k: u64, n: u64) -> Decision {
        if self.stops(k, n) {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn stops(&self, k: u64, n: u64) -> bool {
        debug_assert!(n >= 1 && k <= n);
        let nf = n as f64;
        let z = k as f64 / nf;
        let eps = self.eps;
        match self.predicate {
            Predicate::Fishman => {
                let zt = 0.5 - (0.5 - z).abs();
                large_dev(zt, zt + eps).unwrap_or(f64::NEG_INFINITY) <= self.level.ln() / nf
            }
            Predicate::ClopperPearson => {
                let hi = binom_range_sum(k, n, n, z - eps).unwrap_or(0.0);
                let lo = binom_range_sum(0, k, n, z + eps).unwrap_or(0.0);
                hi <= self.level && lo <= self.level
            }
            Predicate::Parabolic { rho, ln_level } => {
                let lhs = ((z - 0.5).abs() - rho * eps).powi(2);
                lhs >= 0.25 + eps * eps * nf / (2.0 * ln_level)
            }
            Predicate::WilsonClosed { z: q } => {
                ((z - 0.5).abs() - eps).powi(2) >= 0.25 - nf * (eps / q).powi(2)
            }
            Predicate::RevisedWald { a, z: q } => {
                let shifted = (k as f64 + a) / (nf + 2.0 * a);
                (shifted - 0.5).powi(2) >= 0.25 - nf * eps * eps / (q * q)
            }
            Predicate::Inclusion(ci) => match ci_limits(ci, self.level, k, n) {
                Ok(lim) => z - eps <= lim.lower && lim.upper <= z + eps,
                Err(_) => false,
            },
        }
    }
}

/// Minimum and maximum sample sizes, with the real values they were rounded from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRange {
    pub n_min: u64,
    pub n_max: u64,
    pub n_min_real: f64,
    pub n_max_real: f64,
    /// The minimum-size formula evaluated to 0 and was raised to 1.
    pub degenerate_min: bool,
}

const SEARCH_LIMIT: u64 = 50_000_000;

fn first_n(mut pred: impl FnMut(u64) -> bool, from: u64, what: &str) -> Result<u64> {
    let mut n = from.max(1);
    while n <= SEARCH_LIMIT {
        if pred(n) {
            return Ok(n);
        }
        n += 1;
    }
    Err(Error::Infeasible(format!("no {what} found below {SEARCH_LIMIT}")))
}

fn all_stop(rule: &StoppingRule, n: u64) -> bool {
    // the centre is where stopping is hardest, so test it first
    let mid = n / 2;
    if !rule.stops(mid, n) || !rule.stops(n - mid, n) {
        return false;
    }
    (0..=n).all(|k| rule.stops(k, n))
}

/// Sample-size range of the plan's rule family.
///
/// Double-parabolic families use the closed forms; the others are found by
/// scanning `n` upward for the first size where some, respectively every,
/// success count stops.
pub fn sample_size_range(params: &DesignParams) -> Result<SampleRange> {
    params.validate()?;
    let eps = params.eps();
    if let Some((rho, level)) = params.parabolic_form()? {
        let ln_inv = (1.0 / level).ln();
        let mut n_min_real = 2.0 * rho * (1.0 / eps - rho) * ln_inv;
        if let RuleFamily::Wald {
            min_size_override: true,
        } = params.family
        {
            n_min_real = ln_inv / eps;
        }
        let n_max_real = ln_inv / (2.0 * eps * eps);
        let raw_min = n_min_real.ceil();
        let degenerate_min = raw_min < 1.0;
        return Ok(SampleRange {
            n_min: raw_min.max(1.0) as u64,
            n_max: n_max_real.ceil().max(1.0) as u64,
            n_min_real,
            n_max_real,
            degenerate_min,
        });
    }
    let rule = StoppingRule::new(params)?;
    let n_min = first_n(|n| (0..=n).any(|k| rule.stops(k, n)), 1, "minimum sample size")?;
    let n_max = first_n(|n| all_stop(&rule, n), n_min, "maximum sample size")?;
    Ok(SampleRange {
        n_min,
        n_max,
        n_min_real: n_min as f64,
        n_max_real: n_max as f64,
        degenerate_min: false,
    })
}

pub fn n_min(params: &DesignParams) -> Result<u64> {
    Ok(sample_size_range(params)?.n_min)
}

pub fn n_max(params: &DesignParams) -> Result<u64> {
    Ok(sample_size_range(params)?.n_max)
}

/// Checks `n_min <= n_1 < ... < n_{s-1} < n_max <= n_s`.
pub fn validate_sizes(sizes: &[u64], range: &SampleRange) -> Result<()> {
    let Some((&last, _)) = sizes.split_last() else {
        return Err(Error::Schedule {
            inequality: "s >= 1",
            detail: "empty schedule".into(),
        });
    };
    if sizes[0] < range.n_min {
        return Err(Error::Schedule {
            inequality: "N_min <= n_1",
            detail: format!("n_1 = {} < N_min = {}", sizes[0], range.n_min),
        });
    }
    for w in sizes.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Schedule {
                inequality: "n_1 < ... < n_s",
                detail: format!("{} is not below {}", w[0], w[1]),
            });
        }
    }
    if sizes.len() >= 2 && sizes[sizes.len() - 2] >= range.n_max {
        return Err(Error::Schedule {
            inequality: "n_{s-1} < N_max",
            detail: format!("n_(s-1) = {} >= N_max = {}", sizes[sizes.len() - 2], range.n_max),
        });
    }
    if last < range.n_max {
        return Err(Error::Schedule {
            inequality: "N_max <= n_s",
            detail: format!("n_s = {last} < N_max = {}", range.n_max),
        });
    }
    Ok(())
}

/// Sample sizes `n_1 < ... < n_s` for the plan.
///
/// Equal groups interpolate linearly between the unrounded minimum and
/// maximum sizes and round each stage up.
pub fn schedule(params: &DesignParams) -> Result<Vec<u64>> {
    let range = sample_size_range(params)?;
    let sizes = match &params.schedule {
        SchedulePolicy::FullySequential => (range.n_min..=range.n_max).collect(),
        SchedulePolicy::Explicit(sizes) => sizes.clone(),
        SchedulePolicy::EqualGroups => {
            let s = params.stages;
            if s == 1 {
                vec![range.n_max]
            } else {
                let (a, b) = (range.n_min_real, range.n_max_real);
                (0..s)
                    .map(|i| {
                        let x = a + (i as f64) * (b - a) / ((s - 1) as f64);
                        (x.ceil() as u64).clamp(range.n_min, range.n_max)
                    })
                    .collect()
            }
        }
    };
    validate_sizes(&sizes, &range)?;
    Ok(sizes)
}

/// Sorted, disjoint inclusive integer intervals of success counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContinuationSet {
    intervals: Vec<(u64, u64)>,
}

impl ContinuationSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds the set from intervals, merging overlaps and adjacency.
    pub fn from_intervals(mut intervals: Vec<(u64, u64)>) -> Result<Self> {
        if let Some(&(a, b)) = intervals.iter().find(|(a, b)| a > b) {
            return Err(Error::MalformedPlan(format!("interval [{a}, {b}] is reversed")));
        }
        intervals.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1.saturating_add(1) => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Ok(Self { intervals: merged })
    }

    pub fn from_predicate(n: u64, mut member: impl FnMut(u64) -> bool) -> Self {
        let mut intervals = Vec::new();
        let mut open: Option<u64> = None;
        for k in 0..=n {
            match (member(k), open) {
                (true, None) => open = Some(k),
                (false, Some(a)) => {
                    intervals.push((a, k - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(a) = open {
            intervals.push((a, n));
        }
        Self { intervals }
    }

    pub fn intervals(&self) -> &[(u64, u64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> u64 {
        self.intervals.iter().map(|(a, b)| b - a + 1).sum()
    }

    pub fn contains(&self, k: u64) -> bool {
        let i = self.intervals.partition_point(|&(_, b)| b < k);
        self.intervals.get(i).is_some_and(|&(a, _)| a <= k)
    }

    pub fn min(&self) -> Option<u64> {
        self.intervals.first().map(|i| i.0)
    }

    pub fn max(&self) -> Option<u64> {
        self.intervals.last().map(|i| i.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.intervals.iter().flat_map(|&(a, b)| a..=b)
    }

    /// The image under `k -> n - k`.
    pub fn reflect(&self, n: u64) -> Self {
        let intervals = self.intervals.iter().rev().map(|&(a, b)| (n - b, n - a)).collect();
        Self { intervals }
    }
}

/// A fully materialized plan: sample sizes and per-stage continuation sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    params: DesignParams,
    sizes: Vec<u64>,
    continuation: Vec<ContinuationSet>,
}

impl SamplingPlan {
    /// Evaluates the stopping rule at every stage of the schedule.
    pub fn materialize(params: &DesignParams) -> Result<Self> {
        let sizes = schedule(params)?;
        let rule = StoppingRule::new(params)?;
        let s = sizes.len();
        let continuation: Vec<ContinuationSet> = sizes
            .par_iter()
            .map(|&n| ContinuationSet::from_predicate(n, |k| !rule.stops(k, n)))
            .collect();
        if let Some(k) = continuation[s - 1].min() {
            return Err(Error::NonTerminating { k, n: sizes[s - 1] });
        }
        Ok(Self {
            params: params.clone(),
            sizes,
            continuation,
        })
    }

    /// Assembles a plan from stored parts, checking structural invariants only.
    pub fn from_parts(params: DesignParams, sizes: Vec<u64>, continuation: Vec<ContinuationSet>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() != continuation.len() {
            return Err(Error::MalformedPlan(format!(
                "{} sizes but {} continuation sets",
                sizes.len(),
                continuation.len()
            )));
        }
        if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedPlan("sample sizes must be positive and strictly increasing".into()));
        }
        for (&n, c) in sizes.iter().zip(&continuation) {
            if c.max().is_some_and(|m| m > n) {
                return Err(Error::MalformedPlan(format!("continuation set exceeds n = {n}")));
            }
        }
        if let Some(k) = continuation.last().and_then(|c| c.min()) {
            return Err(Error::NonTerminating {
                k,
                n: *sizes.last().unwrap_or(&0),
            });
        }
        Ok(Self {
            params,
            sizes,
            continuation,
        })
    }

    pub fn params(&self) -> &DesignParams {
        &self.params
    }

    pub fn eps(&self) -> &ExactDecimal {
        &self.params.eps
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn stages(&self) -> usize {
        self.sizes.len()
    }

    pub fn continuation(&self) -> &[ContinuationSet] {
        &self.continuation
    }

    pub fn continues(&self, stage: usize, k: u64) -> bool {
        self.continuation[stage].contains(k)
    }

    /// Whether every continuation set is invariant under `k -> n - k`.
    pub fn is_symmetric(&self) -> bool {
        self.sizes
            .iter()
            .zip(&self.continuation)
            .all(|(&n, c)| c.reflect(n) == *c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seven_stage_params() -> DesignParams {
        DesignParams::double_parabolic(0.05, 0.05, 0.75, 2.6759, 7).unwrap()
    }

    #[test]
    fn worked_example_decisions() {
        let rule = StoppingRule::new(&seven_stage_params()).unwrap();
        assert_eq!(rule.decide(12, 59), Decision::Continue);
        assert_eq!(rule.decide(17, 116), Decision::Continue);
        assert_eq!(rule.decide(31, 173), Decision::Continue);
        assert_eq!(rule.decide(46, 231), Decision::Continue);
        assert_eq!(rule.decide(52, 288), Decision::Stop);
        assert_eq!(rule.decide(0, 59), Decision::Stop);
    }

    #[test]
    fn ranges_and_schedules() {
        let p = seven_stage_params();
        let r = sample_size_range(&p).unwrap();
        assert_eq!((r.n_min, r.n_max), (59, 403));
        assert!((r.n_min_real - 58.080_517_721_977_56).abs() < 1e-9);
        assert!((r.n_max_real - 402.289_300_238_805_6).abs() < 1e-9);
        assert_eq!(schedule(&p).unwrap(), vec![59, 116, 173, 231, 288, 345, 403]);
        let two = DesignParams { stages: 2, ..p.clone() };
        assert_eq!(schedule(&two).unwrap(), vec![59, 403]);
        let one = DesignParams { stages: 1, ..p.clone() };
        assert_eq!(schedule(&one).unwrap(), vec![403]);

        let q = DesignParams::double_parabolic(0.1, 0.05, 0.75, 2.4174, 1)
            .unwrap()
            .with_schedule(SchedulePolicy::FullySequential);
        let r = sample_size_range(&q).unwrap();
        assert_eq!((r.n_min, r.n_max), (30, 106));
        assert_eq!(schedule(&q).unwrap(), (30..=106).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_ranges() {
        let p = DesignParams::double_parabolic(0.1, 0.05, 0.0, 2.0, 3).unwrap();
        let r = sample_size_range(&p).unwrap();
        assert_eq!(r.n_min, 1);
        assert!(r.degenerate_min);
        let p = DesignParams::double_parabolic(0.1, 0.5, 0.75, 1.999_999, 1).unwrap();
        assert_eq!(n_max(&p).unwrap(), 1);
    }

    #[test]
    fn explicit_schedule_validation() {
        let p = seven_stage_params();
        let ok = p.clone().with_schedule(SchedulePolicy::Explicit(vec![59, 200, 403]));
        assert!(schedule(&ok).is_ok());
        let cases = [
            (vec![58, 200, 403], "N_min <= n_1"),
            (vec![59, 200, 200, 403], "n_1 < ... < n_s"),
            (vec![59, 403, 500], "n_{s-1} < N_max"),
            (vec![59, 200, 402], "N_max <= n_s"),
        ];
        for (sizes, which) in cases {
            let bad = p.clone().with_schedule(SchedulePolicy::Explicit(sizes));
            match schedule(&bad) {
                Err(Error::Schedule { inequality, .. }) => assert_eq!(inequality, which),
                other => panic!("expected schedule error, got {other:?}"),
            }
        }
    }

    #[test]
    fn everything_stops_at_n_max() {
        for (eps, delta, rho, zeta) in [(0.05, 0.05, 0.75, 2.6759), (0.1, 0.01, 0.5, 3.0), (0.02, 0.1, 1.0, 1.5)] {
            let p = DesignParams::double_parabolic(eps, delta, rho, zeta, 5).unwrap();
            let rule = StoppingRule::new(&p).unwrap();
            let n = n_max(&p).unwrap();
            assert!((0..=n).all(|k| rule.stops(k, n)));
            let m = n_min(&p).unwrap();
            assert!((0..=m).any(|k| rule.stops(k, m)));
            assert!((0..m).all(|k| !rule.stops(k, m - 1)));
        }
    }

    #[test]
    fn seven_stage_plan_first_stage_is_one_interval() {
        let plan = SamplingPlan::materialize(&seven_stage_params()).unwrap();
        let c1 = &plan.continuation()[0];
        assert_eq!(c1.intervals().len(), 1);
        let (a, b) = c1.intervals()[0];
        assert_eq!(a + b, 59);
        assert!(plan.continuation()[6].is_empty());
        assert!(plan.is_symmetric());
        let rule = StoppingRule::new(&seven_stage_params()).unwrap();
        for k in 0..=59 {
            assert_eq!(c1.contains(k), rule.decide(k, 59) == Decision::Continue);
        }
    }

    #[test]
    fn fully_sequential_first_stage_is_proper_subset() {
        let q = DesignParams::double_parabolic(0.1, 0.05, 0.75, 2.4174, 1)
            .unwrap()
            .with_schedule(SchedulePolicy::FullySequential);
        let plan = SamplingPlan::materialize(&q).unwrap();
        let first = &plan.continuation()[0];
        assert!(!first.is_empty());
        assert!(first.len() < plan.sizes()[0] + 1);
    }

    #[test]
    fn rule_c_matches_clopper_pearson_inclusion() {
        let p = DesignParams::double_parabolic(0.1, 0.05, 0.75, 0.5, 1).unwrap();
        let c = StoppingRule::new(&p.clone().with_family(RuleFamily::ClopperPearson)).unwrap();
        let g = StoppingRule::new(&p.with_family(RuleFamily::Inclusion {
            ci: CiFamily::ClopperPearson,
        }))
        .unwrap();
        assert_eq!(c.decide(0, 40), g.decide(0, 40));
    }

    #[test]
    fn continuation_sets() {
        let c = ContinuationSet::from_intervals(vec![(5, 7), (1, 2), (3, 3), (10, 12)]).unwrap();
        assert_eq!(c.intervals(), &[(1, 3), (5, 7), (10, 12)]);
        assert!(!c.contains(4) && !c.contains(8) && c.contains(12) && !c.contains(0) && c.contains(6));
        assert_eq!(c.len(), 9);
        assert_eq!(c.reflect(12).intervals(), &[(0, 2), (5, 7), (9, 11)]);
        let c = ContinuationSet::from_intervals(vec![(4, 6), (1, 3)]).unwrap();
        assert_eq!(c.intervals(), &[(1, 6)]);
        assert!(ContinuationSet::from_intervals(vec![(3, 1)]).is_err());
        let d = ContinuationSet::from_predicate(9, |k| k % 4 != 0);
        assert_eq!(d.intervals(), &[(1, 3), (5, 7), (9, 9)]);
    }

    #[test]
    fn params_validation() {
        assert!(DesignParams::double_parabolic(0.6, 0.05, 0.5, 1.0, 2).is_err());
        assert!(DesignParams::double_parabolic(0.1, 0.05, 0.5, 20.0, 2).is_err());
        assert!(DesignParams::double_parabolic(0.4, 0.05, 1.0, 1.0, 2).is_err());
        assert!(DesignParams::double_parabolic(0.1, 0.05, 0.5, 1.0, 0).is_err());
    }
}
