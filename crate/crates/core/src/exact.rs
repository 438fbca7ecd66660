//! Exact stopping distributions, coverage and the interval bounds on the
//! complementary coverage probability.
//!
//! The engine runs the forward recursion over surviving success counts: the
//! stage-1 counts are Binomial(n_1, p); counts in the continuation set are
//! convolved with Binomial(n_{l+1} - n_l, p) and every other count is a
//! stopped state ("atom"). Atoms are sorted by their estimate `k/n` so that
//! every tail probability is a prefix or suffix sum.

use std::cmp::Ordering;
use std::ops::Range;

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::decimal::{cmp_offset, ExactDecimal, Offset};
use crate::error::{Error, Result};
use crate::mathkern::{binom_pmf_vec, CompensatedSum};
use crate::rules::SamplingPlan;

/// A reachable stopped state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Atom {
    pub stage: usize,
    pub k: u64,
    pub n: u64,
}

impl Atom {
    pub fn estimate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

fn cmp_ratio(k1: u64, n1: u64, k2: u64, n2: u64) -> Ordering {
    (k1 as u128 * n2 as u128).cmp(&(k2 as u128 * n1 as u128))
}

/// Per-stage part of a [`StageDistribution`].
#[derive(Clone, Debug, PartialEq)]
pub struct StageMass {
    pub n: u64,
    /// `(k, probability of stopping here with k successes)`, in increasing `k`.
    pub stopped: Vec<(u64, f64)>,
    pub stopped_total: f64,
    /// Probability of continuing past this stage.
    pub continuing: f64,
}

/// Exact distribution of the stopping state for one value of `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDistribution {
    pub p: f64,
    pub stages: Vec<StageMass>,
    /// Mass flushed to zero because it fell below the smallest normal double.
    pub truncated: f64,
}

impl StageDistribution {
    pub fn total_stopped(&self) -> f64 {
        self.stages.iter().map(|s| s.stopped_total).collect::<CompensatedSum>().value()
    }
}

/// Interval bounds on the complementary coverage probability over `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcpBounds {
    pub a: f64,
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Atom masses at one `p`, in estimate order, with cumulative sums.
#[derive(Clone, Debug)]
pub struct TailProfile {
    p: f64,
    /// `prefix[i]` is the mass of the first `i` atoms in estimate order.
    prefix: Vec<f64>,
    /// `suffix[i]` is the mass of atoms `i..`.
    suffix: Vec<f64>,
    truncated: f64,
}

impl TailProfile {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn truncated(&self) -> f64 {
        self.truncated
    }
}

struct Forward {
    /// Atom masses in stage-major order.
    masses: Vec<f64>,
    continuing: Vec<f64>,
    truncated: f64,
}

/// Precomputed atom layout of a plan; evaluations at different `p` are independent.
#[derive(Clone, Debug)]
pub struct ExactEngine<'a> {
    plan: &'a SamplingPlan,
    /// Atoms in stage-major, then increasing-`k` order.
    atoms: Vec<Atom>,
    stage_ranges: Vec<Range<usize>>,
    /// Atom indices sorted by estimate.
    order: Vec<usize>,
}

impl<'a> ExactEngine<'a> {
    pub fn new(plan: &'a SamplingPlan) -> Self {
        let sizes = plan.sizes();
        let mut atoms = Vec::new();
        let mut stage_ranges = Vec::with_capacity(sizes.len());
        let mut reach: Option<(u64, u64)> = Some((0, sizes[0]));
        for (stage, &n) in sizes.iter().enumerate() {
            let start = atoms.len();
            let cont = &plan.continuation()[stage];
            if let Some((lo, hi)) = reach {
                let mut k = lo;
                for &(a, b) in cont.intervals() {
                    if b < lo || a > hi {
                        continue;
                    }
                    atoms.extend((k..a.max(k)).map(|k| Atom { stage, k, n }));
                    k = k.max(b + 1);
                }
                if k <= hi {
                    atoms.extend((k..=hi).map(|k| Atom { stage, k, n }));
                }
            }
            stage_ranges.push(start..atoms.len());
            reach = match (reach, cont.min(), cont.max(), sizes.get(stage + 1)) {
                (Some((lo, hi)), Some(a), Some(b), Some(&next)) if a <= hi && b >= lo => {
                    Some((a.max(lo), b.min(hi) + (next - n)))
                }
                _ => None,
            };
        }
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&i, &j| {
            let (x, y) = (&atoms[i], &atoms[j]);
            cmp_ratio(x.k, x.n, y.k, y.n).then(x.stage.cmp(&y.stage))
        });
        Self {
            plan,
            atoms,
            stage_ranges,
            order,
        }
    }

    pub fn plan(&self) -> &SamplingPlan {
        self.plan
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    fn eps(&self) -> &ExactDecimal {
        self.plan.eps()
    }

    fn forward(&self, p: f64) -> Result<Forward> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain {
                name: "p",
                value: p,
                expected: "0 <= p <= 1",
            });
        }
        let sizes = self.plan.sizes();
        let mut masses = vec![0.0; self.atoms.len()];
        let mut continuing = vec![0.0; sizes.len()];
        let mut truncated = 0.0;
        let (mut off, mut cur) = binom_pmf_vec(sizes[0], p);
        for stage in 0..sizes.len() {
            if stage > 0 {
                if cur.is_empty() {
                    break;
                }
                let (g_off, g) = binom_pmf_vec(sizes[stage] - sizes[stage - 1], p);
                let mut out = vec![0.0; cur.len() + g.len() - 1];
                for (i, &c) in cur.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    for (j, &w) in g.iter().enumerate() {
                        out[i + j] += c * w;
                    }
                }
                off += g_off;
                cur = out;
            }
            let cont = &self.plan.continuation()[stage];
            let atoms = &self.atoms[self.stage_ranges[stage].clone()];
            let base = self.stage_ranges[stage].start;
            let mut next_off = None;
            let mut next: Vec<f64> = Vec::new();
            let mut ai = 0;
            for (j, &m) in cur.iter().enumerate() {
                let k = off + j as u64;
                if cont.contains(k) {
                    let o = *next_off.get_or_insert(k);
                    let idx = (k - o) as usize;
                    next.resize(idx, 0.0);
                    next.push(m);
                } else {
                    while ai < atoms.len() && atoms[ai].k < k {
                        ai += 1;
                    }
                    debug_assert!(ai < atoms.len() && atoms[ai].k == k, "unreachable atom k={k}");
                    if ai < atoms.len() && atoms[ai].k == k {
                        masses[base + ai] = m;
                    }
                }
            }
            for v in next.iter_mut() {
                if *v != 0.0 && *v < f64::MIN_POSITIVE {
                    truncated += *v;
                    *v = 0.0;
                }
            }
            let first = next.iter().position(|&v| v != 0.0);
            let last = next.iter().rposition(|&v| v != 0.0);
            match (first, last, next_off) {
                (Some(a), Some(b), Some(o)) => {
                    off = o + a as u64;
                    cur = next[a..=b].to_vec();
                }
                _ => cur = Vec::new(),
            }
            continuing[stage] = cur.iter().copied().collect::<CompensatedSum>().value();
        }
        Ok(Forward {
            masses,
            continuing,
            truncated,
        })
    }

    /// Exact stopping distribution at `p`.
    pub fn distribution(&self, p: f64) -> Result<StageDistribution> {
        let fw = self.forward(p)?;
        let stages = self
            .plan
            .sizes()
            .iter()
            .enumerate()
            .map(|(stage, &n)| {
                let range = self.stage_ranges[stage].clone();
                let stopped: Vec<(u64, f64)> = range.clone().map(|i| (self.atoms[i].k, fw.masses[i])).collect();
                let stopped_total = stopped.iter().map(|s| s.1).collect::<CompensatedSum>().value();
                StageMass {
                    n,
                    stopped,
                    stopped_total,
                    continuing: fw.continuing[stage],
                }
            })
            .collect();
        Ok(StageDistribution {
            p,
            stages,
            truncated: fw.truncated,
        })
    }

    /// Atom masses at `p` arranged for tail queries.
    pub fn profile(&self, p: f64) -> Result<TailProfile> {
        let fw = self.forward(p)?;
        let m = self.order.len();
        let mut prefix = Vec::with_capacity(m + 1);
        let mut acc = CompensatedSum::new();
        prefix.push(0.0);
        for &i in &self.order {
            acc.add(fw.masses[i]);
            prefix.push(acc.value());
        }
        let mut suffix = vec![0.0; m + 1];
        let mut acc = CompensatedSum::new();
        for (pos, &i) in self.order.iter().enumerate().rev() {
            acc.add(fw.masses[i]);
            suffix[pos] = acc.value();
        }
        Ok(TailProfile {
            p,
            prefix,
            suffix,
            truncated: fw.truncated,
        })
    }

    fn sorted_atom(&self, pos: usize) -> &Atom {
        &self.atoms[self.order[pos]]
    }

    /// `Pr{p_hat + offset*eps <= x}` under the profile's `p`.
    pub fn low(&self, prof: &TailProfile, offset: Offset, x: f64) -> f64 {
        let eps = self.eps();
        let idx = self.partition(|a| cmp_offset(a.k, a.n, offset, eps, x) != Ordering::Greater);
        prof.prefix[idx]
    }

    /// `Pr{p_hat + offset*eps >= x}` under the profile's `p`.
    pub fn high(&self, prof: &TailProfile, offset: Offset, x: f64) -> f64 {
        let eps = self.eps();
        let idx = self.partition(|a| cmp_offset(a.k, a.n, offset, eps, x) == Ordering::Less);
        prof.suffix[idx]
    }

    fn partition(&self, pred: impl Fn(&Atom) -> bool) -> usize {
        let (mut lo, mut hi) = (0, self.order.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if pred(self.sorted_atom(mid)) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `Pr{|p_hat - p| >= eps | p}` from a profile taken at `p`.
    pub fn ccp_from_profile(&self, prof: &TailProfile) -> f64 {
        let p = prof.p;
        let v = self.low(prof, Offset::Plus, p) + self.high(prof, Offset::Minus, p);
        v.clamp(0.0, 1.0)
    }

    /// Complementary coverage probability, accumulated from the miss states directly.
    pub fn ccp(&self, p: f64) -> Result<f64> {
        Ok(self.ccp_from_profile(&self.profile(p)?))
    }

    pub fn coverage(&self, p: f64) -> Result<f64> {
        Ok(1.0 - self.ccp(p)?)
    }

    /// `Pr{p_hat <= x | p}`.
    pub fn tail_low(&self, x: f64, p: f64) -> Result<f64> {
        Ok(self.low(&self.profile(p)?, Offset::None, x))
    }

    /// `Pr{p_hat >= x | p}`.
    pub fn tail_high(&self, x: f64, p: f64) -> Result<f64> {
        Ok(self.high(&self.profile(p)?, Offset::None, x))
    }

    /// Bounds on the complementary coverage over `[a, b]` from profiles at both ends.
    pub fn bounds_from_profiles(&self, pa: &TailProfile, pb: &TailProfile) -> CcpBounds {
        let (a, b) = (pa.p, pb.p);
        let lower = self.low(pb, Offset::Plus, a) + self.high(pa, Offset::Minus, b);
        let upper = self.low(pa, Offset::Plus, b) + self.high(pb, Offset::Minus, a) + pa.truncated + pb.truncated;
        CcpBounds {
            a,
            b,
            lower: lower.clamp(0.0, 1.0),
            upper: upper.clamp(0.0, 1.0),
        }
    }

    /// Lower and upper bounds on `ccp(p)` valid for every `p` in `[a, b]`.
    ///
    /// The bounds rely on `Pr{p_hat <= x | p}` decreasing and
    /// `Pr{p_hat >= x | p}` increasing in `p`.
    pub fn ccp_bounds(&self, a: f64, b: f64) -> Result<CcpBounds> {
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::Domain {
                name: "interval",
                value: b - a,
                expected: "0 <= a <= b <= 1",
            });
        }
        let pa = self.profile(a)?;
        let pb = if b == a { pa.clone() } else { self.profile(b)? };
        Ok(self.bounds_from_profiles(&pa, &pb))
    }

    /// `(n_l, Pr{n = n_l})` for every stage.
    pub fn sample_number_distribution(&self, p: f64) -> Result<Vec<(u64, f64)>> {
        let d = self.distribution(p)?;
        Ok(d.stages.iter().map(|s| (s.n, s.stopped_total)).collect())
    }

    /// Average sample number `E[n]`.
    pub fn asn(&self, p: f64) -> Result<f64> {
        let fw = self.forward(p)?;
        let sizes = self.plan.sizes();
        let mut acc = CompensatedSum::new();
        acc.add(sizes[0] as f64);
        for l in 1..sizes.len() {
            acc.add((sizes[l] - sizes[l - 1]) as f64 * fw.continuing[l - 1]);
        }
        Ok(acc.value())
    }

    fn shifted(&self, k: u64, n: u64, sign: i8) -> BigRational {
        shifted_value((sign, k, n), self.eps())
    }

    /// `Pr{p_hat + eps <= x}`, or `< x` when `strict`, for an exact threshold.
    pub fn low_at(&self, prof: &TailProfile, x: &BigRational, strict: bool) -> f64 {
        let idx = self.partition(|a| {
            let c = self.shifted(a.k, a.n, 1).cmp(x);
            c == Ordering::Less || (!strict && c == Ordering::Equal)
        });
        prof.prefix[idx]
    }

    /// `Pr{p_hat - eps >= x}`, or `> x` when `strict`, for an exact threshold.
    pub fn high_at(&self, prof: &TailProfile, x: &BigRational, strict: bool) -> f64 {
        let idx = self.partition(|a| {
            let c = self.shifted(a.k, a.n, -1).cmp(x);
            c == Ordering::Less || (strict && c == Ordering::Equal)
        });
        prof.suffix[idx]
    }

    /// Exact discontinuity points strictly inside `(a, b)`, in increasing order.
    pub fn discontinuities_between(&self, a: f64, b: f64) -> Vec<BigRational> {
        let (Some(ra), Some(rb)) = (BigRational::from_float(a), BigRational::from_float(b)) else {
            return Vec::new();
        };
        self.discontinuity_points()
            .into_iter()
            .map(|t| shifted_value(t, self.eps()))
            .filter(|c| *c > ra && *c < rb)
            .collect()
    }

    fn discontinuity_points(&self) -> Vec<(i8, u64, u64)> {
        let eps = self.eps();
        let mut pts: Vec<(i8, u64, u64)> = Vec::new();
        let mut seen: Option<(u64, u64)> = None;
        for pos in 0..self.order.len() {
            let a = self.sorted_atom(pos);
            if seen.is_some_and(|(k, n)| cmp_ratio(k, n, a.k, a.n) == Ordering::Equal) {
                continue;
            }
            seen = Some((a.k, a.n));
            for (sign, off) in [(-1i8, Offset::Minus), (1, Offset::Plus)] {
                let inside = cmp_offset(a.k, a.n, off, eps, 0.0) == Ordering::Greater
                    && cmp_offset(a.k, a.n, off, eps, 1.0) == Ordering::Less;
                if inside {
                    pts.push((sign, a.k, a.n));
                }
            }
        }
        pts.sort_by(|x, y| cmp_shifted(*x, *y, eps));
        pts.dedup_by(|x, y| cmp_shifted(*x, *y, eps) == Ordering::Equal);
        pts
    }

    /// Points `k/n +- eps` in `(0, 1)` over all reachable stopped states, where
    /// the complementary coverage may jump.
    pub fn discontinuity_set(&self) -> Vec<f64> {
        let eps = self.eps().value();
        self.discontinuity_points()
            .into_iter()
            .map(|(s, k, n)| k as f64 / n as f64 + s as f64 * eps)
            .collect()
    }
}

/// Exact comparison of `k1/n1 + s1 eps` with `k2/n2 + s2 eps`.
fn cmp_shifted(x: (i8, u64, u64), y: (i8, u64, u64), eps: &ExactDecimal) -> Ordering {
    if x.0 == y.0 {
        return cmp_ratio(x.1, x.2, y.1, y.2);
    }
    shifted_value(x, eps).cmp(&shifted_value(y, eps))
}

/// `k/n + s eps` as an exact rational.
fn shifted_value((s, k, n): (i8, u64, u64), eps: &ExactDecimal) -> BigRational {
    let num = BigInt::from(k) * BigInt::from(eps.denom()) + BigInt::from(s) * BigInt::from(eps.numer()) * BigInt::from(n);
    BigRational::new(num, BigInt::from(n) * BigInt::from(eps.denom()))
}

/// See [`ExactEngine::distribution`].
pub fn stopping_distribution(plan: &SamplingPlan, p: f64) -> Result<StageDistribution> {
    ExactEngine::new(plan).distribution(p)
}

pub fn ccp(plan: &SamplingPlan, p: f64) -> Result<f64> {
    ExactEngine::new(plan).ccp(p)
}

pub fn coverage(plan: &SamplingPlan, p: f64) -> Result<f64> {
    ExactEngine::new(plan).coverage(p)
}

pub fn tail_low(plan: &SamplingPlan, x: f64, p: f64) -> Result<f64> {
    ExactEngine::new(plan).tail_low(x, p)
}

pub fn tail_high(plan: &SamplingPlan, x: f64, p: f64) -> Result<f64> {
    ExactEngine::new(plan).tail_high(x, p)
}

pub fn ccp_bounds(plan: &SamplingPlan, a: f64, b: f64) -> Result<CcpBounds> {
    ExactEngine::new(plan).ccp_bounds(a, b)
}

pub fn sample_number_distribution(plan: &SamplingPlan, p: f64) -> Result<Vec<(u64, f64)>> {
    ExactEngine::new(plan).sample_number_distribution(p)
}

pub fn asn(plan: &SamplingPlan, p: f64) -> Result<f64> {
    ExactEngine::new(plan).asn(p)
}

pub fn discontinuity_set(plan: &SamplingPlan) -> Vec<f64> {
    ExactEngine::new(plan).discontinuity_set()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{ContinuationSet, DesignParams};

    fn seven_stage_plan() -> SamplingPlan {
        SamplingPlan::materialize(&DesignParams::double_parabolic(0.05, 0.05, 0.75, 2.6759, 7).unwrap()).unwrap()
    }

    fn tiny_plan(eps: f64) -> SamplingPlan {
        let params = DesignParams::double_parabolic(eps, 0.05, 0.5, 1.0, 2).unwrap();
        SamplingPlan::from_parts(
            params,
            vec![2, 4],
            vec![ContinuationSet::from_intervals(vec![(1, 1)]).unwrap(), ContinuationSet::empty()],
        )
        .unwrap()
    }

    fn single_stage(n: u64, eps: f64) -> SamplingPlan {
        let params = DesignParams::double_parabolic(eps, 0.05, 0.5, 1.0, 1).unwrap();
        SamplingPlan::from_parts(params, vec![n], vec![ContinuationSet::empty()]).unwrap()
    }

    #[test]
    fn single_stage_is_binomial() {
        let plan = single_stage(12, 0.1);
        let d = stopping_distribution(&plan, 0.3).unwrap();
        let (_, pmf) = binom_pmf_vec(12, 0.3);
        for (k, m) in &d.stages[0].stopped {
            assert_eq!(*m, pmf[*k as usize]);
        }
        assert_eq!(asn(&plan, 0.3).unwrap(), 12.0);
        assert_eq!(sample_number_distribution(&plan, 0.3).unwrap().len(), 1);
    }

    #[test]
    fn tiny_plan_by_hand() {
        // stage 1: k=0 (1/4), k=2 (1/4) stop; k=1 continues with 1/2
        // stage 2: k in {1,2,3} with masses 1/8, 1/4, 1/8
        let plan = tiny_plan(0.2);
        let d = stopping_distribution(&plan, 0.5).unwrap();
        assert_eq!(d.stages[0].stopped, vec![(0, 0.25), (2, 0.25)]);
        let want = [(1, 0.125), (2, 0.25), (3, 0.125)];
        for (got, want) in d.stages[1].stopped.iter().zip(want) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
        assert_eq!(asn(&plan, 0.5).unwrap(), 3.0);
        // at p = 0.5 with eps = 0.2: misses are 0/2, 2/2, 1/4, 3/4
        assert!((ccp(&plan, 0.5).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn conservation_and_symmetry_on_seven_stage_plan() {
        let plan = seven_stage_plan();
        let eng = ExactEngine::new(&plan);
        for p in [0.01, 0.1, 0.3, 0.5, 0.77] {
            let d = eng.distribution(p).unwrap();
            assert!((d.total_stopped() - 1.0).abs() < 1e-12);
            assert_eq!(d.stages.last().unwrap().continuing, 0.0);
            let c = eng.ccp(p).unwrap();
            let m = eng.ccp(1.0 - p).unwrap();
            assert!((c - m).abs() < 1e-12, "p={p}");
            let asn = eng.asn(p).unwrap();
            assert!((59.0..=403.0 + 1e-9).contains(&asn), "p={p} asn={asn}");
        }
    }

    #[test]
    fn tails() {
        let plan = seven_stage_plan();
        let eng = ExactEngine::new(&plan);
        assert!((eng.tail_low(1.0, 0.3).unwrap() - 1.0).abs() < 1e-14);
        let x = 0.123_456_789;
        let s = eng.tail_low(x, 0.2).unwrap() + eng.tail_high(x, 0.2).unwrap();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(eng.tail_high(0.5, 0.4).unwrap() <= eng.tail_high(0.5, 0.45).unwrap());
    }

    #[test]
    fn bounds_bracket_and_collapse() {
        let plan = seven_stage_plan();
        let eng = ExactEngine::new(&plan);
        let b = eng.ccp_bounds(0.3, 0.3).unwrap();
        let c = eng.ccp(0.3).unwrap();
        assert_eq!(b.lower, c);
        assert_eq!(b.upper, c);
        let b = eng.ccp_bounds(0.3, 0.31).unwrap();
        let mid = eng.ccp(0.305).unwrap();
        assert!(b.lower <= mid && mid <= b.upper);
        let mut prev = f64::INFINITY;
        for w in [1e-2, 1e-4, 1e-6] {
            let b = eng.ccp_bounds(0.2013, 0.2013 + w).unwrap();
            assert!(b.upper - b.lower <= prev);
            prev = b.upper - b.lower;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn discontinuities() {
        let plan = single_stage(2, 0.25);
        assert_eq!(discontinuity_set(&plan), vec![0.25, 0.75]);

        let plan = seven_stage_plan();
        let pts = discontinuity_set(&plan);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        for &c in &pts {
            assert!(pts.iter().any(|&d| (d - (1.0 - c)).abs() < 1e-12));
        }
        let eng = ExactEngine::new(&plan);
        let jump = pts
            .iter()
            .map(|&c| (eng.ccp(c + 1e-9).unwrap() - eng.ccp(c - 1e-9).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(jump > 1e-4);
    }

    #[test]
    fn degenerate_p() {
        let plan = seven_stage_plan();
        let eng = ExactEngine::new(&plan);
        let d = eng.distribution(0.0).unwrap();
        assert_eq!(d.stages[0].stopped[0], (0, 1.0));
        assert_eq!(eng.ccp(0.0).unwrap(), 0.0);
        assert!(eng.ccp(1.5).is_err());
    }
}
