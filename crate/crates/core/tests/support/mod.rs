//! Shared helpers for integration tests: random plans and an exhaustive path oracle.
#![allow(dead_code)]

use num_rational::BigRational;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;

use seqprop::rules::{ContinuationSet, DesignParams, SamplingPlan};

pub const ORACLE_EPS: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.25];

/// A plan with random sizes up to `n_max` and random continuation sets.
pub fn random_small_plan(rng: &mut StdRng, n_max: u64) -> SamplingPlan {
    let eps = *ORACLE_EPS.choose(rng).unwrap();
    let params = DesignParams::double_parabolic(eps, 0.05, 0.75, 1.0, 1).unwrap();
    let stages = rng.random_range(1..=5usize).min(n_max as usize);
    let mut pool: Vec<u64> = (1..=n_max).collect();
    let mut sizes = Vec::with_capacity(stages);
    for _ in 0..stages {
        let i = rng.random_range(0..pool.len());
        sizes.push(pool.swap_remove(i));
    }
    sizes.sort_unstable();
    let continuation = sizes
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            if l + 1 == sizes.len() {
                ContinuationSet::empty()
            } else {
                let keep = rng.random_range(0.2..0.9);
                ContinuationSet::from_predicate(n, |_| rng.random_bool(keep))
            }
        })
        .collect();
    SamplingPlan::from_parts(params, sizes, continuation).unwrap()
}

/// A materialized double-parabolic plan with random design parameters.
pub fn random_dp_plan(rng: &mut StdRng) -> SamplingPlan {
    let eps = *[0.1, 0.15, 0.2, 0.25].choose(rng).unwrap();
    let delta = *[0.01, 0.05, 0.1].choose(rng).unwrap();
    let rho = *[0.0, 0.5, 2.0 / 3.0, 0.75, 1.0].choose(rng).unwrap();
    let zeta = rng.random_range(0.5..3.0);
    let mut stages = rng.random_range(1..=8);
    loop {
        let params = DesignParams::double_parabolic(eps, delta, rho, zeta, stages).unwrap();
        // narrow size ranges cannot hold many distinct stages
        match SamplingPlan::materialize(&params) {
            Ok(plan) => return plan,
            Err(_) if stages > 1 => stages -= 1,
            Err(e) => panic!("{e}"),
        }
    }
}

/// Exact distribution of `(stage, k)` at stopping, by walking all `2^N_max` sequences.
pub struct PathOracle {
    /// `(stage, k, n, probability)`
    pub states: Vec<(usize, u64, u64, f64)>,
}

impl PathOracle {
    pub fn new(plan: &SamplingPlan, p: f64) -> Self {
        let sizes = plan.sizes();
        let n_max = *sizes.last().unwrap();
        assert!(n_max <= 20);
        let mut mass = std::collections::BTreeMap::<(usize, u64), f64>::new();
        for path in 0u32..(1u32 << n_max) {
            let mut k = 0u64;
            let mut stop = None;
            let mut next = 0;
            for i in 0..n_max {
                k += u64::from((path >> i) & 1);
                if next < sizes.len() && sizes[next] == i + 1 {
                    if !plan.continues(next, k) {
                        stop = Some((next, k));
                        break;
                    }
                    next += 1;
                }
            }
            let (stage, k_stop) = stop.expect("plan must terminate");
            let total = u64::from(path.count_ones());
            let prob = p.powi(total as i32) * (1.0 - p).powi((n_max - total) as i32);
            *mass.entry((stage, k_stop)).or_default() += prob;
        }
        Self {
            states: mass
                .into_iter()
                .map(|((stage, k), m)| (stage, k, sizes[stage], m))
                .collect(),
        }
    }

    /// `Pr{|k/n - p| >= eps}` decided in exact rational arithmetic.
    pub fn ccp(&self, p: f64, eps: &BigRational) -> f64 {
        let pr = BigRational::from_float(p).unwrap();
        self.states
            .iter()
            .filter(|&&(_, k, n, _)| {
                let est = BigRational::new(k.into(), n.into());
                &est - &pr >= *eps || &pr - &est >= *eps
            })
            .map(|s| s.3)
            .sum()
    }

    pub fn asn(&self) -> f64 {
        self.states.iter().map(|&(_, _, n, m)| n as f64 * m).sum()
    }

    pub fn stopped_at(&self, stage: usize, k: u64) -> f64 {
        self.states
            .iter()
            .find(|s| s.0 == stage && s.1 == k)
            .map_or(0.0, |s| s.3)
    }
}
