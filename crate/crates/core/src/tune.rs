//! Bisection tuning of the coverage parameter `zeta`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkern::normal_quantile;
use crate::rules::{ContinuationSet, DesignParams, SamplingPlan};
use crate::verify::{verify_plan, Verdict, VerifyOptions};

pub const DEFAULT_TOL_REL: f64 = 1e-3;
/// Largest doubling exponent tried when searching for the initial bracket.
pub const MAX_DOUBLINGS: i32 = 20;
const MAX_HALVINGS: i32 = 200;

/// Asymptotic starting value `(1/delta) exp(-Z_{delta/2}^2 / 2)`.
pub fn zeta0(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            expected: "0 < delta < 1",
        });
    }
    let z = normal_quantile(delta / 2.0)?;
    Ok((-0.5 * z * z).exp() / delta)
}

/// Sufficient `zeta` for the double-parabolic rule to guarantee coverage.
pub fn theorem2_zeta(eps: f64, delta: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain {
            name: "rho",
            value: rho,
            expected: "0 < rho <= 1",
        });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain {
            name: "eps",
            value: eps,
            expected: "0 < eps < 1",
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            expected: "0 < delta < 1",
        });
    }
    let num = (delta / 2.0).ln() + (-(-2.0 * eps * eps).exp_m1()).ln();
    Ok((num / (4.0 * eps * rho * (1.0 - rho * eps))).exp() / delta)
}

/// One verification probe of the tuning search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub zeta: f64,
    pub verdict: Verdict,
    /// The probe was outside `zeta * delta < 1` and counted as violated without verification.
    pub out_of_domain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// Largest certified `zeta` found.
    pub lo: f64,
    /// Smallest violating `zeta` found; equals `lo` after a zero-width start.
    pub hi: f64,
    /// Exponent with `lo = zeta0 * 2^i`.
    pub exponent: i32,
    /// The doubling cap was reached without a violation.
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub zeta_star: f64,
    pub bracket: Bracket,
    pub trace: Vec<Probe>,
    pub tol_rel: f64,
}

type PlanKey = (Vec<u64>, Vec<ContinuationSet>);

/// Verification probes with results cached by materialized plan content.
pub struct Tuner<'a> {
    base: DesignParams,
    opts: &'a VerifyOptions,
    cache: HashMap<PlanKey, Verdict>,
    pub trace: Vec<Probe>,
}

impl<'a> Tuner<'a> {
    pub fn new(base: &DesignParams, opts: &'a VerifyOptions) -> Self {
        Self {
            base: base.clone(),
            opts,
            cache: HashMap::new(),
            trace: Vec::new(),
        }
    }

    /// Verdict for the plan re-materialized at `zeta`.
    pub fn probe(&mut self, zeta: f64) -> Result<Verdict> {
        let delta = self.base.delta();
        if !(zeta > 0.0) || zeta * delta >= 1.0 {
            self.trace.push(Probe {
                zeta,
                verdict: Verdict::Violated,
                out_of_domain: true,
            });
            return Ok(Verdict::Violated);
        }
        let abort = |e: Error| Error::TuneAborted {
            zeta,
            source: Box::new(e),
        };
        let params = self.base.with_zeta(zeta);
        let plan = SamplingPlan::materialize(&params).map_err(abort)?;
        let key = (plan.sizes().to_vec(), plan.continuation().to_vec());
        let verdict = match self.cache.get(&key) {
            Some(v) => *v,
            None => {
                let v = verify_plan(&plan, delta, self.opts).map_err(abort)?.verdict;
                self.cache.insert(key, v);
                v
            }
        };
        self.trace.push(Probe {
            zeta,
            verdict,
            out_of_domain: false,
        });
        Ok(verdict)
    }
}

fn floor_zeta(params: &DesignParams, z0: f64) -> f64 {
    let t2 = match params.family {
        crate::rules::RuleFamily::DoubleParabolic => theorem2_zeta(params.eps(), params.delta(), params.rho).ok(),
        _ => None,
    };
    t2.unwrap_or(z0 * 2f64.powi(-MAX_HALVINGS))
}

/// `[zeta0 2^i, zeta0 2^(i+1)]` with `i` the largest exponent whose plan is certified.
pub fn initial_bracket(params: &DesignParams, opts: &VerifyOptions) -> Result<(Bracket, Vec<Probe>)> {
    let mut tuner = Tuner::new(params, opts);
    let b = bracket_with(&mut tuner)?;
    Ok((b, tuner.trace))
}

fn bracket_with(tuner: &mut Tuner) -> Result<Bracket> {
    let z0 = zeta0(tuner.base.delta())?;
    let at = |i: i32| z0 * 2f64.powi(i);
    if tuner.probe(z0)? == Verdict::Guaranteed {
        let mut i = 0;
        while i < MAX_DOUBLINGS {
            if tuner.probe(at(i + 1))? == Verdict::Violated {
                return Ok(Bracket {
                    lo: at(i),
                    hi: at(i + 1),
                    exponent: i,
                    capped: false,
                });
            }
            i += 1;
        }
        return Ok(Bracket {
            lo: at(i),
            hi: at(i + 1),
            exponent: i,
            capped: true,
        });
    }
    let floor = floor_zeta(&tuner.base, z0);
    let mut i = 0;
    while at(i - 1) >= floor && i > -MAX_HALVINGS {
        i -= 1;
        if tuner.probe(at(i))? == Verdict::Guaranteed {
            return Ok(Bracket {
                lo: at(i),
                hi: at(i + 1),
                exponent: i,
                capped: false,
            });
        }
    }
    if tuner.probe(floor)? == Verdict::Guaranteed {
        return Ok(Bracket {
            lo: floor,
            hi: at(i),
            exponent: i,
            capped: false,
        });
    }
    Err(Error::Infeasible(format!(
        "no certified zeta down to {floor:e}; eps, delta and rho admit no guaranteed plan"
    )))
}

fn bisect_with(tuner: &mut Tuner, mut lo: f64, mut hi: f64, tol_rel: f64) -> Result<(f64, f64)> {
    while hi > lo && (hi - lo) / lo > tol_rel {
        let mid = 0.5 * (lo + hi);
        match tuner.probe(mid)? {
            Verdict::Guaranteed => lo = mid,
            Verdict::Violated => hi = mid,
        }
    }
    Ok((lo, hi))
}

/// Bisection on the verification verdict inside a given bracket.
///
/// `lo` must already be certified; `zeta_star` is the final lower end.
pub fn bisection_from(params: &DesignParams, bracket: Bracket, tol_rel: f64, opts: &VerifyOptions) -> Result<TuneResult> {
    let mut tuner = Tuner::new(params, opts);
    let (lo, hi) = bisect_with(&mut tuner, bracket.lo, bracket.hi, tol_rel)?;
    Ok(TuneResult {
        zeta_star: lo,
        bracket: Bracket { lo, hi, ..bracket },
        trace: tuner.trace,
        tol_rel,
    })
}

/// Finds the largest certified `zeta` to relative precision `tol_rel`.
pub fn bisection_tune(params: &DesignParams, tol_rel: f64, opts: &VerifyOptions) -> Result<TuneResult> {
    if !(tol_rel > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol_rel} must be positive")));
    }
    let mut tuner = Tuner::new(params, opts);
    let bracket = bracket_with(&mut tuner)?;
    let (lo, hi) = if bracket.capped {
        (bracket.lo, bracket.lo)
    } else {
        bisect_with(&mut tuner, bracket.lo, bracket.hi, tol_rel)?
    };
    Ok(TuneResult {
        zeta_star: lo,
        bracket: Bracket { lo, hi, ..bracket },
        trace: tuner.trace,
        tol_rel,
    })
}
