//! Analytic tail and ASN bounds for double-parabolic plans, and the
//! asymptotic and fixed-sample-size formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkern::{large_dev, normal_cdf, normal_quantile};
use crate::rules::{RuleFamily, SamplingPlan};

/// One stage row of a [`TailBoundTable`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundRow {
    /// Stage number, starting at 1.
    pub stage: usize,
    pub n: u64,
    /// Left end of the continuation band; `None` when no sample mean continues.
    pub a: Option<f64>,
    /// Bound on `Pr{n > n_stage}`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundTable {
    /// The proportion the bounds were computed at, after mirroring into `(0, 1/2]`.
    pub p: f64,
    /// First stage with `p < a_stage` (1-based); equals the stage count when the table is empty.
    pub tau: usize,
    /// Rows for stages `tau..s`.
    pub rows: Vec<TailBoundRow>,
}

fn check_p(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            expected: "0 < p < 1",
        });
    }
    Ok(if p > 0.5 { 1.0 - p } else { p })
}

fn check_zeta_delta(zeta: f64, delta: f64) -> Result<f64> {
    let zd = zeta * delta;
    if !(zd > 0.0 && zd < 1.0) {
        return Err(Error::Domain {
            name: "zeta * delta",
            value: zd,
            expected: "0 < zeta * delta < 1",
        });
    }
    Ok(zd)
}

/// `1/2 - rho eps - sqrt(1/4 + eps^2 n / (2 ln(zeta delta)))`, or `None` when the root is not real.
pub fn band_edge(n: u64, eps: f64, rho: f64, zeta_delta: f64) -> Option<f64> {
    let arg = 0.25 + eps * eps * n as f64 / (2.0 * zeta_delta.ln());
    (arg > 0.0).then(|| 0.5 - rho * eps - arg.sqrt())
}

/// Bounds on `Pr{n > n_l | p}` for the double-parabolic plan.
///
/// Values of `p` above 1/2 are reflected to `1 - p`.
pub fn tail_bounds(plan: &SamplingPlan, p: f64) -> Result<TailBoundTable> {
    let params = plan.params();
    if params.family != RuleFamily::DoubleParabolic {
        return Err(Error::InvalidParams("tail bounds apply to the double-parabolic rule only".into()));
    }
    let p = check_p(p)?;
    let zd = check_zeta_delta(params.zeta, params.delta())?;
    let eps = params.eps();
    let sizes = plan.sizes();
    let s = sizes.len();
    let edges: Vec<Option<f64>> = sizes[..s - 1]
        .iter()
        .map(|&n| band_edge(n, eps, params.rho, zd))
        .collect();
    // stages with no real root never continue; a_0 is 0
    let tau = edges
        .iter()
        .position(|a| a.is_none_or(|a| p < a))
        .map_or(s, |i| i + 1);
    let mut rows = Vec::with_capacity(s - tau.min(s));
    for l in tau..s {
        let n = sizes[l - 1];
        let a = edges[l - 1];
        let bound = match a {
            None => 0.0,
            Some(a) if a <= p => 1.0,
            Some(a) => (n as f64 * large_dev(a.min(1.0), p)?).exp().min(1.0),
        };
        rows.push(TailBoundRow { stage: l, n, a, bound });
    }
    Ok(TailBoundTable { p, tau, rows })
}

/// `n_tau + sum (n_{l+1} - n_l) bound_l` over the rows of [`tail_bounds`].
pub fn asn_upper_bound(plan: &SamplingPlan, p: f64) -> Result<f64> {
    let table = tail_bounds(plan, p)?;
    let sizes = plan.sizes();
    let mut total = sizes[table.tau - 1] as f64;
    for row in &table.rows {
        total += (sizes[row.stage] - row.n) as f64 * row.bound;
    }
    Ok(total.min(*sizes.last().unwrap_or(&0) as f64))
}

/// Approximate average sample number `2 p (1 - p) ln(1/(zeta delta)) / eps^2`.
pub fn asn_approx(p: f64, eps: f64, delta: f64, zeta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            expected: "0 < p < 1",
        });
    }
    let zd = check_zeta_delta(zeta, delta)?;
    Ok(2.0 * p * (1.0 - p) * (1.0 / zd).ln() / (eps * eps))
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
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
    Ok(())
}

/// Normal-approximation sample size `ceil((Z_{delta/2} / eps)^2 / 4)`.
pub fn n_normal(eps: f64, delta: f64) -> Result<u64> {
    check_eps_delta(eps, delta)?;
    let z = normal_quantile(delta / 2.0)?;
    Ok((0.25 * (z / eps).powi(2)).ceil() as u64)
}

/// Chernoff-Hoeffding sample size `ceil(ln(2/delta) / (2 eps^2))`.
pub fn n_ch(eps: f64, delta: f64) -> Result<u64> {
    check_eps_delta(eps, delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * eps * eps)).ceil() as u64)
}

/// Limiting coverage `2 Phi(sqrt(2 ln(1/(zeta delta)))) - 1` as `eps` goes to 0.
pub fn asymptotic_coverage(zeta: f64, delta: f64) -> Result<f64> {
    let zd = check_zeta_delta(zeta, delta)?;
    let x = (2.0 * (1.0 / zd).ln()).sqrt();
    // 1 - 2 Phi(-x) keeps precision when the coverage is close to 1
    Ok(1.0 - 2.0 * normal_cdf(-x))
}
