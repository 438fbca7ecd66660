//! Reference values of the tuning parameter and their reproduction.

use std::time::{Duration, Instant};

use anyhow::Result;
use serde::Serialize;

use seqprop::rules::{DesignParams, RuleFamily, SamplingPlan, SchedulePolicy};
use seqprop::tune::bisection_tune;
use seqprop::verify::{verify_plan, Verdict, VerifyOptions};
use seqprop::{Error, ExactDecimal};

/// Dilation used by every reference row.
pub const REFERENCE_RHO: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub table: u8,
    pub eps: &'static str,
    pub delta: &'static str,
    /// `None` for fully sequential rows.
    pub stages: Option<usize>,
    pub zeta: f64,
}

impl ReferenceRow {
    pub fn params(&self) -> Result<DesignParams> {
        let p = DesignParams {
            eps: self.eps.parse::<ExactDecimal>()?,
            delta: self.delta.parse::<ExactDecimal>()?,
            rho: REFERENCE_RHO,
            zeta: self.zeta,
            stages: self.stages.unwrap_or(1),
            family: RuleFamily::DoubleParabolic,
            schedule: match self.stages {
                Some(_) => SchedulePolicy::EqualGroups,
                None => SchedulePolicy::FullySequential,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn label(&self) -> String {
        let sched = match self.stages {
            Some(s) => format!("s={s}"),
            None => "fully sequential".to_string(),
        };
        format!("table {} eps={} delta={} {sched}", self.table, self.eps, self.delta)
    }
}

const TABLE1: [(&str, &str, f64); 12] = [
    ("0.1", "0.1", 2.0427),
    ("0.1", "0.05", 2.4174),
    ("0.1", "0.01", 3.0608),
    ("0.05", "0.1", 2.0503),
    ("0.05", "0.05", 2.5862),
    ("0.05", "0.01", 3.3125),
    ("0.02", "0.1", 2.1725),
    ("0.02", "0.05", 2.5592),
    ("0.02", "0.01", 3.4461),
    ("0.01", "0.1", 2.1725),
    ("0.01", "0.05", 2.5592),
    ("0.01", "0.01", 3.4461),
];

/// Rows for `s = 3..=10`, `delta = 0.05`.
const TABLE2: [(&str, [f64; 8]); 4] = [
    ("0.1", [2.6583, 2.6583, 2.5096, 2.5946, 2.4459, 2.6512, 2.5096, 2.4459]),
    ("0.05", [2.6759; 8]),
    ("0.02", [2.6725; 8]),
    ("0.01", [2.6796, 2.6796, 2.6796, 2.6796, 2.6796, 2.5875, 2.6796, 2.6796]),
];

/// Rows for `s = 3..=10`, `delta = 0.01`.
const TABLE3: [(&str, [f64; 8]); 4] = [
    ("0.1", [3.3322, 3.3322, 3.3322, 3.3322, 3.3322, 3.2709, 3.0782, 3.3322]),
    ("0.05", [3.5074; 8]),
    ("0.02", [3.5430; 8]),
    ("0.01", [3.5753; 8]),
];

pub fn reference_rows(table: u8) -> Vec<ReferenceRow> {
    match table {
        1 => TABLE1
            .iter()
            .map(|&(eps, delta, zeta)| ReferenceRow {
                table,
                eps,
                delta,
                stages: None,
                zeta,
            })
            .collect(),
        2 | 3 => {
            let (data, delta) = if table == 2 { (&TABLE2, "0.05") } else { (&TABLE3, "0.01") };
            data.iter()
                .flat_map(|&(eps, zs)| {
                    zs.into_iter().enumerate().map(move |(i, zeta)| ReferenceRow {
                        table,
                        eps,
                        delta,
                        stages: Some(i + 3),
                        zeta,
                    })
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Outcome of one reference row.
#[derive(Clone, Debug, Serialize)]
pub struct RowReport {
    pub row: ReferenceRow,
    /// Verdict at the reference value, or the reason there is none.
    pub reference_verdict: std::result::Result<Verdict, String>,
    pub zeta_star: Option<std::result::Result<f64, String>>,
    pub skipped: bool,
    pub elapsed: Duration,
}

impl RowReport {
    pub fn relative_difference(&self) -> Option<f64> {
        match self.zeta_star {
            Some(Ok(z)) => Some(z / self.row.zeta - 1.0),
            _ => None,
        }
    }

    pub fn line(&self) -> String {
        if self.skipped {
            return format!("{}: skipped, runtime budget exceeded", self.row.label());
        }
        let verdict = match &self.reference_verdict {
            Ok(v) => format!("{v:?}").to_lowercase(),
            Err(e) => format!("error ({e})"),
        };
        let tuned = match (&self.zeta_star, self.relative_difference()) {
            (Some(Ok(z)), Some(d)) => format!(" tuned zeta={z:.4} rel.diff={:+.3}%", 100.0 * d),
            (Some(Err(e)), _) => format!(" tuning failed ({e})"),
            _ => String::new(),
        };
        format!("{}: reference zeta={} {verdict}{tuned}", self.row.label(), self.row.zeta)
    }
}

fn out_of_budget(e: &Error) -> bool {
    match e {
        Error::Inconclusive { reason, .. } => reason.contains("time budget"),
        Error::TuneAborted { source, .. } => out_of_budget(source),
        _ => false,
    }
}

/// Verifies the reference value and optionally re-tunes, giving up after `budget`.
pub fn run_row(row: &ReferenceRow, tune: bool, budget: Duration, base: &VerifyOptions) -> Result<RowReport> {
    let start = Instant::now();
    let opts = VerifyOptions {
        deadline: Some(start + budget),
        ..base.clone()
    };
    let params = row.params()?;
    let mut skipped = false;
    let reference_verdict = match SamplingPlan::materialize(&params).and_then(|plan| verify_plan(&plan, params.delta(), &opts)) {
        Ok(r) => Ok(r.verdict),
        Err(e) => {
            skipped |= out_of_budget(&e);
            Err(e.to_string())
        }
    };
    let zeta_star = if tune && !skipped {
        match bisection_tune(&params, seqprop::tune::DEFAULT_TOL_REL, &opts) {
            Ok(r) => Some(Ok(r.zeta_star)),
            Err(e) => {
                skipped |= out_of_budget(&e);
                Some(Err(e.to_string()))
            }
        }
    } else {
        None
    };
    Ok(RowReport {
        row: *row,
        reference_verdict,
        zeta_star,
        skipped,
        elapsed: start.elapsed(),
    })
}
