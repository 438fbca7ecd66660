//! Grid sweeps of plan quantities, exported as CSV.

use std::io::Write;

use anyhow::Result;
use rayon::prelude::*;

use seqprop::exact::ExactEngine;
use seqprop::rules::SamplingPlan;

pub const DEFAULT_POINTS: usize = 2000;
/// Offset placed on both sides of every discontinuity point.
pub const DISCONTINUITY_OFFSET: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Quantity {
    Coverage,
    Ccp,
    Asn,
    Boundary,
}

impl Quantity {
    fn header(self) -> [&'static str; 2] {
        match self {
            Quantity::Coverage => ["p", "coverage"],
            Quantity::Ccp => ["p", "ccp"],
            Quantity::Asn => ["p", "asn"],
            Quantity::Boundary => ["p_hat", "n"],
        }
    }
}

/// `points` interior grid points `i / (points + 1)`, plus `c +- 1e-9` for each discontinuity `c`.
pub fn grid(engine: &ExactEngine, points: usize, discontinuities: bool) -> Vec<f64> {
    let mut ps: Vec<f64> = (1..=points).map(|i| i as f64 / (points + 1) as f64).collect();
    if discontinuities {
        for c in engine.discontinuity_set() {
            for x in [c - DISCONTINUITY_OFFSET, c + DISCONTINUITY_OFFSET] {
                if x > 0.0 && x < 1.0 {
                    ps.push(x);
                }
            }
        }
    }
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps
}

/// `(p, value)` rows for a probability-valued quantity.
pub fn sweep_values(plan: &SamplingPlan, quantity: Quantity, points: usize, discontinuities: bool) -> Result<Vec<(f64, f64)>> {
    let engine = ExactEngine::new(plan);
    let ps = grid(&engine, points, discontinuities);
    let rows = ps
        .par_iter()
        .map(|&p| {
            let v = match quantity {
                Quantity::Coverage => engine.coverage(p)?,
                Quantity::Ccp => engine.ccp(p)?,
                Quantity::Asn => engine.asn(p)?,
                Quantity::Boundary => unreachable!("boundary export has no p grid"),
            };
            Ok((p, v))
        })
        .collect::<seqprop::Result<Vec<_>>>()?;
    Ok(rows)
}

/// Stopping-boundary points `(k/n, n)` at the ends of every continuation interval.
pub fn boundary_points(plan: &SamplingPlan) -> Vec<(f64, u64)> {
    let mut out = Vec::new();
    for (&n, c) in plan.sizes().iter().zip(plan.continuation()) {
        for &(lo, hi) in c.intervals() {
            out.push((lo as f64 / n as f64, n));
            out.push((hi as f64 / n as f64, n));
        }
    }
    out
}

pub fn fmt_value(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn write_csv<W: Write>(out: W, plan: &SamplingPlan, quantity: Quantity, points: usize, discontinuities: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(quantity.header())?;
    if quantity == Quantity::Boundary {
        for (x, n) in boundary_points(plan) {
            w.write_record([fmt_value(x), n.to_string()])?;
        }
    } else {
        for (p, v) in sweep_values(plan, quantity, points, discontinuities)? {
            w.write_record([fmt_value(p), fmt_value(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}
