//! Schema-versioned JSON plan files.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqprop::rules::{ContinuationSet, DesignParams, SamplingPlan};
use seqprop::tune::Probe;
use seqprop::verify::{Method, VerificationReport, Verdict};

pub const SCHEMA_VERSION: u32 = 1;

/// A verification verdict together with the method and tolerance that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationStamp {
    pub verdict: Verdict,
    pub method: Method,
    pub eta: f64,
    pub delta: f64,
}

impl From<&VerificationReport> for VerificationStamp {
    fn from(r: &VerificationReport) -> Self {
        Self {
            verdict: r.verdict,
            method: r.method,
            eta: r.eta,
            delta: r.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// SHA-256 of the JSON-encoded tuning trace, when the plan came from tuning.
    #[serde(default)]
    pub tuning_trace_sha256: Option<String>,
    #[serde(default)]
    pub verification: Option<VerificationStamp>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            tuning_trace_sha256: None,
            verification: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub schema_version: u32,
    pub params: DesignParams,
    pub sizes: Vec<u64>,
    /// Per stage, inclusive `[lo, hi]` intervals of continuing success counts.
    pub continuation: Vec<ContinuationSet>,
    pub provenance: Provenance,
}

pub fn trace_hash(trace: &[Probe]) -> String {
    let bytes = serde_json::to_vec(trace).unwrap_or_default();
    hex::encode(Sha256::digest(bytes))
}

impl PlanFile {
    pub fn from_plan(plan: &SamplingPlan) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: plan.params().clone(),
            sizes: plan.sizes().to_vec(),
            continuation: plan.continuation().to_vec(),
            provenance: Provenance::default(),
        }
    }

    pub fn plan(&self) -> Result<SamplingPlan> {
        Ok(SamplingPlan::from_parts(
            self.params.clone(),
            self.sizes.clone(),
            self.continuation.clone(),
        )?)
    }

    pub fn stamp(&mut self, report: &VerificationReport) {
        self.provenance.verification = Some(report.into());
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PlanFile = serde_json::from_str(text).context("parsing plan file")?;
        if file.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported plan file schema version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            );
        }
        file.params.validate()?;
        file.plan()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        f.lock_shared()?;
        let mut text = String::new();
        f.read_to_string(&mut text)?;
        Self::from_json(&text).with_context(|| format!("reading {}", path.display()))
    }

    /// Writes the file while holding an exclusive advisory lock.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(path)
            .with_context(|| format!("creating {}", path.display()))?;
        f.lock()?;
        f.set_len(0)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let params = DesignParams::double_parabolic(0.05, 0.05, 0.75, 2.6759, 7).unwrap();
        let plan = SamplingPlan::materialize(&params).unwrap();
        let mut pf = PlanFile::from_plan(&plan);
        pf.provenance.tuning_trace_sha256 = Some(trace_hash(&[]));
        let text = pf.to_json().unwrap();
        let back = PlanFile::from_json(&text).unwrap();
        assert_eq!(back, pf);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.plan().unwrap(), plan);
    }

    #[test]
    fn rejects_other_schema_versions() {
        let params = DesignParams::double_parabolic(0.1, 0.05, 0.75, 2.0, 3).unwrap();
        let mut pf = PlanFile::from_plan(&SamplingPlan::materialize(&params).unwrap());
        pf.schema_version = 99;
        assert!(PlanFile::from_json(&pf.to_json().unwrap()).is_err());
    }
}
