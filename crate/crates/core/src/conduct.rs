//! Stage-by-stage conduct of a trial under a materialized plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{Decision, SamplingPlan};

/// One completed stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Stage number, starting at 1.
    pub stage: usize,
    pub group_size: u64,
    pub group_successes: u64,
    /// Cumulative successes.
    pub k: u64,
    /// Cumulative sample size.
    pub n: u64,
    pub decision: Decision,
}

impl StageRecord {
    pub fn estimate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ConductStatus {
    InProgress,
    Stopped { k: u64, n: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConductState {
    /// Completed stages.
    pub stage: usize,
    pub k: u64,
    pub history: Vec<StageRecord>,
    pub status: ConductStatus,
}

impl ConductState {
    /// Final estimate `k / n` once stopped.
    pub fn estimate(&self) -> Option<f64> {
        match self.status {
            ConductStatus::Stopped { k, n } => Some(k as f64 / n as f64),
            ConductStatus::InProgress => None,
        }
    }
}

pub struct ConductSession<'a> {
    plan: &'a SamplingPlan,
    state: ConductState,
}

impl<'a> ConductSession<'a> {
    pub fn new(plan: &'a SamplingPlan) -> Self {
        Self {
            plan,
            state: ConductState {
                stage: 0,
                k: 0,
                history: Vec::new(),
                status: ConductStatus::InProgress,
            },
        }
    }

    pub fn plan(&self) -> &SamplingPlan {
        self.plan
    }

    pub fn state(&self) -> &ConductState {
        &self.state
    }

    pub fn into_state(self) -> ConductState {
        self.state
    }

    pub fn is_stopped(&self) -> bool {
        matches!(self.state.status, ConductStatus::Stopped { .. })
    }

    /// Size of the next group, or `None` after stopping.
    pub fn next_group_size(&self) -> Option<u64> {
        if self.is_stopped() {
            return None;
        }
        let sizes = self.plan.sizes();
        let l = self.state.stage;
        Some(sizes[l] - if l == 0 { 0 } else { sizes[l - 1] })
    }

    /// Records the successes observed in the next group and applies the stopping rule.
    pub fn record(&mut self, group_successes: u64) -> Result<StageRecord> {
        let group_size = self
            .next_group_size()
            .ok_or_else(|| Error::Conduct("sampling has already stopped".into()))?;
        if group_successes > group_size {
            return Err(Error::Conduct(format!(
                "{group_successes} successes exceed the group size {group_size}"
            )));
        }
        let l = self.state.stage;
        let n = self.plan.sizes()[l];
        let k = self.state.k + group_successes;
        let decision = if self.plan.continues(l, k) {
            Decision::Continue
        } else {
            Decision::Stop
        };
        let rec = StageRecord {
            stage: l + 1,
            group_size,
            group_successes,
            k,
            n,
            decision,
        };
        self.state.stage = l + 1;
        self.state.k = k;
        self.state.history.push(rec);
        if decision == Decision::Stop {
            self.state.status = ConductStatus::Stopped { k, n };
        }
        Ok(rec)
    }
}
