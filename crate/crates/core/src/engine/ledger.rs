//! Energy ledger, event log entries and percentile helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isa::{InstrId, PageId};
use crate::resources::ResourceKind;
use crate::topology::{Nanos, Picojoules};

/// Event kinds in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    DecisionReady,
    TransferStart,
    TransferDone,
    ComputeStart,
    ComputeDone,
    CoherenceSync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Compute,
    DataMovement,
}

/// One energy charge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: Nanos,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instr: Option<InstrId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub page: Option<PageId>,
    pub category: Category,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource: Option<ResourceKind>,
    pub pj: Picojoules,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub compute_isp_pj: Picojoules,
    pub compute_pud_pj: Picojoules,
    pub compute_ifp_pj: Picojoules,
    pub data_movement_pj: Picojoules,
}

impl EnergyLedger {
    pub fn add(&mut self, category: Category, resource: Option<ResourceKind>, pj: Picojoules) {
        match (category, resource) {
            (Category::DataMovement, _) => self.data_movement_pj += pj,
            (Category::Compute, Some(ResourceKind::Pud)) => self.compute_pud_pj += pj,
            (Category::Compute, Some(ResourceKind::Ifp)) => self.compute_ifp_pj += pj,
            (Category::Compute, _) => self.compute_isp_pj += pj,
        }
    }

    pub fn compute_pj(&self) -> Picojoules {
        self.compute_isp_pj + self.compute_pud_pj + self.compute_ifp_pj
    }

    pub fn total_pj(&self) -> Picojoules {
        self.compute_pj() + self.data_movement_pj
    }

    /// Rebuilds a ledger by summing logged charges.
    pub fn from_log<'a>(log: impl IntoIterator<Item = &'a LogEntry>) -> Self {
        let mut l = EnergyLedger::default();
        for e in log {
            l.add(e.category, e.resource, e.pj);
        }
        l
    }
}

/// Nearest-rank percentile: the sample at rank `ceil(p/100 * n)`.
pub fn percentile(samples: &[Nanos], p: f64) -> Result<Nanos> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::BadPercentile(p));
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    Ok(v[nearest_rank(v.len(), p) - 1])
}

fn nearest_rank(n: usize, p: f64) -> usize {
    // p/100*n computed in integer hundredths-of-percent to avoid 99.99
    // rounding up an extra rank through float error.
    let basis = (p * 100.0).round() as u128;
    let rank = (basis * n as u128).div_ceil(10_000) as usize;
    rank.clamp(1, n)
}

/// Several percentiles with one sort.
pub fn percentiles(samples: &[Nanos], ps: &[f64]) -> Result<Vec<Nanos>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    ps.iter()
        .map(|&p| {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::BadPercentile(p));
            }
            Ok(v[nearest_rank(v.len(), p) - 1])
        })
        .collect()
}
