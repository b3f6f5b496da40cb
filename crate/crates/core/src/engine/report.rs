//! Run report, CSV rendering and the functional oracle comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{interpret_trace, PageStore};
use crate::isa::{PageId, Trace};
use crate::resources::ResourceKind;
use crate::topology::Nanos;

use super::ledger::EnergyLedger;
use super::state::CoherenceStats;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionFractions {
    pub isp: f64,
    pub pud: f64,
    pub ifp: f64,
}

impl DecisionFractions {
    pub fn get(&self, r: ResourceKind) -> f64 {
        match r {
            ResourceKind::Isp => self.isp,
            ResourceKind::Pud => self.pud,
            ResourceKind::Ifp => self.ifp,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub decisions: usize,
    pub mean_ns: f64,
    pub max_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub policy: String,
    pub profile: String,
    pub seed: u64,
    pub n_instructions: usize,
    pub n_vector: usize,
    pub total_time_ns: Nanos,
    pub p99_ns: Nanos,
    pub p9999_ns: Nanos,
    pub mean_latency_ns: f64,
    pub energy: EnergyLedger,
    /// Shares of offloaded (vector) instructions per resource; over all
    /// instructions when the trace has no vector instruction.
    pub decision_fractions: DecisionFractions,
    pub overhead: OverheadStats,
    pub coherence: CoherenceStats,
    pub replays: u64,
    /// Decision start to completion, per instruction id.
    pub latencies_ns: Vec<Nanos>,
    /// Chosen resource per instruction id.
    pub timeline: Vec<ResourceKind>,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "policy",
    "profile",
    "total_time_ns",
    "p99_ns",
    "p9999_ns",
    "energy_compute_pj",
    "energy_dm_pj",
    "frac_isp",
    "frac_pud",
    "frac_ifp",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

impl StatsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.policy,
            self.profile,
            self.total_time_ns,
            self.p99_ns,
            self.p9999_ns,
            self.energy.compute_pj(),
            self.energy.data_movement_pj,
            self.decision_fractions.isp,
            self.decision_fractions.pud,
            self.decision_fractions.ifp,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Compares the simulator's final page contents with a sequential replay.
pub fn functional_verify(trace: &Trace, simulated: &PageStore) -> Result<()> {
    if trace.contents.is_none() {
        return Err(Error::MissingContents);
    }
    let reference = interpret_trace(trace);
    let mut pages: Vec<PageId> =
        reference.page_ids().chain(simulated.page_ids()).copied().collect();
    pages.sort_unstable();
    pages.dedup();
    for p in pages {
        let (want, got) = (reference.page(p), simulated.page(p));
        if want != got {
            let elem = want.iter().zip(&got).position(|(a, b)| a != b).unwrap_or(0);
            let writer = trace.instrs.iter().rev().find(|i| i.dst_page == p).map(|i| i.id);
            return Err(Error::FunctionalMismatch {
                page: p,
                instr: writer,
                detail: format!(
                    "byte {elem}: expected {:#04x}, simulated {:#04x}",
                    want[elem], got[elem]
                ),
            });
        }
    }
    Ok(())
}
