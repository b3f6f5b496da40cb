//! Simulation configuration: hardware tables plus resource, offloader and
//! overhead parameters. Loaded from TOML; every field has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isa::VecOpType;
use crate::offloader::Policy;
use crate::resources::ResourceKind;
use crate::topology::{CoreConfig, DramConfig, EnergyTable, FlashTiming, Nanos, SsdTopology};

/// Row-operation counts per op for in-DRAM execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PudMultipliers {
    pub bitwise: u64,
    pub add: u64,
    pub mul: u64,
    pub cmp: u64,
    pub select: u64,
    pub copy: u64,
    pub reduce_add: u64,
}

impl Default for PudMultipliers {
    fn default() -> Self {
        Self { bitwise: 1, add: 64, mul: 1536, cmp: 66, select: 3, copy: 1, reduce_add: 768 }
    }
}

impl PudMultipliers {
    pub fn k(&self, op: VecOpType) -> u64 {
        use VecOpType::*;
        match op {
            And | Or | Xor | Not | Shl | Shr => self.bitwise,
            Add | Sub => self.add,
            Mul => self.mul,
            CmpGt | CmpEq => self.cmp,
            Select => self.select,
            Copy | Shuffle => self.copy,
            ReduceAdd => self.reduce_add,
            Scalar => self.add,
        }
    }
}

/// Capability tables and per-resource cost knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcesConfig {
    pub pud_ops: Vec<VecOpType>,
    pub ifp_ops: Vec<VecOpType>,
    pub pud_k: PudMultipliers,
    /// Core cycles per SIMD native op.
    pub isp_cycles: u64,
    pub isp_mul_cycles: u64,
    /// Operands one multi-wordline AND sense can combine (same block).
    pub ifp_and_fanin: u32,
    /// Operands one multi-wordline OR sense can combine (same plane).
    pub ifp_or_fanin: u32,
    /// Result pages a plane's buffers hold before the oldest is programmed.
    pub page_buffer_slots: u32,
}

impl Default for ResourcesConfig {
    fn default() -> Self {
        use VecOpType::*;
        Self {
            pud_ops: VecOpType::VECTOR.to_vec(),
            ifp_ops: vec![And, Or, Xor, Not, Shl, Shr, Add, Sub, Mul],
            pud_k: PudMultipliers::default(),
            isp_cycles: 1,
            isp_mul_cycles: 3,
            ifp_and_fanin: 48,
            ifp_or_fanin: 4,
            page_buffer_slots: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffloaderConfig {
    pub policy: Policy,
    /// Sliding window for bandwidth-utilization tracking.
    pub bw_window_ns: Nanos,
    /// Final tie-break order among equally good resources.
    pub tie_break: Vec<ResourceKind>,
    /// Fraction of L2P mapping entries cached in DRAM; the rest miss to flash.
    pub l2p_dram_fraction: f64,
    /// Ablation: zero data-movement, dependence and queueing features.
    pub zero_cost_features: bool,
    /// Most instructions decided but not yet retired; the offloader stalls
    /// at this limit. 0 means unbounded.
    pub window: u32,
}

impl Default for OffloaderConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Conduit,
            bw_window_ns: 100_000,
            tie_break: vec![ResourceKind::Pud, ResourceKind::Ifp, ResourceKind::Isp],
            l2p_dram_fraction: 1.0,
            zero_cost_features: false,
            window: 32,
        }
    }
}

/// Latencies the offloader core spends per decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadConfig {
    pub l2p_dram_ns: Nanos,
    pub l2p_flash_ns: Nanos,
    /// Operand-location entries tracked per decision (4-bit field).
    pub tracked_operands: u32,
    pub dep_scan_per_queue_ns: Nanos,
    pub queue_track_ns: Nanos,
    pub dm_lookup_ns: Nanos,
    pub comp_lookup_ns: Nanos,
    pub transform_ns: Nanos,
}

impl Default for OverheadConfig {
    fn default() -> Self {
        Self {
            l2p_dram_ns: 100,
            l2p_flash_ns: 30_000,
            tracked_operands: 4,
            dep_scan_per_queue_ns: 1_000,
            queue_track_ns: 1_000,
            dm_lookup_ns: 100,
            comp_lookup_ns: 150,
            transform_ns: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub n_instructions: u32,
    /// Working set as a fraction of simulated flash capacity.
    pub footprint_fraction: f64,
    /// Cap on the working set in pages; 0 means no cap.
    pub max_working_set: u64,
    /// Place the input operands of each in-flash AND/OR in one block.
    pub colocate_operands: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self { n_instructions: 100_000, footprint_fraction: 0.5, max_working_set: 0, colocate_operands: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub topology: SsdTopology,
    pub flash_timing: FlashTiming,
    pub dram: DramConfig,
    pub cores: CoreConfig,
    pub energy: EnergyTable,
    pub resources: ResourcesConfig,
    pub offloader: OffloaderConfig,
    pub overheads: OverheadConfig,
    pub workload: WorkloadConfig,
}

pub fn default_config() -> SimConfig {
    SimConfig::default()
}

impl SimConfig {
    /// Divides channels, dies per channel and blocks per plane by `factor`
    /// (each floored at 1); timings are unchanged.
    pub fn desk_scale(&self, factor: u32) -> SimConfig {
        let f = factor.max(1);
        let mut c = self.clone();
        c.topology.channels = (c.topology.channels / f).max(1);
        c.topology.dies_per_channel = (c.topology.dies_per_channel / f).max(1);
        c.topology.blocks_per_plane = (c.topology.blocks_per_plane / f).max(1);
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig { field, reason: reason.to_string() })
        };
        let t = &self.topology;
        for (field, v) in [
            ("topology.channels", t.channels),
            ("topology.dies_per_channel", t.dies_per_channel),
            ("topology.planes_per_die", t.planes_per_die),
            ("topology.blocks_per_plane", t.blocks_per_plane),
            ("topology.pages_per_block", t.pages_per_block),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if !t.page_size.is_power_of_two() || t.page_size < 4 {
            return bad("topology.page_size", "page_size must be power of two");
        }
        if t.channel_bandwidth == 0 {
            return bad("topology.channel_bandwidth", "must be positive");
        }
        let ft = &self.flash_timing;
        for (field, v) in [
            ("flash_timing.t_read_slc", ft.t_read_slc),
            ("flash_timing.t_prog_slc", ft.t_prog_slc),
            ("flash_timing.t_bers", ft.t_bers),
            ("flash_timing.t_and_or", ft.t_and_or),
            ("flash_timing.t_xor", ft.t_xor),
            ("flash_timing.t_latch_transfer", ft.t_latch_transfer),
            ("flash_timing.t_dma", ft.t_dma),
        ] {
            if v == 0 {
                return bad(field, "must be strictly positive");
            }
        }
        if ft.t_prog_slc <= ft.t_read_slc {
            return bad("flash_timing.t_prog_slc", "must exceed t_read_slc");
        }
        let d = &self.dram;
        if d.banks == 0 {
            return bad("dram.banks", "must be at least 1");
        }
        if d.row_size == 0 || !d.capacity.is_multiple_of(d.row_size as u64) {
            return bad("dram.row_size", "must divide dram capacity");
        }
        if d.t_bbop == 0 || d.bus_bandwidth == 0 {
            return bad("dram.t_bbop", "timings and bandwidth must be positive");
        }
        let c = &self.cores;
        if c.compute_cores == 0 || c.compute_cores >= c.n_cores {
            return bad("cores.compute_cores", "need 1 <= compute_cores < n_cores");
        }
        if c.clock_hz == 0 {
            return bad("cores.clock_hz", "must be positive");
        }
        if c.simd_width < 8 || !c.simd_width.is_multiple_of(8) {
            return bad("cores.simd_width", "must be a positive multiple of 8 bits");
        }
        let r = &self.resources;
        if r.pud_ops.contains(&VecOpType::Scalar) || r.ifp_ops.contains(&VecOpType::Scalar) {
            return bad("resources", "SCALAR runs only on controller cores");
        }
        if r.ifp_and_fanin < 2 || r.ifp_or_fanin < 2 {
            return bad("resources.ifp_and_fanin", "sensing fan-in must be at least 2");
        }
        if r.page_buffer_slots == 0 {
            return bad("resources.page_buffer_slots", "must be at least 1");
        }
        if r.isp_cycles == 0 || r.isp_mul_cycles == 0 {
            return bad("resources.isp_cycles", "must be positive");
        }
        let o = &self.offloader;
        if !(0.0..=1.0).contains(&o.l2p_dram_fraction) {
            return bad("offloader.l2p_dram_fraction", "must lie in [0, 1]");
        }
        if o.bw_window_ns == 0 {
            return bad("offloader.bw_window_ns", "must be positive");
        }
        let mut order = o.tie_break.clone();
        order.sort();
        order.dedup();
        if order.len() != 3 || o.tie_break.len() != 3 {
            return bad("offloader.tie_break", "must list each resource exactly once");
        }
        if self.overheads.tracked_operands == 0 {
            return bad("overheads.tracked_operands", "must be at least 1");
        }
        let w = &self.workload;
        if !(w.footprint_fraction > 0.0 && w.footprint_fraction <= 1.0) {
            return bad("workload.footprint_fraction", "must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    SimConfig::from_toml(&std::fs::read_to_string(path)?)
}
