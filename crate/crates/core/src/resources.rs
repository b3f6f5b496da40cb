//! Capability, latency, energy and queueing models of the three computation
//! resources, and translation of instructions into native primitives.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::isa::{VecInstr, VecOpType};
use crate::topology::{energy_per_kib, Nanos, Picojoules};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResourceKind {
    /// Controller cores.
    #[serde(rename = "ISP")]
    Isp,
    /// Bulk bitwise execution in the SSD DRAM.
    #[serde(rename = "PUD")]
    Pud,
    /// Execution inside the flash dies.
    #[serde(rename = "IFP")]
    Ifp,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [ResourceKind::Isp, ResourceKind::Pud, ResourceKind::Ifp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::Isp => "ISP",
            ResourceKind::Pud => "PUD",
            ResourceKind::Ifp => "IFP",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isp" => Ok(ResourceKind::Isp),
            "pud" => Ok(ResourceKind::Pud),
            "ifp" => Ok(ResourceKind::Ifp),
            _ => Err(Error::UnknownResource(s.to_string())),
        }
    }
}

pub fn supports(r: ResourceKind, op: VecOpType, cfg: &SimConfig) -> bool {
    match r {
        ResourceKind::Isp => true,
        _ if op == VecOpType::Scalar => false,
        ResourceKind::Pud => cfg.resources.pud_ops.contains(&op),
        ResourceKind::Ifp => cfg.resources.ifp_ops.contains(&op),
    }
}

fn require(r: ResourceKind, op: VecOpType, cfg: &SimConfig) -> Result<()> {
    if supports(r, op, cfg) {
        Ok(())
    } else {
        Err(Error::Unsupported { resource: r.to_string(), op: op.to_string() })
    }
}

fn isp_cycles_per_op(op: VecOpType, cfg: &SimConfig) -> u64 {
    match op {
        VecOpType::Mul => cfg.resources.isp_mul_cycles,
        _ => cfg.resources.isp_cycles,
    }
}

/// Elements one SIMD register holds (at least 1).
pub fn isp_lanes(i: &VecInstr, cfg: &SimConfig) -> u64 {
    (cfg.cores.simd_width as u64 / i.element_width as u64).max(1)
}

/// Elements one DRAM row holds.
pub fn pud_row_elems(i: &VecInstr, cfg: &SimConfig) -> u64 {
    (cfg.dram.row_size as u64 * 8 / i.element_width as u64).max(1)
}

fn isp_native_ops(i: &VecInstr, cfg: &SimConfig) -> u64 {
    (i.vector_length as u64).div_ceil(isp_lanes(i, cfg))
}

pub fn pud_sub_ops(i: &VecInstr, cfg: &SimConfig) -> u64 {
    (i.vector_length as u64).div_ceil(pud_row_elems(i, cfg))
}

/// Multi-wordline senses needed for AND/OR given the sensing fan-in.
fn ifp_senses(i: &VecInstr, cfg: &SimConfig) -> u64 {
    let fanin = match i.op {
        VecOpType::And => cfg.resources.ifp_and_fanin,
        VecOpType::Or => cfg.resources.ifp_or_fanin,
        _ => return 1,
    };
    (i.src_pages.len() as u64).div_ceil(fanin as u64).max(1)
}

pub fn compute_latency(r: ResourceKind, i: &VecInstr, cfg: &SimConfig) -> Result<Nanos> {
    require(r, i.op, cfg)?;
    if i.vector_length == 0 {
        return Ok(0);
    }
    let op = i.element_op();
    Ok(match r {
        ResourceKind::Isp => {
            cfg.cores.cycles_to_ns(isp_native_ops(i, cfg) * isp_cycles_per_op(op, cfg))
        }
        ResourceKind::Pud => {
            let waves = pud_sub_ops(i, cfg).div_ceil(cfg.dram.banks as u64);
            waves * cfg.resources.pud_k.k(op) * cfg.dram.t_bbop
        }
        ResourceKind::Ifp => {
            let t = &cfg.flash_timing;
            let w = i.element_width as u64;
            let n = i.src_pages.len() as u64;
            use VecOpType::*;
            match op {
                And | Or => ifp_senses(i, cfg) * (t.t_read_slc + t.t_and_or),
                Xor => t.t_read_slc + t.t_xor * n.saturating_sub(1) + t.t_latch_transfer,
                Not | Shl | Shr => t.t_read_slc + t.t_latch_transfer,
                Add | Sub => t.t_read_slc + w * (t.t_latch_transfer + t.t_xor + t.t_and_or),
                Mul => {
                    t.t_read_slc
                        + w * (t.t_latch_transfer
                            + t.t_dma
                            + w * (t.t_xor + t.t_and_or + t.t_latch_transfer))
                }
                _ => unreachable!("capability table admits only flash-native ops"),
            }
        }
    })
}

pub fn compute_energy(r: ResourceKind, i: &VecInstr, cfg: &SimConfig) -> Result<Picojoules> {
    require(r, i.op, cfg)?;
    if i.vector_length == 0 {
        return Ok(0);
    }
    let op = i.element_op();
    let e = &cfg.energy;
    Ok(match r {
        ResourceKind::Isp => e.e_isp_per_op * isp_native_ops(i, cfg) * isp_cycles_per_op(op, cfg),
        ResourceKind::Pud => e.e_bbop * cfg.resources.pud_k.k(op) * pud_sub_ops(i, cfg),
        ResourceKind::Ifp => {
            let bytes = i.vector_bytes();
            let w = i.element_width as u64;
            let n = i.src_pages.len() as u64;
            let latch = energy_per_kib(bytes, e.e_latch_per_kb);
            let xor = energy_per_kib(bytes, e.e_xor_per_kb);
            let and_or = energy_per_kib(bytes, e.e_and_or_per_kb);
            use VecOpType::*;
            match op {
                And | Or => ifp_senses(i, cfg) * e.e_read_per_channel + and_or,
                Xor => e.e_read_per_channel + xor * n.saturating_sub(1) + latch,
                Not | Shl | Shr => e.e_read_per_channel + latch,
                Add | Sub => e.e_read_per_channel + w * (latch + xor + and_or),
                Mul => {
                    e.e_read_per_channel
                        + w * (latch + e.e_dma_per_channel + w * (xor + and_or + latch))
                }
                _ => unreachable!("capability table admits only flash-native ops"),
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Primitive {
    MveSimdOp,
    ScalarAlu,
    BbopOp,
    MwsAnd,
    MwsOr,
    XorLatch,
    LatchOp,
    ShiftAndAdd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NativeInstr {
    pub resource: ResourceKind,
    pub primitive: Primitive,
    pub repeat_count: u64,
    pub sub_vector_length: u64,
}

/// Splits an instruction into the target resource's native primitives.
pub fn transform(i: &VecInstr, r: ResourceKind, cfg: &SimConfig) -> Result<Vec<NativeInstr>> {
    require(r, i.op, cfg)?;
    let len = i.vector_length as u64;
    let native = |primitive, sub: u64| NativeInstr {
        resource: r,
        primitive,
        repeat_count: if len == 0 { 0 } else { len.div_ceil(sub) },
        sub_vector_length: sub.min(len.max(1)),
    };
    Ok(match r {
        ResourceKind::Isp if i.is_scalar() => vec![native(Primitive::ScalarAlu, 1)],
        ResourceKind::Isp => vec![native(Primitive::MveSimdOp, isp_lanes(i, cfg))],
        ResourceKind::Pud => vec![native(Primitive::BbopOp, pud_row_elems(i, cfg))],
        ResourceKind::Ifp => {
            use VecOpType::*;
            let page = len.max(1);
            match i.op {
                And => vec![NativeInstr {
                    repeat_count: if len == 0 { 0 } else { ifp_senses(i, cfg) },
                    ..native(Primitive::MwsAnd, page)
                }],
                Or => vec![NativeInstr {
                    repeat_count: if len == 0 { 0 } else { ifp_senses(i, cfg) },
                    ..native(Primitive::MwsOr, page)
                }],
                Xor => vec![native(Primitive::XorLatch, page)],
                Not | Shl | Shr => vec![native(Primitive::LatchOp, page)],
                Add | Sub | Mul => vec![native(Primitive::ShiftAndAdd, page)],
                _ => unreachable!("capability table admits only flash-native ops"),
            }
        }
    })
}

/// FIFO of dispatched batches with a running total of their estimated
/// latencies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecQueue {
    pending: VecDeque<(u64, Nanos)>,
    counter: Nanos,
}

impl ExecQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, batch: u64, est_latency: Nanos) {
        self.pending.push_back((batch, est_latency));
        self.counter += est_latency;
    }

    /// Retires the head batch; any other batch is an ordering error.
    pub fn complete(&mut self, batch: u64) -> Result<Nanos> {
        match self.pending.front() {
            Some(&(b, est)) if b == batch => {
                self.pending.pop_front();
                self.counter -= est;
                Ok(est)
            }
            head => Err(Error::QueueOrder { got: batch, head: head.map(|h| h.0) }),
        }
    }

    pub fn counter(&self) -> Nanos {
        self.counter
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn head(&self) -> Option<u64> {
        self.pending.front().map(|h| h.0)
    }

    pub fn contains(&self, batch: u64) -> bool {
        self.pending.iter().any(|h| h.0 == batch)
    }
}
