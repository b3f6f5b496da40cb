//! Per-instruction features, the latency cost function and the policies
//! that turn features into a resource choice.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::isa::VecOpType;
use crate::resources::ResourceKind;
use crate::topology::Nanos;

/// Saturating stand-in for an unsupported resource's latency.
pub const INF: Nanos = Nanos::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperandLoc {
    Flash,
    Dram,
}

/// Per-resource arrays are indexed by `ResourceKind::index()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub op_type: VecOpType,
    pub operand_locations: Vec<OperandLoc>,
    pub delay_dd: Nanos,
    pub delay_queue: [Nanos; 3],
    pub latency_dm: [Nanos; 3],
    pub latency_comp: [Nanos; 3],
    /// Every operand already sits where the resource computes on it.
    pub resident: [bool; 3],
}

impl FeatureVector {
    pub fn supported(&self, r: ResourceKind) -> bool {
        self.latency_comp[r.index()] != INF
    }

    /// Drops data-movement, dependence and queueing terms.
    pub fn zero_cost(&self) -> FeatureVector {
        FeatureVector {
            delay_dd: 0,
            delay_queue: [0; 3],
            latency_dm: [0; 3],
            ..self.clone()
        }
    }
}

/// `comp + dm + max(dd, queue)`; the two delays overlap.
pub fn total_latency(r: ResourceKind, fv: &FeatureVector) -> Nanos {
    let i = r.index();
    if fv.latency_comp[i] == INF {
        return INF;
    }
    fv.latency_comp[i]
        .saturating_add(fv.latency_dm[i])
        .saturating_add(fv.delay_dd.max(fv.delay_queue[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Conduit,
    BwOffloading,
    DmOffloading,
    Ideal,
    Fixed(ResourceKind),
}

impl Policy {
    pub const ALL: [Policy; 7] = [
        Policy::Conduit,
        Policy::BwOffloading,
        Policy::DmOffloading,
        Policy::Ideal,
        Policy::Fixed(ResourceKind::Isp),
        Policy::Fixed(ResourceKind::Pud),
        Policy::Fixed(ResourceKind::Ifp),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Conduit => "conduit",
            Policy::BwOffloading => "bw-offloading",
            Policy::DmOffloading => "dm-offloading",
            Policy::Ideal => "ideal",
            Policy::Fixed(ResourceKind::Isp) => "fixed-isp",
            Policy::Fixed(ResourceKind::Pud) => "fixed-pud",
            Policy::Fixed(ResourceKind::Ifp) => "fixed-ifp",
        }
    }

    pub fn valid_names() -> Vec<&'static str> {
        Policy::ALL.iter().map(Policy::name).collect()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let p = match norm.as_str() {
            "conduit" => Policy::Conduit,
            "bw-offloading" | "bw" => Policy::BwOffloading,
            "dm-offloading" | "dm" => Policy::DmOffloading,
            "ideal" => Policy::Ideal,
            "fixed-isp" | "isp" => Policy::Fixed(ResourceKind::Isp),
            "fixed-pud" | "pud" => Policy::Fixed(ResourceKind::Pud),
            "fixed-ifp" | "ifp" => Policy::Fixed(ResourceKind::Ifp),
            _ => return Err(Error::UnknownPolicy(s.to_string())),
        };
        Ok(p)
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub latency_comp: Nanos,
    pub latency_dm: Nanos,
    pub delay_dd: Nanos,
    pub delay_queue: Nanos,
    pub total: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub resource: ResourceKind,
    pub breakdown: [Breakdown; 3],
    pub overhead_charged: Nanos,
}

/// Everything besides features that a policy may consult.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceContext<'a> {
    /// Recent ingress bandwidth utilization per resource, in [0, 1].
    pub bw_utilization: [f64; 3],
    pub tie_break: &'a [ResourceKind],
}

impl Default for ChoiceContext<'static> {
    fn default() -> Self {
        const ORDER: [ResourceKind; 3] = [ResourceKind::Pud, ResourceKind::Ifp, ResourceKind::Isp];
        Self { bw_utilization: [0.0; 3], tie_break: &ORDER }
    }
}

fn tie_rank(fv: &FeatureVector, ctx: &ChoiceContext<'_>, r: ResourceKind) -> (bool, usize) {
    let pos = ctx.tie_break.iter().position(|&x| x == r).unwrap_or(usize::MAX);
    (!fv.resident[r.index()], pos)
}

/// Argmin of `key` over supported resources, then residency, then order.
fn argmin_by<K: PartialOrd>(
    fv: &FeatureVector,
    ctx: &ChoiceContext<'_>,
    key: impl Fn(ResourceKind) -> K,
) -> ResourceKind {
    let mut best: Option<(ResourceKind, K)> = None;
    for r in ResourceKind::ALL.into_iter().filter(|&r| fv.supported(r)) {
        let k = key(r);
        let better = match &best {
            None => true,
            Some((b, bk)) => match k.partial_cmp(bk) {
                Some(std::cmp::Ordering::Less) => true,
                Some(std::cmp::Ordering::Equal) => tie_rank(fv, ctx, r) < tie_rank(fv, ctx, *b),
                _ => false,
            },
        };
        if better {
            best = Some((r, k));
        }
    }
    best.map(|b| b.0).unwrap_or(ResourceKind::Isp)
}

pub fn choose(fv: &FeatureVector, policy: Policy, ctx: &ChoiceContext<'_>) -> Decision {
    let resource = match policy {
        Policy::Conduit => argmin_by(fv, ctx, |r| total_latency(r, fv)),
        Policy::DmOffloading => {
            argmin_by(fv, ctx, |r| (fv.latency_dm[r.index()], fv.latency_comp[r.index()]))
        }
        Policy::BwOffloading => argmin_by(fv, ctx, |r| ctx.bw_utilization[r.index()]),
        Policy::Ideal => argmin_by(fv, ctx, |r| fv.latency_comp[r.index()]),
        Policy::Fixed(r) if fv.supported(r) => r,
        Policy::Fixed(_) => ResourceKind::Isp,
    };
    let mut breakdown = [Breakdown::default(); 3];
    for r in ResourceKind::ALL {
        let i = r.index();
        breakdown[i] = Breakdown {
            latency_comp: fv.latency_comp[i],
            latency_dm: fv.latency_dm[i],
            delay_dd: fv.delay_dd,
            delay_queue: fv.delay_queue[i],
            total: total_latency(r, fv),
        };
    }
    Decision { resource, breakdown, overhead_charged: 0 }
}

/// Inputs to the per-decision latency the offloader core spends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverheadInputs {
    /// Distinct source pages whose mapping entries are consulted.
    pub operands: u32,
    /// Of those, entries not cached in DRAM.
    pub flash_entries: u32,
    /// Distinct execution resources holding unfinished producers.
    pub producer_queues: u32,
    pub supported_resources: u32,
    pub scalar: bool,
}

/// Time charged for one decision. `serial` is the part that occupies the
/// offloader core (L2P lookups and transformation) and bounds the decision
/// rate; the dependence and queue scans and the latency-table lookups run
/// on the other controller cores alongside it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverheadCost {
    pub serial: Nanos,
    pub total: Nanos,
}

/// Decision-to-dispatch latency of one decision. Mapping entries missing
/// from DRAM are fetched in one batched flash read that overlaps the
/// dependence, queue and computation-table work.
pub fn decision_overhead(policy: Policy, inp: &OverheadInputs, cfg: &SimConfig) -> Nanos {
    overhead_cost(policy, inp, cfg).total
}

pub fn overhead_cost(policy: Policy, inp: &OverheadInputs, cfg: &SimConfig) -> OverheadCost {
    let o = &cfg.overheads;
    if inp.scalar || policy == Policy::Ideal {
        return OverheadCost::default();
    }
    let tracked = inp.operands.min(o.tracked_operands);
    let flash = inp.flash_entries.min(tracked);
    let l2p = (tracked - flash) as Nanos * o.l2p_dram_ns;
    let (serial, overlappable) = match policy {
        Policy::Conduit => (
            l2p + o.transform_ns,
            inp.producer_queues as Nanos * o.dep_scan_per_queue_ns
                + o.queue_track_ns
                + o.dm_lookup_ns
                + inp.supported_resources as Nanos * o.comp_lookup_ns,
        ),
        Policy::DmOffloading => (
            l2p + o.transform_ns,
            o.dm_lookup_ns + inp.supported_resources as Nanos * o.comp_lookup_ns,
        ),
        Policy::BwOffloading => (l2p + o.transform_ns, o.queue_track_ns),
        Policy::Fixed(_) => (l2p + o.transform_ns, 0),
        Policy::Ideal => unreachable!(),
    };
    let flash_fetch = if flash > 0 { o.l2p_flash_ns } else { 0 };
    OverheadCost { serial, total: serial + overlappable.max(flash_fetch) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    fn fv(comp: [Nanos; 3], dm: [Nanos; 3], dd: Nanos, q: [Nanos; 3]) -> FeatureVector {
        FeatureVector {
            op_type: VecOpType::Add,
            operand_locations: vec![OperandLoc::Dram, OperandLoc::Dram],
            delay_dd: dd,
            delay_queue: q,
            latency_dm: dm,
            latency_comp: comp,
            resident: [false; 3],
        }
    }

    #[test]
    fn eq1_arithmetic() {
        let f = fv([10, 0, 0], [5, 0, 0], 7, [3, 0, 0]);
        assert_eq!(total_latency(ResourceKind::Isp, &f), 22);
        let f = fv([10, 0, 0], [0; 3], 0, [0; 3]);
        assert_eq!(total_latency(ResourceKind::Isp, &f), 10);
        let f = fv([10, 0, 0], [0; 3], 4, [4, 0, 0]);
        assert_eq!(total_latency(ResourceKind::Isp, &f), 14);
        let f = fv([10, INF, 0], [0; 3], 4, [4, 0, 0]);
        assert_eq!(total_latency(ResourceKind::Pud, &f), INF);
    }

    #[test]
    fn conduit_picks_min_total() {
        let f = fv([22_000, 3_000, 25_000], [0; 3], 0, [0; 3]);
        let d = choose(&f, Policy::Conduit, &ChoiceContext::default());
        assert_eq!(d.resource, ResourceKind::Pud);
        assert_eq!(d.breakdown[ResourceKind::Ifp.index()].total, 25_000);
    }

    #[test]
    fn only_isp_supported() {
        let f = fv([5, INF, INF], [9, 0, 0], 0, [0; 3]);
        for p in Policy::ALL {
            assert_eq!(choose(&f, p, &ChoiceContext::default()).resource, ResourceKind::Isp);
        }
    }

    #[test]
    fn dm_prefers_zero_movement() {
        let f = fv([700, 3_000, 53_000], [60_000, 30_000, 0], 0, [0; 3]);
        let d = choose(&f, Policy::DmOffloading, &ChoiceContext::default());
        assert_eq!(d.resource, ResourceKind::Ifp);
    }

    #[test]
    fn ties_prefer_residency_then_order() {
        let mut f = fv([10, 10, 10], [0; 3], 0, [0; 3]);
        let ctx = ChoiceContext::default();
        assert_eq!(choose(&f, Policy::Conduit, &ctx).resource, ResourceKind::Pud);
        f.resident = [true, false, false];
        assert_eq!(choose(&f, Policy::Conduit, &ctx).resource, ResourceKind::Isp);
    }

    #[test]
    fn bw_picks_least_utilized() {
        let f = fv([10, 10, 10], [0; 3], 0, [0; 3]);
        let ctx = ChoiceContext { bw_utilization: [0.5, 0.9, 0.1], ..Default::default() };
        assert_eq!(choose(&f, Policy::BwOffloading, &ctx).resource, ResourceKind::Ifp);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        let err = "nope".parse::<Policy>().unwrap_err().to_string();
        assert!(err.contains("conduit"));
    }

    #[test]
    fn overhead_bounds() {
        let cfg = default_config();
        let dram = OverheadInputs {
            operands: 2,
            flash_entries: 0,
            producer_queues: 1,
            supported_resources: 3,
            scalar: false,
        };
        // 2*100 + 100 + 300 + (1000 + 1000 + 450)
        assert_eq!(decision_overhead(Policy::Conduit, &dram, &cfg), 3_050);
        assert_eq!(decision_overhead(Policy::Ideal, &dram, &cfg), 0);
        let worst = OverheadInputs {
            operands: 48,
            flash_entries: 1,
            producer_queues: 3,
            supported_resources: 3,
            scalar: false,
        };
        let w = decision_overhead(Policy::Conduit, &worst, &cfg);
        assert!((30_000..=33_000).contains(&w), "{w}");
        let scalar = OverheadInputs { scalar: true, ..dram };
        assert_eq!(decision_overhead(Policy::Conduit, &scalar, &cfg), 0);
    }
}
