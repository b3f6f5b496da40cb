//! Workload characteristics measured from a trace.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::isa::{InstrId, LatencyClass, PageId, Trace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyMix {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl LatencyMix {
    pub fn share(&self, c: LatencyClass) -> f64 {
        match c {
            LatencyClass::Low => self.low,
            LatencyClass::Medium => self.medium,
            LatencyClass::High => self.high,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceProfile {
    /// Percent of instructions that are not SCALAR.
    pub vectorizable_pct: f64,
    /// Mean distinct consumers per vector-produced page version that is read
    /// at least once before being overwritten.
    pub avg_reuse: f64,
    /// Percent of vector instructions per latency class.
    pub latency_mix: LatencyMix,
    pub n_instructions: usize,
}

pub fn trace_stats(t: &Trace) -> TraceProfile {
    let n = t.instrs.len();
    let vector: Vec<_> = t.instrs.iter().filter(|i| !i.is_scalar()).collect();
    let pct = |k: usize, of: usize| if of == 0 { 0.0 } else { 100.0 * k as f64 / of as f64 };

    let mut counts = [0usize; 3];
    for i in &vector {
        counts[i.op.latency_class() as usize] += 1;
    }
    let latency_mix = LatencyMix {
        low: pct(counts[0], vector.len()),
        medium: pct(counts[1], vector.len()),
        high: pct(counts[2], vector.len()),
    };

    // Consumers of the live version of each page, keyed by page.
    let mut live: HashMap<PageId, (bool, HashSet<InstrId>)> = HashMap::new();
    let (mut versions, mut consumers) = (0usize, 0usize);
    let mut close = |entry: Option<(bool, HashSet<InstrId>)>| {
        if let Some((true, readers)) = entry {
            if !readers.is_empty() {
                versions += 1;
                consumers += readers.len();
            }
        }
    };
    for ins in &t.instrs {
        for p in &ins.src_pages {
            if let Some((_, readers)) = live.get_mut(p) {
                readers.insert(ins.id);
            }
        }
        close(live.insert(ins.dst_page, (!ins.is_scalar(), HashSet::new())));
    }
    for (_, v) in live.drain() {
        close(Some(v));
    }
    TraceProfile {
        vectorizable_pct: pct(vector.len(), n),
        avg_reuse: if versions == 0 { 0.0 } else { consumers as f64 / versions as f64 },
        latency_mix,
        n_instructions: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{TraceHeader, VecInstr, VecOpType};

    fn ins(id: u32, op: VecOpType, srcs: &[PageId], dst: PageId) -> VecInstr {
        VecInstr {
            id,
            op,
            src_pages: srcs.to_vec(),
            dst_page: dst,
            vector_length: 64,
            element_width: 8,
            producer_ids: vec![],
            offset: 0,
            scalar: None,
        }
    }

    #[test]
    fn bitwise_only_mix() {
        let mut t = Trace::new(TraceHeader::new(64, 8, "t"));
        t.instrs = vec![ins(0, VecOpType::And, &[1, 2], 3), ins(1, VecOpType::Xor, &[3, 2], 4)];
        let s = trace_stats(&t);
        assert_eq!(s.latency_mix, LatencyMix { low: 100.0, medium: 0.0, high: 0.0 });
        assert_eq!(s.vectorizable_pct, 100.0);
    }

    #[test]
    fn written_once_read_twice() {
        let mut t = Trace::new(TraceHeader::new(64, 8, "t"));
        t.instrs = vec![
            ins(0, VecOpType::Add, &[1, 2], 10),
            ins(1, VecOpType::Add, &[3, 4], 11),
            ins(2, VecOpType::Not, &[10], 20),
            ins(3, VecOpType::Not, &[10], 21),
            ins(4, VecOpType::Add, &[11, 11], 22),
            ins(5, VecOpType::Not, &[11], 23),
        ];
        assert_eq!(trace_stats(&t).avg_reuse, 2.0);
    }
}
