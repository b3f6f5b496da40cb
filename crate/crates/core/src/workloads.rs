//! Synthetic workload profiles and the trace generator that realizes them.
//!
//! A generated trace interleaves SCALAR and vector instructions at the
//! profile's vectorizable share. Vector ops are drawn per latency class from
//! exact, seed-shuffled quotas. Sources come from a pool of live produced
//! versions, picked with a geometric bias toward recent entries, or from a
//! read-only input region; each hot version is granted a consumer budget
//! whose mean is the target reuse.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::isa::{build_deps, LatencyClass, PageId, ScalarOp, Trace, TraceHeader, VecInstr, VecOpType};
use crate::stats::{LatencyMix, TraceProfile};

pub const DEFAULT_N_INSTRUCTIONS: u32 = 100_000;
pub const DEFAULT_WORKING_SET: u64 = 4096;
/// Smallest region of writable pages the generator accepts.
pub const MIN_WRITABLE_PAGES: u64 = 8;

/// Outstanding pool reads above which new versions are written dead.
const BACKLOG: u64 = 48;
/// Chance that a source slot reads the input region when the pool has data.
const COLD_READ: f64 = 0.2;
/// Per-step continuation of the recency walk through the pool.
const RECENCY: f64 = 0.6;

pub const STAT_TOL_PCT: f64 = 3.0;
pub const STAT_TOL_REUSE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub name: String,
    pub vectorizable_pct: f64,
    pub avg_reuse: f64,
    pub latency_mix: LatencyMix,
    #[serde(default = "default_n")]
    pub n_instructions: u32,
    #[serde(default = "default_ws")]
    pub working_set: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub element_width: u8,
    #[serde(default = "default_page")]
    pub page_size: u32,
}

fn default_n() -> u32 {
    DEFAULT_N_INSTRUCTIONS
}
fn default_ws() -> u64 {
    DEFAULT_WORKING_SET
}
fn default_width() -> u8 {
    32
}
fn default_page() -> u32 {
    4096
}

fn profile(name: &str, vec: f64, reuse: f64, mix: [f64; 3], width: u8) -> WorkloadProfile {
    WorkloadProfile {
        name: name.to_string(),
        vectorizable_pct: vec,
        avg_reuse: reuse,
        latency_mix: LatencyMix { low: mix[0], medium: mix[1], high: mix[2] },
        n_instructions: DEFAULT_N_INSTRUCTIONS,
        working_set: DEFAULT_WORKING_SET,
        seed: 0,
        element_width: width,
        page_size: default_page(),
    }
}

/// The six reference workloads.
pub fn builtin_profiles() -> Vec<WorkloadProfile> {
    vec![
        profile("aes_like", 65.0, 15.2, [87.0, 13.0, 0.0], 8),
        profile("xor_filter_like", 16.0, 2.0, [1.0, 98.0, 1.0], 8),
        profile("heat3d_like", 95.0, 16.0, [0.0, 60.0, 40.0], 32),
        profile("jacobi1d_like", 95.0, 3.0, [0.0, 67.0, 33.0], 32),
        profile("llama_infer_like", 70.0, 1.8, [0.0, 53.0, 47.0], 8),
        profile("llm_train_like", 60.0, 5.2, [0.0, 88.0, 12.0], 32),
    ]
}

pub fn profile_names() -> Vec<String> {
    builtin_profiles().into_iter().map(|p| p.name).collect()
}

pub fn builtin_profile(name: &str) -> Result<WorkloadProfile> {
    builtin_profiles().into_iter().find(|p| p.name == name).ok_or_else(|| Error::UnknownProfile {
        name: name.to_string(),
        valid: profile_names().join(", "),
    })
}

impl WorkloadProfile {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_instructions(mut self, n: u32) -> Self {
        self.n_instructions = n;
        self
    }

    /// Instruction count from the config and working set as the configured
    /// share of flash capacity.
    pub fn sized_for(mut self, cfg: &SimConfig) -> Self {
        let cap = cfg.topology.total_pages();
        let mut ws = ((cap as f64) * cfg.workload.footprint_fraction).floor() as u64;
        if cfg.workload.max_working_set > 0 {
            ws = ws.min(cfg.workload.max_working_set);
        }
        self.working_set = ws.clamp(1, cap);
        self.n_instructions = cfg.workload.n_instructions;
        self.page_size = cfg.topology.page_size;
        self
    }

    /// Whether measured characteristics fall within generator tolerances.
    pub fn matches(&self, s: &TraceProfile) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= STAT_TOL_PCT;
        let reuse_ok = self.vectorizable_pct == 0.0
            || (s.avg_reuse - self.avg_reuse).abs() <= STAT_TOL_REUSE * self.avg_reuse;
        close(s.vectorizable_pct, self.vectorizable_pct)
            && reuse_ok
            && close(s.latency_mix.low, self.latency_mix.low)
            && close(s.latency_mix.medium, self.latency_mix.medium)
            && close(s.latency_mix.high, self.latency_mix.high)
    }

    fn check(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InfeasibleProfile { name: self.name.clone(), reason });
        let m = &self.latency_mix;
        if [m.low, m.medium, m.high].iter().any(|&v| !(0.0..=100.0).contains(&v))
            || (m.low + m.medium + m.high - 100.0).abs() > 1e-6
        {
            return bad("latency mix must be non-negative and sum to 100".into());
        }
        if !(0.0..=100.0).contains(&self.vectorizable_pct) {
            return bad("vectorizable_pct must lie in [0, 100]".into());
        }
        if self.n_instructions == 0 {
            return bad("n_instructions must be positive".into());
        }
        if !matches!(self.element_width, 8 | 32) {
            return bad(format!("element width {} is not 8 or 32", self.element_width));
        }
        if !self.page_size.is_power_of_two() || (self.page_size as u64 * 8) < self.element_width as u64 {
            return bad(format!("page size {} unusable", self.page_size));
        }
        if self.vectorizable_pct > 0.0 {
            if self.avg_reuse.is_nan() || self.avg_reuse < 1.0 {
                return bad(format!("avg_reuse {} below 1 is unreachable", self.avg_reuse));
            }
            if self.avg_reuse > BACKLOG as f64 {
                return bad(format!("avg_reuse {} above {BACKLOG}", self.avg_reuse));
            }
            let (_, _, writable) = self.regions();
            if writable < MIN_WRITABLE_PAGES {
                return bad(format!(
                    "working set of {} pages leaves {writable} writable pages; reuse needs at least {MIN_WRITABLE_PAGES}",
                    self.working_set
                ));
            }
        } else if self.working_set < 2 {
            return bad("scalar traces need an input and a scratch page".into());
        }
        Ok(())
    }

    /// (input pages, scratch pages, writable pages).
    fn regions(&self) -> (u64, u64, u64) {
        let ws = self.working_set;
        let scratch = (ws / 16).clamp(1, 16).min(ws.saturating_sub(1));
        let inputs = (ws / 4).max(1).min(ws.saturating_sub(scratch));
        (inputs, scratch, ws.saturating_sub(inputs + scratch))
    }
}

const LOW_OPS: [(VecOpType, u32); 6] = [
    (VecOpType::And, 3),
    (VecOpType::Or, 2),
    (VecOpType::Xor, 3),
    (VecOpType::Not, 1),
    (VecOpType::Shl, 1),
    (VecOpType::Shr, 1),
];
const MEDIUM_OPS: [(VecOpType, u32); 5] = [
    (VecOpType::Add, 4),
    (VecOpType::Sub, 2),
    (VecOpType::CmpGt, 1),
    (VecOpType::CmpEq, 1),
    (VecOpType::Select, 1),
];
const HIGH_OPS: [(VecOpType, u32); 1] = [(VecOpType::Mul, 1)];

fn pick_op(rng: &mut ChaCha8Rng, class: LatencyClass) -> VecOpType {
    let table: &[(VecOpType, u32)] = match class {
        LatencyClass::Low => &LOW_OPS,
        LatencyClass::Medium => &MEDIUM_OPS,
        LatencyClass::High => &HIGH_OPS,
    };
    let total: u32 = table.iter().map(|t| t.1).sum();
    let mut x = rng.gen_range(0..total);
    for &(op, w) in table {
        if x < w {
            return op;
        }
        x -= w;
    }
    unreachable!()
}

fn arity(rng: &mut ChaCha8Rng, op: VecOpType) -> usize {
    match op {
        VecOpType::And | VecOpType::Or => rng.gen_range(2..=4),
        _ => *op.arity().start(),
    }
}

/// Largest-remainder split of `n` into integer counts proportional to `pcts`.
fn quotas(n: usize, pcts: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = pcts.iter().map(|p| p / 100.0 * n as f64).collect();
    let mut q = [0usize; 3];
    for i in 0..3 {
        q[i] = exact[i].floor() as usize;
    }
    let mut rest = n - q.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for i in order {
        if rest == 0 {
            break;
        }
        q[i] += 1;
        rest -= 1;
    }
    q
}

struct Pool {
    /// (page, reads still granted), oldest first.
    live: Vec<(PageId, u64)>,
    index: HashMap<PageId, usize>,
    outstanding: u64,
}

impl Pool {
    fn contains(&self, p: PageId) -> bool {
        self.index.contains_key(&p)
    }

    fn add(&mut self, p: PageId, reads: u64) {
        self.index.insert(p, self.live.len());
        self.live.push((p, reads));
        self.outstanding += reads;
    }

    fn read(&mut self, slot: usize) -> PageId {
        let (p, left) = &mut self.live[slot];
        let page = *p;
        *left -= 1;
        self.outstanding -= 1;
        if *left == 0 {
            self.live.remove(slot);
            self.index.remove(&page);
            for (i, (q, _)) in self.live.iter().enumerate().skip(slot) {
                self.index.insert(*q, i);
            }
        }
        page
    }
}

/// Builds a trace whose measured statistics match the profile.
pub fn generate(p: &WorkloadProfile) -> Result<Trace> {
    p.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x6e64_7073_696d);
    let n = p.n_instructions as usize;
    let n_vec = ((p.vectorizable_pct / 100.0) * n as f64).round() as usize;
    let (n_inputs, n_scratch, n_writable) = p.regions();
    let inputs = 0..n_inputs;
    let scratch = n_inputs..n_inputs + n_scratch;
    let writable = n_inputs + n_scratch..p.working_set;

    let m = &p.latency_mix;
    let q = quotas(n_vec, [m.low, m.medium, m.high]);
    let mut classes: Vec<LatencyClass> = [LatencyClass::Low, LatencyClass::Medium, LatencyClass::High]
        .iter()
        .zip(q)
        .flat_map(|(&c, k)| std::iter::repeat_n(c, k))
        .collect();
    classes.shuffle(&mut rng);

    let header = {
        let mut h = TraceHeader::new(p.page_size, p.element_width, p.name.clone());
        h.vector_width = h.elements_per_page();
        h
    };
    let per_page = header.elements_per_page();
    let mut pool = Pool { live: Vec::new(), index: HashMap::new(), outstanding: 0 };
    let mut instrs = Vec::with_capacity(n);
    let mut next_class = classes.into_iter();
    let mut vec_seen = 0usize;

    for i in 0..n {
        let is_vec = (i + 1) * n_vec / n > i * n_vec / n;
        let id = i as u32;
        if !is_vec {
            let dst = rng.gen_range(scratch.clone());
            let srcs: Vec<PageId> = (0..2)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        rng.gen_range(scratch.clone())
                    } else {
                        rng.gen_range(inputs.clone())
                    }
                })
                .collect();
            let elems = (0..3).map(|_| rng.gen_range(0..per_page)).collect();
            instrs.push(VecInstr {
                id,
                op: VecOpType::Scalar,
                src_pages: srcs,
                dst_page: dst,
                vector_length: 1,
                element_width: p.element_width,
                producer_ids: vec![],
                offset: 0,
                scalar: Some(ScalarOp { inner: VecOpType::Add, elems }),
            });
            continue;
        }
        vec_seen += 1;
        let op = pick_op(&mut rng, next_class.next().expect("quota covers every vector slot"));
        let a = arity(&mut rng, op);
        let mut srcs: Vec<PageId> = Vec::with_capacity(a);
        let mut taken: Vec<usize> = Vec::new();
        for _ in 0..a {
            let candidates = pool.live.len() - taken.len();
            if candidates > 0 && !rng.gen_bool(COLD_READ) {
                // Geometric walk back from the newest live version.
                let mut back = 0;
                while back + 1 < candidates && rng.gen_bool(RECENCY) {
                    back += 1;
                }
                let slot = (0..pool.live.len())
                    .rev()
                    .filter(|s| !taken.contains(s))
                    .nth(back)
                    .expect("enough untaken slots");
                taken.push(slot);
                srcs.push(pool.live[slot].0);
            } else {
                let mut page = rng.gen_range(inputs.clone());
                for _ in 0..8 {
                    if !srcs.contains(&page) {
                        break;
                    }
                    page = rng.gen_range(inputs.clone());
                }
                srcs.push(page);
            }
        }
        // Release reads from the highest slot first so indices stay valid.
        taken.sort_unstable_by(|a, b| b.cmp(a));
        for slot in taken {
            pool.read(slot);
        }

        let remaining_vec = (n_vec - vec_seen) as f64;
        let supply = remaining_vec * 2.0 * (1.0 - COLD_READ);
        let grant = if pool.outstanding < BACKLOG && (pool.outstanding as f64 + p.avg_reuse) <= supply {
            let lo = p.avg_reuse.floor();
            let reads = if rng.gen_bool(p.avg_reuse - lo) { lo + 1.0 } else { lo };
            reads as u64
        } else {
            0
        };
        let mut dst = rng.gen_range(writable.clone());
        let mut tries = 0;
        while pool.contains(dst) && tries < 64 {
            dst = rng.gen_range(writable.clone());
            tries += 1;
        }
        if pool.contains(dst) {
            return Err(Error::InfeasibleProfile {
                name: p.name.clone(),
                reason: format!("{n_writable} writable pages cannot hold the live versions"),
            });
        }
        if grant > 0 {
            pool.add(dst, grant);
        }
        instrs.push(VecInstr {
            id,
            op,
            src_pages: srcs,
            dst_page: dst,
            vector_length: per_page,
            element_width: p.element_width,
            producer_ids: vec![],
            offset: 0,
            scalar: None,
        });
    }
    build_deps(&mut instrs);
    let mut t = Trace::new(header);
    t.instrs = instrs;
    t.validate()?;
    Ok(t)
}

/// Random initial bytes for every page the trace touches.
pub fn attach_random_contents(t: &mut Trace, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pages: Vec<PageId> = t
        .instrs
        .iter()
        .flat_map(|i| i.src_pages.iter().copied().chain(std::iter::once(i.dst_page)))
        .collect();
    pages.sort_unstable();
    pages.dedup();
    let mut out = BTreeMap::new();
    for p in pages {
        let mut bytes = vec![0u8; t.header.page_size as usize];
        rng.fill(bytes.as_mut_slice());
        out.insert(p, bytes);
    }
    t.contents = Some(out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::trace_stats;

    #[test]
    fn builtins_carry_reference_parameters() {
        let ps = builtin_profiles();
        assert_eq!(ps.len(), 6);
        assert_eq!(builtin_profile("aes_like").unwrap().avg_reuse, 15.2);
        assert_eq!(builtin_profile("heat3d_like").unwrap().vectorizable_pct, 95.0);
        for p in &ps {
            let m = p.latency_mix;
            assert_eq!(m.low + m.medium + m.high, 100.0, "{}", p.name);
        }
    }

    #[test]
    fn unknown_profile_lists_names() {
        let e = builtin_profile("nope").unwrap_err().to_string();
        assert!(e.contains("aes_like") && e.contains("llm_train_like"), "{e}");
    }

    #[test]
    fn aes_low_share_in_band() {
        let t = generate(&builtin_profile("aes_like").unwrap().with_instructions(20_000)).unwrap();
        let s = trace_stats(&t);
        assert!((84.0..=90.0).contains(&s.latency_mix.low), "{s:?}");
    }

    #[test]
    fn all_bitwise_profile() {
        let mut p = builtin_profile("aes_like").unwrap().with_instructions(2_000);
        p.vectorizable_pct = 100.0;
        p.latency_mix = LatencyMix { low: 100.0, medium: 0.0, high: 0.0 };
        let t = generate(&p).unwrap();
        assert!(t.instrs.iter().all(|i| i.op.is_bitwise()));
    }

    #[test]
    fn tiny_working_set_is_infeasible() {
        let mut p = builtin_profile("heat3d_like").unwrap();
        p.working_set = 1;
        assert!(matches!(generate(&p), Err(Error::InfeasibleProfile { .. })));
        let mut p = builtin_profile("heat3d_like").unwrap();
        p.avg_reuse = 0.5;
        assert!(matches!(generate(&p), Err(Error::InfeasibleProfile { .. })));
        let mut p = builtin_profile("heat3d_like").unwrap();
        p.latency_mix.low = 5.0;
        assert!(matches!(generate(&p), Err(Error::InfeasibleProfile { .. })));
    }

    #[test]
    fn quotas_are_exact() {
        assert_eq!(quotas(100, [87.0, 13.0, 0.0]), [87, 13, 0]);
        assert_eq!(quotas(7, [33.3, 33.3, 33.4]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn same_seed_same_trace() {
        let p = builtin_profile("llama_infer_like").unwrap().with_instructions(3_000);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        assert_ne!(generate(&p).unwrap(), generate(&p.clone().with_seed(1)).unwrap());
    }
}
