//! Miniature loop-kernel IR and the strip-mining vectorizer that lowers
//! it to a page-aligned instruction trace.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{apply, PageStore};
use crate::isa::{
    build_deps, elements_per_page, PageId, ScalarOp, Trace, TraceHeader, VecInstr, VecOpType,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    /// `array[stride * i + offset]`
    Affine { array: usize, stride: i64, offset: i64 },
    /// `array[index_array[i]]`; not analyzable.
    Indirect { array: usize, index_array: usize },
}

impl Access {
    pub fn unit(array: usize) -> Self {
        Access::Affine { array, stride: 1, offset: 0 }
    }

    pub fn shifted(array: usize, offset: i64) -> Self {
        Access::Affine { array, stride: 1, offset }
    }

    fn array(&self) -> usize {
        match *self {
            Access::Affine { array, .. } | Access::Indirect { array, .. } => array,
        }
    }

    fn is_aligned(&self) -> bool {
        matches!(self, Access::Affine { stride: 1, offset: 0, .. })
    }

    fn index(&self, i: u32) -> i64 {
        match *self {
            Access::Affine { stride, offset, .. } => stride * i as i64 + offset,
            Access::Indirect { .. } => unreachable!("indirect accesses are rejected"),
        }
    }
}

/// `dst[..] = op(srcs[..])`, evaluated once per loop iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub op: VecOpType,
    pub dst: Access,
    pub srcs: Vec<Access>,
    pub vectorizable: bool,
    #[serde(default)]
    pub loop_carried: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountedLoop {
    pub trip_count: u32,
    pub body: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelIR {
    pub name: String,
    pub element_width: u8,
    pub page_size: u32,
    pub arrays: Vec<ArrayDecl>,
    pub loops: Vec<CountedLoop>,
}

impl KernelIR {
    pub fn elements_per_page(&self) -> u32 {
        elements_per_page(self.page_size, self.element_width)
    }

    /// First logical page of each array; arrays are laid out back to back.
    pub fn array_bases(&self) -> Vec<PageId> {
        let e = self.elements_per_page() as u64;
        let mut next = 0;
        self.arrays
            .iter()
            .map(|a| {
                let base = next;
                next += (a.len as u64).div_ceil(e).max(1);
                base
            })
            .collect()
    }

    fn locate(&self, bases: &[PageId], array: usize, index: i64) -> (PageId, u32) {
        let e = self.elements_per_page() as i64;
        (bases[array] + (index / e) as u64, (index % e) as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.element_width, 8 | 32) {
            return Err(Error::KernelRejected {
                loop_idx: 0,
                stmt_idx: 0,
                reason: format!("element width {} is not 8 or 32", self.element_width),
            });
        }
        for (li, lp) in self.loops.iter().enumerate() {
            for (si, st) in lp.body.iter().enumerate() {
                let reject = |reason: String| Error::KernelRejected {
                    loop_idx: li,
                    stmt_idx: si,
                    reason,
                };
                if matches!(st.op, VecOpType::Scalar | VecOpType::Shuffle | VecOpType::ReduceAdd) {
                    return Err(reject(format!("{} is not an elementwise statement", st.op)));
                }
                if !st.op.arity().contains(&st.srcs.len()) {
                    return Err(reject(format!("{} with {} operands", st.op, st.srcs.len())));
                }
                for acc in std::iter::once(&st.dst).chain(&st.srcs) {
                    if let Access::Indirect { .. } = acc {
                        return Err(reject("non-affine (indirect) access".into()));
                    }
                    let a = acc.array();
                    let Some(decl) = self.arrays.get(a) else {
                        return Err(reject(format!("unknown array {a}")));
                    };
                    if lp.trip_count > 0 {
                        let lo = acc.index(0).min(acc.index(lp.trip_count - 1));
                        let hi = acc.index(0).max(acc.index(lp.trip_count - 1));
                        if lo < 0 || hi >= decl.len as i64 {
                            return Err(reject(format!(
                                "access to {} spans [{lo}, {hi}] outside [0, {})",
                                decl.name, decl.len
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Which statements of a loop become vector instructions.
fn vector_plan(lp: &CountedLoop) -> Vec<bool> {
    let body = &lp.body;
    let eligible = |st: &Statement| {
        st.vectorizable
            && !st.loop_carried
            && st.dst.is_aligned()
            && st.srcs.iter().all(Access::is_aligned)
    };
    let arrays_of = |st: &Statement| -> Vec<usize> {
        std::iter::once(&st.dst).chain(&st.srcs).map(Access::array).collect()
    };
    let mut plan: Vec<bool> = body
        .iter()
        .map(|st| {
            eligible(st)
                && arrays_of(st).iter().all(|&a| {
                    body.iter().all(|other| {
                        std::iter::once(&other.dst)
                            .chain(&other.srcs)
                            .filter(|acc| acc.array() == a)
                            .all(Access::is_aligned)
                    })
                })
        })
        .collect();

    // Splitting the body into runs reorders scalar statements that sit on
    // opposite sides of a vector statement; only allow it when those
    // statements do not communicate through a misaligned access.
    let run_of: Vec<usize> = {
        let mut run = 0;
        let mut out = Vec::with_capacity(body.len());
        for (i, &v) in plan.iter().enumerate() {
            if i > 0 && (v || plan[i - 1]) {
                run += 1;
            }
            out.push(run);
        }
        out
    };
    for a in 0..body.len() {
        for b in a + 1..body.len() {
            if plan[a] || plan[b] || run_of[a] == run_of[b] {
                continue;
            }
            let (sa, sb) = (&body[a], &body[b]);
            let conflict = std::iter::once(&sa.dst).chain(&sa.srcs).any(|x| {
                std::iter::once(&sb.dst).chain(&sb.srcs).any(|y| {
                    x.array() == y.array()
                        && (x.array() == sa.dst.array() || y.array() == sb.dst.array())
                        && !(x.is_aligned() && y.is_aligned())
                })
            });
            if conflict {
                plan.iter_mut().for_each(|p| *p = false);
                return plan;
            }
        }
    }
    plan
}

/// Strip-mines every loop: each vectorizable statement becomes one vector
/// instruction per strip; other statements emit one SCALAR instruction
/// per iteration. Strips never cross a page boundary.
pub fn vectorize_kernel(k: &KernelIR, vector_width: u32) -> Result<Trace> {
    k.validate()?;
    let per_page = k.elements_per_page();
    if vector_width == 0 || vector_width > per_page {
        return Err(Error::VectorTooWide { width: vector_width as usize, max: per_page as usize });
    }
    let bases = k.array_bases();
    let mut header = TraceHeader::new(k.page_size, k.element_width, k.name.clone());
    header.vector_width = vector_width;
    let mut instrs: Vec<VecInstr> = Vec::new();

    for lp in &k.loops {
        let plan = vector_plan(lp);
        let mut lo = 0u32;
        while lo < lp.trip_count {
            let page_end = (lo / per_page + 1) * per_page;
            let hi = (lo + vector_width).min(page_end).min(lp.trip_count);
            let mut s = 0;
            while s < lp.body.len() {
                if plan[s] {
                    let st = &lp.body[s];
                    let page = |acc: &Access| k.locate(&bases, acc.array(), lo as i64).0;
                    instrs.push(VecInstr {
                        id: instrs.len() as u32,
                        op: st.op,
                        src_pages: st.srcs.iter().map(page).collect(),
                        dst_page: page(&st.dst),
                        vector_length: hi - lo,
                        element_width: k.element_width,
                        producer_ids: vec![],
                        offset: lo % per_page,
                        scalar: None,
                    });
                    s += 1;
                    continue;
                }
                let run_end = (s..lp.body.len()).find(|&j| plan[j]).unwrap_or(lp.body.len());
                for i in lo..hi {
                    for st in &lp.body[s..run_end] {
                        let (dst_page, dst_elem) = k.locate(&bases, st.dst.array(), st.dst.index(i));
                        let mut src_pages = Vec::with_capacity(st.srcs.len());
                        let mut elems = vec![dst_elem];
                        for acc in &st.srcs {
                            let (p, e) = k.locate(&bases, acc.array(), acc.index(i));
                            src_pages.push(p);
                            elems.push(e);
                        }
                        instrs.push(VecInstr {
                            id: instrs.len() as u32,
                            op: VecOpType::Scalar,
                            src_pages,
                            dst_page,
                            vector_length: 1,
                            element_width: k.element_width,
                            producer_ids: vec![],
                            offset: 0,
                            scalar: Some(ScalarOp { inner: st.op, elems }),
                        });
                    }
                }
                s = run_end;
            }
            lo = hi;
        }
    }
    build_deps(&mut instrs);
    let trace = Trace { header, instrs, contents: None };
    trace.validate()?;
    Ok(trace)
}

/// Direct, iteration-by-iteration interpretation of the kernel.
pub fn interpret_kernel(k: &KernelIR, store: &mut PageStore) -> Result<()> {
    k.validate()?;
    let bases = k.array_bases();
    let w = k.element_width;
    for lp in &k.loops {
        for i in 0..lp.trip_count {
            for st in &lp.body {
                let args: Vec<u32> = st
                    .srcs
                    .iter()
                    .map(|acc| {
                        let (p, e) = k.locate(&bases, acc.array(), acc.index(i));
                        store.get(p, e, w)
                    })
                    .collect();
                let (p, e) = k.locate(&bases, st.dst.array(), st.dst.index(i));
                store.set(p, e, w, apply(st.op, &args, w));
            }
        }
    }
    Ok(())
}

/// Random page contents for every page the kernel's arrays occupy.
pub fn random_contents(k: &KernelIR, seed: u64) -> BTreeMap<PageId, Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = k.array_bases();
    let e = k.elements_per_page() as u64;
    let mut out = BTreeMap::new();
    for (a, decl) in k.arrays.iter().enumerate() {
        for p in 0..(decl.len as u64).div_ceil(e).max(1) {
            let mut bytes = vec![0u8; k.page_size as usize];
            rng.fill(bytes.as_mut_slice());
            out.insert(bases[a] + p, bytes);
        }
    }
    out
}

/// A random valid kernel mixing aligned, shifted and dependence-flagged
/// statements. Used by property tests and benchmarks.
pub fn random_kernel(seed: u64, page_size: u32, element_width: u8) -> KernelIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_page = elements_per_page(page_size, element_width);
    let n_arrays = rng.gen_range(2..=5);
    let len = rng.gen_range(1..=3 * per_page) + 2;
    let arrays: Vec<ArrayDecl> =
        (0..n_arrays).map(|i| ArrayDecl { name: format!("a{i}"), len }).collect();
    let ops = [
        VecOpType::And,
        VecOpType::Or,
        VecOpType::Xor,
        VecOpType::Not,
        VecOpType::Shl,
        VecOpType::Shr,
        VecOpType::Add,
        VecOpType::Sub,
        VecOpType::Mul,
        VecOpType::CmpGt,
        VecOpType::CmpEq,
        VecOpType::Select,
        VecOpType::Copy,
    ];
    let n_loops = rng.gen_range(1..=3);
    let mut loops = Vec::new();
    for _ in 0..n_loops {
        let trip = rng.gen_range(1..=len - 2);
        let n_stmts = rng.gen_range(1..=4);
        let mut body = Vec::new();
        for _ in 0..n_stmts {
            let op = ops[rng.gen_range(0..ops.len())];
            let arity = *op.arity().start();
            let access = |rng: &mut ChaCha8Rng| {
                let array = rng.gen_range(0..n_arrays);
                if rng.gen_bool(0.2) {
                    Access::shifted(array, rng.gen_range(0..=2))
                } else {
                    Access::unit(array)
                }
            };
            let dst = access(&mut rng);
            let srcs = (0..arity).map(|_| access(&mut rng)).collect();
            body.push(Statement {
                op,
                dst,
                srcs,
                vectorizable: rng.gen_bool(0.8),
                loop_carried: rng.gen_bool(0.15),
            });
        }
        loops.push(CountedLoop { trip_count: trip, body });
    }
    KernelIR { name: format!("random-{seed}"), element_width, page_size, arrays, loops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::interpret_trace;

    fn add_kernel(n: u32, vectorizable: bool) -> KernelIR {
        KernelIR {
            name: "add".into(),
            element_width: 8,
            page_size: 4096,
            arrays: (0..3).map(|i| ArrayDecl { name: format!("a{i}"), len: n }).collect(),
            loops: vec![CountedLoop {
                trip_count: n,
                body: vec![Statement {
                    op: VecOpType::Add,
                    dst: Access::unit(2),
                    srcs: vec![Access::unit(0), Access::unit(1)],
                    vectorizable,
                    loop_carried: false,
                }],
            }],
        }
    }

    #[test]
    fn full_strips() {
        let t = vectorize_kernel(&add_kernel(8192, true), 4096).unwrap();
        assert_eq!(t.instrs.len(), 2);
        assert!(t.instrs.iter().all(|i| i.op == VecOpType::Add && i.vector_length == 4096));
    }

    #[test]
    fn remainder_strip() {
        let t = vectorize_kernel(&add_kernel(5000, true), 4096).unwrap();
        let lens: Vec<u32> = t.instrs.iter().map(|i| i.vector_length).collect();
        assert_eq!(lens, vec![4096, 904]);
    }

    #[test]
    fn non_vectorizable_emits_scalars() {
        let t = vectorize_kernel(&add_kernel(10, false), 4096).unwrap();
        assert_eq!(t.instrs.len(), 10);
        assert!(t.instrs.iter().all(VecInstr::is_scalar));
    }

    #[test]
    fn too_wide_rejected() {
        assert!(matches!(
            vectorize_kernel(&add_kernel(10, true), 4097),
            Err(Error::VectorTooWide { .. })
        ));
    }

    #[test]
    fn indirect_rejected_with_location() {
        let mut k = add_kernel(10, true);
        k.loops[0].body[0].srcs[1] = Access::Indirect { array: 1, index_array: 0 };
        match vectorize_kernel(&k, 64) {
            Err(Error::KernelRejected { loop_idx: 0, stmt_idx: 0, reason }) => {
                assert!(reason.contains("non-affine"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixed_loop_with_carried_statement() {
        let mut k = add_kernel(100, true);
        k.arrays.push(ArrayDecl { name: "acc".into(), len: 100 });
        k.loops[0].body.push(Statement {
            op: VecOpType::Add,
            dst: Access::shifted(3, 1),
            srcs: vec![Access::unit(3), Access::unit(2)],
            vectorizable: true,
            loop_carried: true,
        });
        k.loops[0].trip_count = 99;
        let t = vectorize_kernel(&k, 64).unwrap();
        let scalars = t.instrs.iter().filter(|i| i.is_scalar()).count();
        assert!(scalars > 0 && scalars < t.instrs.len());
        // equivalence with direct interpretation
        let contents = random_contents(&k, 3);
        let mut direct = PageStore::from_contents(k.page_size, &contents);
        interpret_kernel(&k, &mut direct).unwrap();
        let mut tt = t.clone();
        tt.contents = Some(contents);
        assert_eq!(interpret_trace(&tt).into_sorted(), direct.into_sorted());
    }
}
