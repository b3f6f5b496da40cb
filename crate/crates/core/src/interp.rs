//! Scalar reference interpreter over page contents.

use std::collections::{BTreeMap, HashMap};

use crate::isa::{PageId, Trace, VecInstr, VecOpType};

/// Byte contents of logical pages. Untouched pages read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageStore {
    page_size: usize,
    pages: HashMap<PageId, Vec<u8>>,
}

impl PageStore {
    pub fn new(page_size: u32) -> Self {
        Self { page_size: page_size as usize, pages: HashMap::new() }
    }

    pub fn from_contents(page_size: u32, contents: &BTreeMap<PageId, Vec<u8>>) -> Self {
        let mut s = Self::new(page_size);
        for (k, v) in contents {
            s.pages.insert(*k, v.clone());
        }
        s
    }

    pub fn page(&self, id: PageId) -> Vec<u8> {
        self.pages.get(&id).cloned().unwrap_or_else(|| vec![0; self.page_size])
    }

    fn page_mut(&mut self, id: PageId) -> &mut Vec<u8> {
        let size = self.page_size;
        self.pages.entry(id).or_insert_with(|| vec![0; size])
    }

    pub fn get(&self, page: PageId, elem: u32, width: u8) -> u32 {
        match self.pages.get(&page) {
            Some(bytes) => read_elem(bytes, elem, width),
            None => 0,
        }
    }

    pub fn set(&mut self, page: PageId, elem: u32, width: u8, value: u32) {
        write_elem(self.page_mut(page), elem, width, value)
    }

    pub fn into_sorted(self) -> BTreeMap<PageId, Vec<u8>> {
        self.pages.into_iter().collect()
    }

    pub fn page_ids(&self) -> impl Iterator<Item = &PageId> {
        self.pages.keys()
    }

    /// New contents of the destination page, leaving the store untouched.
    pub fn evaluate(&self, ins: &VecInstr) -> Vec<u8> {
        let mut scratch = PageStore::new(self.page_size as u32);
        for &p in ins.src_pages.iter().chain(std::iter::once(&ins.dst_page)) {
            if let Some(bytes) = self.pages.get(&p) {
                scratch.pages.insert(p, bytes.clone());
            }
        }
        scratch.execute(ins);
        scratch.page(ins.dst_page)
    }

    pub fn set_page(&mut self, id: PageId, bytes: Vec<u8>) {
        self.pages.insert(id, bytes);
    }

    /// Executes one instruction in place.
    pub fn execute(&mut self, ins: &VecInstr) {
        let w = ins.element_width;
        if let Some(s) = &ins.scalar {
            let args: Vec<u32> = ins
                .src_pages
                .iter()
                .zip(&s.elems[1..])
                .map(|(&p, &e)| self.get(p, e, w))
                .collect();
            let v = apply(s.inner, &args, w);
            self.set(ins.dst_page, s.elems[0], w, v);
            return;
        }
        let off = ins.offset;
        let len = ins.vector_length;
        let srcs: Vec<Vec<u32>> = ins
            .src_pages
            .iter()
            .map(|&p| (off..off + len).map(|e| self.get(p, e, w)).collect())
            .collect();
        match ins.op {
            VecOpType::Shuffle => {
                for j in 0..len {
                    let v = srcs[0][(len - 1 - j) as usize];
                    self.set(ins.dst_page, off + j, w, v);
                }
            }
            VecOpType::ReduceAdd => {
                let sum = srcs[0].iter().fold(0u32, |a, &b| a.wrapping_add(b));
                self.set(ins.dst_page, off, w, mask(sum, w));
            }
            op => {
                let mut args = vec![0u32; srcs.len()];
                for j in 0..len as usize {
                    for (a, s) in args.iter_mut().zip(&srcs) {
                        *a = s[j];
                    }
                    self.set(ins.dst_page, off + j as u32, w, apply(op, &args, w));
                }
            }
        }
    }
}

fn mask(v: u32, width: u8) -> u32 {
    if width >= 32 {
        v
    } else {
        v & ((1u32 << width) - 1)
    }
}

/// Element semantics, unsigned and wrapping at the element width.
pub fn apply(op: VecOpType, args: &[u32], width: u8) -> u32 {
    use VecOpType::*;
    let v = match op {
        And => args.iter().fold(u32::MAX, |a, &b| a & b),
        Or => args.iter().fold(0, |a, &b| a | b),
        Xor => args.iter().fold(0, |a, &b| a ^ b),
        Not => !args[0],
        Shl => args[0] << 1,
        Shr => args[0] >> 1,
        Add => args[0].wrapping_add(args[1]),
        Sub => args[0].wrapping_sub(args[1]),
        Mul => args[0].wrapping_mul(args[1]),
        CmpGt => (args[0] > args[1]) as u32,
        CmpEq => (args[0] == args[1]) as u32,
        Select => {
            if args[0] != 0 {
                args[1]
            } else {
                args[2]
            }
        }
        Copy | Shuffle | ReduceAdd => args[0],
        Scalar => unreachable!("SCALAR is not an element op"),
    };
    mask(v, width)
}

pub fn read_elem(bytes: &[u8], elem: u32, width: u8) -> u32 {
    match width {
        8 => bytes[elem as usize] as u32,
        32 => {
            let i = elem as usize * 4;
            u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap())
        }
        _ => panic!("unsupported element width {width}"),
    }
}

pub fn write_elem(bytes: &mut [u8], elem: u32, width: u8, value: u32) {
    match width {
        8 => bytes[elem as usize] = value as u8,
        32 => {
            let i = elem as usize * 4;
            bytes[i..i + 4].copy_from_slice(&value.to_le_bytes());
        }
        _ => panic!("unsupported element width {width}"),
    }
}

/// Runs the whole trace in program order from its initial contents.
pub fn interpret_trace(trace: &Trace) -> PageStore {
    let mut store = match &trace.contents {
        Some(c) => PageStore::from_contents(trace.header.page_size, c),
        None => PageStore::new(trace.header.page_size),
    };
    for ins in &trace.instrs {
        store.execute(ins);
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_ops_wrap_at_width() {
        assert_eq!(apply(VecOpType::Add, &[250, 10], 8), 4);
        assert_eq!(apply(VecOpType::Sub, &[1, 2], 8), 255);
        assert_eq!(apply(VecOpType::Mul, &[16, 16], 8), 0);
        assert_eq!(apply(VecOpType::Not, &[0], 8), 255);
        assert_eq!(apply(VecOpType::Shl, &[0x80], 8), 0);
        assert_eq!(apply(VecOpType::Select, &[0, 1, 2], 8), 2);
        assert_eq!(apply(VecOpType::And, &[0xf0, 0x3c, 0xff], 8), 0x30);
        assert_eq!(apply(VecOpType::Add, &[u32::MAX, 1], 32), 0);
    }

    #[test]
    fn elems_round_trip_32bit() {
        let mut b = vec![0u8; 16];
        write_elem(&mut b, 2, 32, 0xdead_beef);
        assert_eq!(read_elem(&b, 2, 32), 0xdead_beef);
        assert_eq!(b[8], 0xef);
    }

    #[test]
    fn shuffle_reverses_and_reduce_sums() {
        let mut s = PageStore::new(8);
        for e in 0..4 {
            s.set(1, e, 8, e + 1);
        }
        let mut ins = VecInstr {
            id: 0,
            op: VecOpType::Shuffle,
            src_pages: vec![1],
            dst_page: 2,
            vector_length: 4,
            element_width: 8,
            producer_ids: vec![],
            offset: 0,
            scalar: None,
        };
        s.execute(&ins);
        assert_eq!((0..4).map(|e| s.get(2, e, 8)).collect::<Vec<_>>(), vec![4, 3, 2, 1]);
        ins.op = VecOpType::ReduceAdd;
        ins.dst_page = 3;
        s.execute(&ins);
        assert_eq!(s.get(3, 0, 8), 10);
        assert_eq!(s.get(3, 1, 8), 0);
    }
}
