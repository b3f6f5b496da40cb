//! Vectorized instruction representation and the trace container.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type InstrId = u32;
pub type PageId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyClass {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VecOpType {
    And,
    Or,
    Xor,
    Not,
    Shl,
    Shr,
    Add,
    Sub,
    Mul,
    CmpGt,
    CmpEq,
    Select,
    Copy,
    Shuffle,
    ReduceAdd,
    /// Non-vectorizable fallback executed element by element on a core.
    Scalar,
}

impl VecOpType {
    pub const ALL: [VecOpType; 16] = [
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
        VecOpType::Shuffle,
        VecOpType::ReduceAdd,
        VecOpType::Scalar,
    ];

    /// Every op that can appear as a vector instruction.
    pub const VECTOR: [VecOpType; 15] = [
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
        VecOpType::Shuffle,
        VecOpType::ReduceAdd,
    ];

    pub fn latency_class(self) -> LatencyClass {
        use VecOpType::*;
        match self {
            And | Or | Xor | Not | Shl | Shr | Copy => LatencyClass::Low,
            Add | Sub | CmpGt | CmpEq | Select | Shuffle | Scalar => LatencyClass::Medium,
            Mul | ReduceAdd => LatencyClass::High,
        }
    }

    pub fn is_bitwise(self) -> bool {
        use VecOpType::*;
        matches!(self, And | Or | Xor | Not | Shl | Shr)
    }

    /// Allowed source-operand counts.
    pub fn arity(self) -> std::ops::RangeInclusive<usize> {
        use VecOpType::*;
        match self {
            And | Or | Xor => 2..=48,
            Add | Sub | Mul | CmpGt | CmpEq => 2..=2,
            Not | Shl | Shr | Copy | Shuffle | ReduceAdd => 1..=1,
            Select => 3..=3,
            Scalar => 0..=3,
        }
    }

    pub fn name(self) -> &'static str {
        use VecOpType::*;
        match self {
            And => "AND",
            Or => "OR",
            Xor => "XOR",
            Not => "NOT",
            Shl => "SHL",
            Shr => "SHR",
            Add => "ADD",
            Sub => "SUB",
            Mul => "MUL",
            CmpGt => "CMP_GT",
            CmpEq => "CMP_EQ",
            Select => "SELECT",
            Copy => "COPY",
            Shuffle => "SHUFFLE",
            ReduceAdd => "REDUCE_ADD",
            Scalar => "SCALAR",
        }
    }
}

impl fmt::Display for VecOpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Element-level payload of a SCALAR instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalarOp {
    /// The element operation being performed.
    pub inner: VecOpType,
    /// `[dst_elem, src_elem...]`, page-local element indices.
    pub elems: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VecInstr {
    pub id: InstrId,
    pub op: VecOpType,
    #[serde(rename = "srcs")]
    pub src_pages: Vec<PageId>,
    #[serde(rename = "dst")]
    pub dst_page: PageId,
    #[serde(rename = "len")]
    pub vector_length: u32,
    #[serde(rename = "width")]
    pub element_width: u8,
    #[serde(rename = "deps")]
    pub producer_ids: Vec<InstrId>,
    /// First element (page-local) touched by a vector instruction.
    #[serde(rename = "off", default, skip_serializing_if = "is_zero")]
    pub offset: u32,
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarOp>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl VecInstr {
    pub fn is_scalar(&self) -> bool {
        self.op == VecOpType::Scalar
    }

    pub fn vector_bytes(&self) -> u64 {
        (self.vector_length as u64 * self.element_width as u64).div_ceil(8)
    }

    pub fn vector_bits(&self) -> u64 {
        self.vector_length as u64 * self.element_width as u64
    }

    /// Op whose element semantics this instruction applies.
    pub fn element_op(&self) -> VecOpType {
        match &self.scalar {
            Some(s) => s.inner,
            None => self.op,
        }
    }
}

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub vector_width: u32,
    pub element_width: u8,
    pub page_size: u32,
    pub profile: String,
}

impl TraceHeader {
    pub fn new(page_size: u32, element_width: u8, profile: impl Into<String>) -> Self {
        Self {
            version: TRACE_VERSION,
            vector_width: elements_per_page(page_size, element_width),
            element_width,
            page_size,
            profile: profile.into(),
        }
    }

    pub fn elements_per_page(&self) -> u32 {
        elements_per_page(self.page_size, self.element_width)
    }
}

pub fn elements_per_page(page_size: u32, element_width: u8) -> u32 {
    page_size * 8 / element_width.max(1) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub instrs: Vec<VecInstr>,
    /// Initial page contents for functional verification.
    pub contents: Option<BTreeMap<PageId, Vec<u8>>>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, instrs: Vec::new(), contents: None }
    }

    /// Highest page id referenced, if any.
    pub fn max_page(&self) -> Option<PageId> {
        self.instrs
            .iter()
            .flat_map(|i| i.src_pages.iter().copied().chain(std::iter::once(i.dst_page)))
            .max()
    }

    pub fn validate(&self) -> Result<()> {
        validate_instrs(&self.header, &self.instrs)?;
        if let Some(contents) = &self.contents {
            for (page, bytes) in contents {
                if bytes.len() != self.header.page_size as usize {
                    return Err(Error::InvalidTrace {
                        id: 0,
                        reason: format!(
                            "initial contents of page {page} have {} bytes, expected {}",
                            bytes.len(),
                            self.header.page_size
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn validate_instrs(header: &TraceHeader, instrs: &[VecInstr]) -> Result<()> {
    if header.version != TRACE_VERSION {
        return Err(Error::SchemaVersion { found: header.version, expected: TRACE_VERSION });
    }
    if !matches!(header.element_width, 8 | 32) {
        return Err(Error::InvalidTrace {
            id: 0,
            reason: format!("element width {} is not 8 or 32", header.element_width),
        });
    }
    let per_page = header.elements_per_page();
    if header.vector_width == 0 || header.vector_width > per_page {
        return Err(Error::VectorTooWide {
            width: header.vector_width as usize,
            max: per_page as usize,
        });
    }
    for (pos, ins) in instrs.iter().enumerate() {
        let bad = |reason: String| Error::InvalidTrace { id: ins.id, reason };
        if ins.id as usize != pos {
            return Err(bad(format!("ids must be dense from 0, found at position {pos}")));
        }
        if let Some(&p) = ins.producer_ids.iter().find(|&&p| p >= ins.id) {
            return Err(bad(format!("producer {p} does not precede instruction")));
        }
        if ins.element_width != header.element_width {
            return Err(bad(format!(
                "element width {} differs from header {}",
                ins.element_width, header.element_width
            )));
        }
        if !ins.op.arity().contains(&ins.src_pages.len()) {
            return Err(bad(format!("{} with {} sources", ins.op, ins.src_pages.len())));
        }
        if ins.is_scalar() {
            let Some(s) = &ins.scalar else {
                return Err(bad("SCALAR without element payload".into()));
            };
            if s.inner == VecOpType::Scalar || !s.inner.arity().contains(&ins.src_pages.len())
            {
                return Err(bad(format!("bad scalar inner op {}", s.inner)));
            }
            if ins.vector_length != 1 {
                return Err(bad("SCALAR must have vector_length 1".into()));
            }
            if s.elems.len() != ins.src_pages.len() + 1 || s.elems.iter().any(|&e| e >= per_page)
            {
                return Err(bad("scalar element indices malformed".into()));
            }
        } else {
            if ins.scalar.is_some() {
                return Err(bad("vector instruction carries a scalar payload".into()));
            }
            if ins.vector_length > header.vector_width {
                return Err(bad(format!(
                    "vector length {} exceeds header width {}",
                    ins.vector_length, header.vector_width
                )));
            }
            if ins.offset + ins.vector_length > per_page {
                return Err(bad("vector crosses a page boundary".into()));
            }
        }
    }
    Ok(())
}

/// Recomputes dependence lists from page-granular hazards: read-after-write
/// on sources, write-after-write and write-after-read on the destination.
pub fn build_deps(instrs: &mut [VecInstr]) {
    let mut last_writer: HashMap<PageId, InstrId> = HashMap::new();
    let mut readers: HashMap<PageId, Vec<InstrId>> = HashMap::new();
    for ins in instrs.iter_mut() {
        let mut deps = Vec::new();
        for p in &ins.src_pages {
            if let Some(&w) = last_writer.get(p) {
                deps.push(w);
            }
        }
        if let Some(&w) = last_writer.get(&ins.dst_page) {
            deps.push(w);
        }
        if let Some(rs) = readers.get(&ins.dst_page) {
            deps.extend(rs.iter().copied().filter(|&r| r != ins.id));
        }
        deps.sort_unstable();
        deps.dedup();
        ins.producer_ids = deps;
        for p in &ins.src_pages {
            readers.entry(*p).or_default().push(ins.id);
        }
        readers.insert(ins.dst_page, Vec::new());
        last_writer.insert(ins.dst_page, ins.id);
    }
}
