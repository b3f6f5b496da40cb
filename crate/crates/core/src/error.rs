use thiserror::Error;

use crate::isa::{InstrId, PageId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("flash address out of bounds: {0}")]
    AddressOutOfBounds(String),

    #[error("trace decode error at line {line}: {reason}")]
    TraceDecode { line: usize, reason: String },

    #[error("trace schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid trace: instruction {id}: {reason}")]
    InvalidTrace { id: InstrId, reason: String },

    #[error("kernel rejected at loop {loop_idx}, statement {stmt_idx}: {reason}")]
    KernelRejected {
        loop_idx: usize,
        stmt_idx: usize,
        reason: String,
    },

    #[error("vector width {width} exceeds one page ({max} elements)")]
    VectorTooWide { width: usize, max: usize },

    #[error("{resource} does not support {op}")]
    Unsupported { resource: String, op: String },

    #[error("execution queue: completed batch {got} is not the queue head ({head:?})")]
    QueueOrder { got: u64, head: Option<u64> },

    #[error("infeasible workload profile {name}: {reason}")]
    InfeasibleProfile { name: String, reason: String },

    #[error("unknown profile `{name}` (valid: {valid})")]
    UnknownProfile { name: String, valid: String },

    #[error("unknown policy `{0}` (valid: conduit, bw-offloading, dm-offloading, ideal, fixed-isp, fixed-pud, fixed-ifp)")]
    UnknownPolicy(String),

    #[error("unknown resource `{0}` (valid: isp, pud, ifp)")]
    UnknownResource(String),

    #[error("trace footprint of {pages} pages exceeds simulated capacity of {capacity} pages")]
    CapacityExceeded { pages: u64, capacity: u64 },

    #[error("unknown logical page {0}")]
    UnknownPage(PageId),

    #[error("empty sample")]
    EmptySample,

    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),

    #[error("functional mismatch on page {page} (last written by instruction {instr:?}): {detail}")]
    FunctionalMismatch {
        page: PageId,
        instr: Option<InstrId>,
        detail: String,
    },

    #[error("functional verification requires initial page contents in the trace")]
    MissingContents,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
