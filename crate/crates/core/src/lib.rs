//! Event-driven simulator of near-data processing inside an SSD with three
//! computation resources (controller cores, in-DRAM bulk bitwise units and
//! in-flash logic), an instruction-granularity offloader, a strip-mining
//! trace vectorizer and synthetic workload generators.

pub mod config;
pub mod engine;
pub mod error;
pub mod interp;
pub mod isa;
pub mod kernel;
pub mod offloader;
pub mod resources;
pub mod stats;
pub mod topology;
pub mod trace_io;
pub mod workloads;

pub use config::{default_config, load_config, SimConfig};
pub use error::{Error, Result};
pub use isa::{InstrId, LatencyClass, PageId, Trace, TraceHeader, VecInstr, VecOpType};
pub use offloader::{choose, total_latency, Decision, FeatureVector, Policy};
pub use resources::ResourceKind;
pub use stats::{trace_stats, TraceProfile};
pub use topology::{FlashAddress, Nanos, Picojoules, SsdTopology};
