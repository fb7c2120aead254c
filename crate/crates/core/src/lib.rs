//! Trace-driven simulator of zoned flash storage: a shared flash device with
//! an SLC region, limited write buffers, hybrid L2P mapping, garbage
//! collection, and block plus zoned namespaces on top.

pub mod allocator;
pub mod config;
pub mod device;
pub mod error;
pub mod events;
pub mod gc;
pub mod geometry;
pub mod harness;
pub mod mapping;
pub mod namespace;
pub mod stats;
pub mod timing;
pub mod trace;
pub mod workload;
pub mod write_path;

pub use config::SimConfig;
pub use device::Device;
pub use error::{SimError, SimResult};
pub use harness::{run_trace, Simulation};
pub use stats::{emit_report, ReportFormat, StatsReport};
