//! Deterministic discrete-event simulation of a wireless mesh.

pub mod engine;
pub mod events;
pub mod metrics;
pub mod traffic;

pub use engine::{check_medium_exclusivity, run, EtxMode, MacParams, ProtocolKind, RunResult, SimConfig, TxRecord};
pub use events::EventQueue;
pub use metrics::{compute_avg_delay, compute_avg_throughput, compute_pdr, Checkpoint, Counters, MetricsReport};
pub use traffic::{auto_flows, FlowSpec};
