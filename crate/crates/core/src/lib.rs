//! Coding-aware opportunistic routing for wireless mesh networks, with COPE
//! and plain shortest-path baselines and a discrete-event simulator to
//! compare them.

pub mod baselines;
pub mod batch;
pub mod coding;
pub mod frames;
pub mod node;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod topology;
