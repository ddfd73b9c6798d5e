//! Simulation library for chains of network functions scheduled as
//! cooperative process groups on dedicated cores.
//!
//! The crate models a small cluster end to end: flows arrive at a
//! programmable ingress, packets land in per-instance NIC queues, worker
//! cores run batch rounds to completion with explicit yields, buffer
//! ownership is tracked against isolation rules, and a controller scales
//! instances against profiled load thresholds.

pub mod batch;
pub mod controller;
pub mod ingress;
pub mod nf_state;
pub mod packet_plane;
pub mod scenario;
pub mod sched;
pub mod sim;
pub mod types;

pub use types::{Cycles, TimeNs};
