//! Discrete-event simulation: event queue, traffic synthesis, run
//! metrics, the cluster engine, and single-instance profiling runs.

pub mod engine;
pub mod event;
pub mod metrics;
pub mod profile;
pub mod traffic;

pub use engine::{
    plan_chains, run_scenario, ChainPlan, DepartureRec, OutputOptions, PoolSample, RunArtifacts,
    Scenario, SimError,
};
pub use event::{Event, EventKind, EventQueue, FlowId, RoundPhase};
pub use metrics::{ChainReport, ConservationError, MetricsCollector, MetricsReport};
pub use profile::{measure_saturated_rate, profile_chain};
pub use traffic::{FlowRt, TrafficGen, TrafficModel};
