//! Per-NF flow state: local flow table plus a modeled remote store.
//!
//! Reads and writes against the local table are free. A read miss means the
//! state lives remotely; the engine charges the fetch latency to the packet's
//! batch and installs the fetched value here. Dirty entries are flushed to
//! the remote store on a background cadence that never touches packet
//! latency.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use crate::types::{FetchLatency, FlowKey, StateStoreModel, TimeNs};

/// Opaque per-flow state value.
pub type StateVal = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    Hit(StateVal),
    /// State not resident; caller schedules a remote fetch.
    Miss,
}

/// Local flow table of one NF task.
#[derive(Debug, Clone, Default)]
pub struct FlowStateTable {
    entries: HashMap<FlowKey, StateVal>,
    dirty: HashSet<FlowKey>,
    pub misses: u64,
    pub fetches_completed: u64,
    pub syncs: u64,
}

/// Result of one background sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncEvent {
    pub time_ns: TimeNs,
    pub flushed: usize,
}

impl FlowStateTable {
    pub fn new() -> Self {
        FlowStateTable::default()
    }

    /// Local write: stores the value and marks the flow dirty.
    pub fn state_update(&mut self, flow: FlowKey, val: StateVal) {
        self.entries.insert(flow, val);
        self.dirty.insert(flow);
    }

    /// Local read. A miss is a normal outcome, counted here; the caller
    /// decides what the fetch costs.
    pub fn state_read(&mut self, flow: &FlowKey) -> ReadOutcome {
        match self.entries.get(flow) {
            Some(v) => ReadOutcome::Hit(*v),
            None => {
                self.misses += 1;
                ReadOutcome::Miss
            }
        }
    }

    /// Installs state pulled from the remote store. Fetched state is clean:
    /// it does not enter the dirty set.
    pub fn install_fetched(&mut self, flow: FlowKey, val: StateVal) {
        self.entries.insert(flow, val);
        self.fetches_completed += 1;
    }

    /// Flushes the dirty set at a sync point.
    pub fn periodic_sync(&mut self, now: TimeNs) -> SyncEvent {
        let flushed = self.dirty.len();
        self.dirty.clear();
        self.syncs += 1;
        SyncEvent { time_ns: now, flushed }
    }

    pub fn dirty_len(&self) -> usize {
        self.dirty.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }
}

/// Samples one remote fetch latency.
pub fn sample_fetch_latency<R: Rng>(model: &StateStoreModel, rng: &mut R) -> TimeNs {
    match model.fetch_latency {
        FetchLatency::Constant { ns } => ns,
        FetchLatency::Uniform { min_ns, max_ns } => rng.gen_range(min_ns..=max_ns),
    }
}

/// How many background syncs a run of `run_end` nanoseconds sees: one at
/// every whole multiple of the period, excluding time zero.
pub fn sync_event_count(sync_period_ns: TimeNs, run_end_ns: TimeNs) -> u64 {
    assert!(sync_period_ns > 0, "sync period must be positive");
    run_end_ns / sync_period_ns
}
