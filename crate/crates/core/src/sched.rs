//! Cooperative run-to-completion scheduling of NF chains on dedicated cores.
//!
//! A deployed chain instance is a scheduling group (sgroup): its NF tasks are
//! registered together, wait detached without consuming CPU, and execute as a
//! unit once attached to a core. One batch round runs every NF over the whole
//! pulled batch in chain order, charging one context switch per handoff
//! (including the final yield back), which is what batching amortizes.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::nf_state::{sample_fetch_latency, FlowStateTable, ReadOutcome};
use crate::packet_plane::{
    copy_cost, Accessor, BufferRef, ChainPacketBuffer, NicVfQueue, OwnershipLedger,
};
use crate::types::{
    cycles_to_ns, ns_to_cycles, CostModel, Cycles, InstanceId, NfProfile, PacketRec, TimeNs,
    WorkerId,
};

/// Where an sgroup currently stands with the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SGroupState {
    Detached,
    Attached { core: usize },
    /// Detach requested mid-round; completes when the round ends.
    Draining { core: usize },
}

/// One NF task inside a core's queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskRef {
    pub instance: InstanceId,
    pub nf_index: u8,
}

/// A chain instance as the scheduler sees it.
#[derive(Debug, Clone)]
pub struct SGroup {
    pub instance: InstanceId,
    pub nf_count: usize,
    pub state: SGroupState,
    /// Set by ingress when flows are assigned; cleared on idle detection.
    pub active: bool,
    /// Batch multiplier B_v: DMA batches pulled per round.
    pub batch_multiplier: u32,
}

impl SGroup {
    pub fn new(instance: InstanceId, nf_count: usize, batch_multiplier: u32) -> Self {
        assert!(nf_count > 0 && batch_multiplier > 0);
        SGroup {
            instance,
            nf_count,
            state: SGroupState::Detached,
            active: false,
            batch_multiplier,
        }
    }
}

/// Run queue and attachment slot of one core.
#[derive(Debug, Clone, Default)]
pub struct CoreState {
    pub run_queue: VecDeque<TaskRef>,
    pub attached: Option<InstanceId>,
    pub busy_cycles: Cycles,
    pub rounds: u64,
}

/// Per-worker view of the cooperative scheduler: per-core run queues plus
/// the shared wait queue of registered-but-detached tasks.
#[derive(Debug, Clone)]
pub struct WorkerScheduler {
    pub worker_id: WorkerId,
    pub cores: Vec<CoreState>,
    wait_queue: Vec<TaskRef>,
    registered: Vec<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("sgroup {0} already registered")]
    DoubleRegistration(InstanceId),
    #[error("sgroup {0} not registered")]
    NotRegistered(InstanceId),
    #[error("core {0} already has an attached sgroup")]
    CoreBusy(usize),
    #[error("no such core {0}")]
    NoSuchCore(usize),
    #[error("sgroup {0} is not detached")]
    NotDetached(InstanceId),
    #[error("sgroup {0} is not attached")]
    NotAttached(InstanceId),
}

impl WorkerScheduler {
    pub fn new(worker_id: WorkerId, num_cores: u32) -> Self {
        WorkerScheduler {
            worker_id,
            cores: vec![CoreState::default(); num_cores as usize],
            wait_queue: Vec::new(),
            registered: Vec::new(),
        }
    }

    pub fn is_registered(&self, instance: InstanceId) -> bool {
        self.registered.contains(&instance)
    }

    pub fn registered_count(&self) -> usize {
        self.registered.len()
    }

    pub fn wait_queue(&self) -> &[TaskRef] {
        &self.wait_queue
    }

    pub fn attached_count(&self) -> usize {
        self.cores.iter().filter(|c| c.attached.is_some()).count()
    }

    pub fn pick_idle_core(&self) -> Option<usize> {
        self.cores.iter().position(|c| c.attached.is_none())
    }

    /// Places the sgroup's tasks in the wait queue. Detached sgroups consume
    /// no CPU.
    pub fn register_sgroup(&mut self, sg: &SGroup) -> Result<(), SchedError> {
        if self.is_registered(sg.instance) {
            return Err(SchedError::DoubleRegistration(sg.instance));
        }
        if sg.state != SGroupState::Detached {
            return Err(SchedError::NotDetached(sg.instance));
        }
        self.registered.push(sg.instance);
        for nf in 0..sg.nf_count {
            self.wait_queue.push(TaskRef { instance: sg.instance, nf_index: nf as u8 });
        }
        Ok(())
    }

    /// Removes a detached sgroup entirely (scale-in path).
    pub fn unregister_sgroup(&mut self, sg: &SGroup) -> Result<(), SchedError> {
        if !self.is_registered(sg.instance) {
            return Err(SchedError::NotRegistered(sg.instance));
        }
        if sg.state != SGroupState::Detached {
            return Err(SchedError::NotDetached(sg.instance));
        }
        self.registered.retain(|i| *i != sg.instance);
        self.wait_queue.retain(|t| t.instance != sg.instance);
        Ok(())
    }

    /// Moves the sgroup's tasks wait -> run queue in chain order and pins it
    /// to the core.
    pub fn attach_sgroup(&mut self, sg: &mut SGroup, core: usize) -> Result<(), SchedError> {
        if !self.is_registered(sg.instance) {
            return Err(SchedError::NotRegistered(sg.instance));
        }
        if sg.state != SGroupState::Detached {
            return Err(SchedError::NotDetached(sg.instance));
        }
        let slot = self.cores.get_mut(core).ok_or(SchedError::NoSuchCore(core))?;
        if slot.attached.is_some() {
            return Err(SchedError::CoreBusy(core));
        }
        let mut tasks: Vec<TaskRef> =
            self.wait_queue.iter().copied().filter(|t| t.instance == sg.instance).collect();
        tasks.sort_by_key(|t| t.nf_index);
        self.wait_queue.retain(|t| t.instance != sg.instance);
        slot.run_queue.extend(tasks);
        slot.attached = Some(sg.instance);
        sg.state = SGroupState::Attached { core };
        Ok(())
    }

    /// Requests a detach. Completes immediately when no round is running,
    /// otherwise the sgroup drains until the round ends.
    pub fn detach_sgroup(&mut self, sg: &mut SGroup, mid_round: bool) -> Result<SGroupState, SchedError> {
        let core = match sg.state {
            SGroupState::Attached { core } => core,
            _ => return Err(SchedError::NotAttached(sg.instance)),
        };
        if mid_round {
            sg.state = SGroupState::Draining { core };
        } else {
            self.finish_detach(sg, core);
        }
        Ok(sg.state)
    }

    /// Completes a drain once the in-flight round has ended.
    pub fn finalize_drain(&mut self, sg: &mut SGroup) -> Result<(), SchedError> {
        match sg.state {
            SGroupState::Draining { core } => {
                self.finish_detach(sg, core);
                Ok(())
            }
            _ => Err(SchedError::NotAttached(sg.instance)),
        }
    }

    fn finish_detach(&mut self, sg: &mut SGroup, core: usize) {
        let slot = &mut self.cores[core];
        let mut tasks: Vec<TaskRef> =
            slot.run_queue.iter().copied().filter(|t| t.instance == sg.instance).collect();
        tasks.sort_by_key(|t| t.nf_index);
        slot.run_queue.retain(|t| t.instance != sg.instance);
        slot.attached = None;
        self.wait_queue.extend(tasks);
        sg.state = SGroupState::Detached;
    }
}

/// Static context for one batch round.
#[derive(Debug, Clone, Copy)]
pub struct RoundInputs<'a> {
    pub now: TimeNs,
    pub round_id: u64,
    pub worker_id: WorkerId,
    pub core: usize,
    pub freq_hz: u64,
    pub costs: &'a CostModel,
    pub chain: &'a [NfProfile],
    pub chain_idx: u32,
    pub instance: InstanceId,
    pub batch_multiplier: u32,
    pub max_batch: u32,
}

/// Accounting record of one executed batch round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchExecutionTrace {
    pub round_id: u64,
    pub instance: InstanceId,
    pub chain_idx: u32,
    pub worker_id: WorkerId,
    pub core: usize,
    pub start_ns: TimeNs,
    pub end_ns: TimeNs,
    pub packets: u32,
    pub dma_batches: u32,
    pub copies: u32,
    pub ctx_switches: u32,
    /// Per-NF service cycles summed over the batch.
    pub service_cycles: Vec<Cycles>,
    pub copy_cycles: Cycles,
    pub ctx_cycles: Cycles,
    /// Warm-up at the first NF plus per-hop overhead downstream.
    pub overhead_cycles: Cycles,
    pub busy_cycles: Cycles,
    /// Remote state fetch time serialized into the round (not busy time).
    pub stall_ns: TimeNs,
    pub terminated: bool,
}

/// A remote state fetch begun during a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchRecord {
    pub nf_index: u8,
    pub flow: crate::types::FlowKey,
    pub complete_at: TimeNs,
}

/// Everything one round produced.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub trace: BatchExecutionTrace,
    /// Packet and its completion time at the last NF.
    pub departures: Vec<(PacketRec, TimeNs)>,
    pub fetches: Vec<FetchRecord>,
    /// Packets dropped by a forced termination.
    pub dropped: Vec<PacketRec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutVerdict {
    Ok,
    Terminate,
}

/// Watchdog rule: a task holding the core past the yield timeout gets its
/// chain terminated.
pub fn timeout_check(elapsed: TimeNs, yield_timeout: TimeNs) -> TimeoutVerdict {
    if elapsed > yield_timeout {
        TimeoutVerdict::Terminate
    } else {
        TimeoutVerdict::Ok
    }
}

/// Runs one batch round to completion and accounts every cycle.
///
/// The first NF pulls up to `B_v` DMA batches of up to `b_m` packets from
/// the queue as it stands now; if the chain has downstream NFs it copies
/// each packet into the chain buffer (copy charged before first service),
/// then every NF processes the whole batch in chain order. Stateful NFs
/// read-then-update per packet; a read miss stalls the round for one
/// sampled fetch latency without burning cycles. Context switches: none for
/// a single-NF chain, otherwise one per NF-loop handoff including the final
/// yield back.
///
/// A chain containing a stuck NF never yields: the round is cut off at the
/// yield timeout, its packets are dropped, and the trace is marked
/// terminated with the full timeout counted as busy time.
///
/// Returns `None` when the queue is empty.
pub fn execute_batch_round<R: Rng>(
    inputs: &RoundInputs,
    vf: &mut NicVfQueue,
    buf: &mut ChainPacketBuffer,
    tables: &mut [FlowStateTable],
    ledger: &mut OwnershipLedger,
    rng: &mut R,
) -> Option<RoundOutcome> {
    let n = inputs.chain.len();
    assert!(n > 0);
    let costs = inputs.costs;
    ledger.begin_epoch();

    let first_nf = Accessor {
        instance: inputs.instance,
        chain_idx: inputs.chain_idx,
        nf_index: 0,
    };
    let mut batch = Vec::new();
    let mut dma_batches = 0;
    for _ in 0..inputs.batch_multiplier {
        let pulled = vf.dma_batch(inputs.max_batch, ledger, inputs.now, first_nf);
        if pulled.is_empty() {
            break;
        }
        dma_batches += 1;
        batch.extend(pulled);
    }
    if batch.is_empty() {
        return None;
    }

    let mut trace = BatchExecutionTrace {
        round_id: inputs.round_id,
        instance: inputs.instance,
        chain_idx: inputs.chain_idx,
        worker_id: inputs.worker_id,
        core: inputs.core,
        start_ns: inputs.now,
        end_ns: inputs.now,
        packets: batch.len() as u32,
        dma_batches,
        copies: 0,
        ctx_switches: 0,
        service_cycles: vec![0; n],
        copy_cycles: 0,
        ctx_cycles: 0,
        overhead_cycles: 0,
        busy_cycles: 0,
        stall_ns: 0,
        terminated: false,
    };

    if inputs.chain.iter().any(|nf| nf.stuck) {
        trace.terminated = true;
        trace.end_ns = inputs.now + costs.yield_timeout_ns;
        trace.busy_cycles = ns_to_cycles(costs.yield_timeout_ns, inputs.freq_hz);
        buf.clear();
        return Some(RoundOutcome {
            trace,
            departures: Vec::new(),
            fetches: Vec::new(),
            dropped: batch,
        });
    }

    let mut cycles: Cycles = 0;
    let mut stall: TimeNs = 0;
    let mut departures = Vec::new();
    let mut fetches = Vec::new();
    let at = |cycles: Cycles, stall: TimeNs| {
        inputs.now + cycles_to_ns(cycles, inputs.freq_hz) + stall
    };

    for (i, nf) in inputs.chain.iter().enumerate() {
        let accessor = Accessor {
            instance: inputs.instance,
            chain_idx: inputs.chain_idx,
            nf_index: i as u8,
        };
        let buffer = if n == 1 {
            BufferRef::Vf(inputs.instance)
        } else {
            BufferRef::Chain(inputs.instance)
        };
        for (j, p) in batch.iter().enumerate() {
            if i == 0 {
                if n >= 2 {
                    let c = copy_cost(p.size, costs);
                    cycles += c;
                    trace.copy_cycles += c;
                    trace.copies += 1;
                    buf.note_copied(p.id);
                }
                cycles += costs.warmup_cycles;
                trace.overhead_cycles += costs.warmup_cycles;
            }
            ledger.record_access(at(cycles, stall), accessor, p.id, buffer);
            if nf.stateful {
                let table = &mut tables[i];
                let val = match table.state_read(&p.flow) {
                    ReadOutcome::Hit(v) => v,
                    ReadOutcome::Miss => {
                        let wait = sample_fetch_latency(&costs.state_store, rng);
                        stall += wait;
                        trace.stall_ns += wait;
                        fetches.push(FetchRecord {
                            nf_index: i as u8,
                            flow: p.flow,
                            complete_at: at(cycles, stall),
                        });
                        table.install_fetched(p.flow, 0);
                        0
                    }
                };
                table.state_update(p.flow, val + 1);
            }
            let svc = nf.service_cost.eval(p.size);
            cycles += svc;
            trace.service_cycles[i] += svc;
            if i >= 1 {
                let a = costs.per_hop_overhead_cycles;
                let hop = (a * (j + 1) as f64).round() as Cycles - (a * j as f64).round() as Cycles;
                cycles += hop;
                trace.overhead_cycles += hop;
            }
            if i == n - 1 {
                departures.push((*p, at(cycles, stall)));
            }
        }
        if n >= 2 {
            cycles += costs.t_ctx_cycles;
            trace.ctx_cycles += costs.t_ctx_cycles;
            trace.ctx_switches += 1;
        }
    }

    buf.clear();
    trace.busy_cycles = cycles;
    trace.end_ns = at(cycles, stall);
    Some(RoundOutcome { trace, departures, fetches, dropped: Vec::new() })
}

/// Writes batch traces as CSV.
pub fn write_trace_csv<W: std::io::Write>(
    traces: &[BatchExecutionTrace],
    chain_ids: &[String],
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "round_id",
        "chain_id",
        "core_id",
        "start_ns",
        "end_ns",
        "packets",
        "copies",
        "ctx_switches",
        "busy_cycles",
    ])?;
    for t in traces {
        let chain = chain_ids.get(t.chain_idx as usize).map(String::as_str).unwrap_or("?");
        out.write_record([
            t.round_id.to_string(),
            chain.to_string(),
            format!("{}.{}", t.worker_id, t.core),
            t.start_ns.to_string(),
            t.end_ns.to_string(),
            t.packets.to_string(),
            t.copies.to_string(),
            t.ctx_switches.to_string(),
            t.busy_cycles.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
