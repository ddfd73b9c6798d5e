//! The cluster engine: one discrete-event loop driving ingress, per-core
//! batch rounds, monitoring, and the scaling loop against a scenario.
//!
//! Batch rounds are atomic: the full round is computed when it starts and
//! a completion event marks the core busy until the round's end time.
//! Packets arriving meanwhile wait in the VF queue and are picked up by
//! the completion handler, which chains the next round back to back.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{effective_cost_summary, min_batch, BatchParams};
use crate::controller::{chain_load, pick_load_threshold, ChainStats, CurveError, MonitorGate};
use crate::ingress::{
    assign_new_flow, classify, ActiveCandidate, AssignmentDecision, FlowRule, FlowTable,
    IdleCandidate, RouteOutcome,
};
use crate::nf_state::FlowStateTable;
use crate::packet_plane::{ChainPacketBuffer, NicVfQueue, OwnershipLedger};
use crate::sched::{
    execute_batch_round, BatchExecutionTrace, RoundInputs, SGroup, SGroupState, WorkerScheduler,
};
use crate::sim::event::{EventKind, EventQueue, FlowId, RoundPhase};
use crate::sim::metrics::{ConservationError, DropKind, MetricsCollector, MetricsReport};
use crate::sim::profile::profile_chain;
use crate::sim::traffic::{sub_seed, FlowRt, TrafficError, TrafficGen, TrafficModel};
use crate::types::{
    validate_cluster_spec, ClusterSpec, Cycles, InstanceId, PacketRec, ThresholdSource, TimeNs,
    ValidationError,
};

/// Cap on how long the engine keeps draining after traffic ends.
pub const DRAIN_CAP_NS: TimeNs = 1_000_000_000;

/// What the run keeps besides the metrics report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOptions {
    pub retain_traces: bool,
    /// Keep individual ledger access entries (counters are always kept).
    pub retain_ledger_entries: bool,
    /// Keep one record per processed packet, in processing order.
    pub retain_departures: bool,
    /// Packets arriving before this instant are excluded from latency
    /// percentiles.
    pub measure_from_ns: TimeNs,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            retain_traces: false,
            retain_ledger_entries: false,
            retain_departures: false,
            measure_from_ns: 0,
        }
    }
}

/// A full simulation input: the cluster and the offered traffic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub cluster: ClusterSpec,
    pub traffic: TrafficModel,
    #[serde(default)]
    pub output: OutputOptions,
}

/// Planning decisions made per chain before the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPlan {
    pub chain_id: String,
    pub threshold_pct: f64,
    pub max_rate_pps: f64,
    pub batch_multiplier: u32,
    pub slo_feasible: bool,
}

/// Idle-pool size observed right after a scaling decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSample {
    pub time_ns: TimeNs,
    pub chain_idx: usize,
    pub idle_len: usize,
}

/// One processed packet, recorded in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepartureRec {
    pub packet_id: u64,
    pub chain_idx: usize,
    pub flow: crate::types::FlowKey,
    pub arrival_ns: TimeNs,
    pub departure_ns: TimeNs,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub traces: Vec<BatchExecutionTrace>,
    /// One ownership ledger per instance, in instance-id order.
    pub ledgers: Vec<OwnershipLedger>,
    pub flow_table: FlowTable,
    pub pool_log: Vec<PoolSample>,
    pub departures: Vec<DepartureRec>,
    pub plans: Vec<ChainPlan>,
}

fn join_errs<E: std::fmt::Display>(errs: &[E]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster spec: {}", join_errs(.0))]
    Spec(Vec<ValidationError>),
    #[error("invalid traffic model: {}", join_errs(.0))]
    Traffic(Vec<TrafficError>),
    #[error(transparent)]
    Conservation(#[from] ConservationError),
    #[error("profiling failed: {0}")]
    Profile(#[from] CurveError),
}

/// Sizes batch multipliers and load thresholds for every chain.
///
/// Fixed thresholds pair with an analytic single-core max rate (the batch
/// rate estimate over effective per-NF costs at the reference packet
/// size); profiled thresholds measure the curve and take both the
/// threshold and the max rate from it. Planning uses the first worker as
/// the reference machine.
pub fn plan_chains(cluster: &ClusterSpec, seed: u64) -> Result<Vec<ChainPlan>, SimError> {
    let reference = &cluster.workers[0];
    let params = BatchParams {
        freq_hz: reference.freq_hz,
        t_ctx_cycles: cluster.costs.t_ctx_cycles,
        avg_batch: reference.max_batch,
        target_ratio: cluster.costs.batch_ratio,
    };
    let mut plans = Vec::new();
    for (idx, chain) in cluster.chains.iter().enumerate() {
        let summary =
            effective_cost_summary(&chain.nfs, &cluster.costs, cluster.costs.reference_packet_size);
        let multiplier = chain.batch_multiplier.unwrap_or_else(|| min_batch(&summary, &params));
        let (threshold_pct, max_rate_pps, slo_feasible) = match &cluster.scaling.threshold {
            ThresholdSource::Fixed { pct } => {
                let max_rate = crate::batch::estimated_rate(&summary, &params, multiplier);
                (*pct, max_rate, true)
            }
            ThresholdSource::Profile { thresholds, window_ns } => {
                let curve = profile_chain(
                    cluster,
                    idx,
                    thresholds,
                    *window_ns,
                    sub_seed(seed, 0x70726f66 ^ idx as u64),
                )?;
                let pick = pick_load_threshold(&curve, chain.slo_p99_ns);
                (pick.threshold_pct, curve.max_rate_pps(), pick.feasible)
            }
        };
        plans.push(ChainPlan {
            chain_id: chain.chain_id.clone(),
            threshold_pct,
            max_rate_pps: max_rate_pps.max(1.0),
            batch_multiplier: multiplier,
            slo_feasible,
        });
    }
    Ok(plans)
}

struct InstanceRt {
    id: InstanceId,
    chain_idx: usize,
    worker_idx: usize,
    l2_tag: u16,
    sgroup: SGroup,
    vf: NicVfQueue,
    buf: ChainPacketBuffer,
    tables: Vec<FlowStateTable>,
    /// Access log for this instance's buffers; appends are in time order
    /// because an instance's rounds never overlap.
    ledger: OwnershipLedger,
    gate: MonitorGate,
    /// Last rate the monitor accepted; what the controller assigns by.
    reported_rate: f64,
    window_processed: u64,
    last_busy_cycles: Cycles,
    assigned_flows: u64,
    last_arrival_ns: TimeNs,
    round_in_progress: bool,
    next_round_id: u64,
    faulted: bool,
    decommissioned: bool,
}

struct ChainRt {
    active: Vec<InstanceId>,
    idle: Vec<InstanceId>,
}

struct WorkerRt {
    spec: crate::types::WorkerSpec,
    sched: WorkerScheduler,
}

struct Engine {
    cluster: ClusterSpec,
    output: OutputOptions,
    plans: Vec<ChainPlan>,
    workers: Vec<WorkerRt>,
    chains: Vec<ChainRt>,
    instances: Vec<InstanceRt>,
    flows: Vec<FlowRt>,
    /// Classification result per flow, fixed at first packet:
    /// unset / Some(chain) / bypass.
    flow_chain: Vec<Option<Option<usize>>>,
    table: FlowTable,
    traces: Vec<BatchExecutionTrace>,
    pool_log: Vec<PoolSample>,
    departures: Vec<DepartureRec>,
    metrics: MetricsCollector,
    q: EventQueue,
    rng: ChaCha8Rng,
    gen: TrafficGen,
    now: TimeNs,
    gen_done: bool,
    flow_arrival_pending: bool,
    pending_packet_events: u64,
    pending_installs: u64,
    scheduled_packets: u64,
    packet_budget: Option<u64>,
    deadline: Option<TimeNs>,
    sync_enabled: bool,
}

/// Runs one scenario to completion and returns everything it produced.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunArtifacts, SimError> {
    let cluster = validate_cluster_spec(scenario.cluster.clone()).map_err(SimError::Spec)?;
    let gen = TrafficGen::new(&scenario.traffic, &cluster.chains, seed).map_err(SimError::Traffic)?;
    let plans = plan_chains(&cluster, seed)?;
    let chain_ids = cluster.chains.iter().map(|c| c.chain_id.clone()).collect();
    let sync_enabled = cluster.chains.iter().any(|c| c.nfs.iter().any(|nf| nf.stateful));
    let mut engine = Engine {
        metrics: MetricsCollector::new(chain_ids, scenario.output.measure_from_ns),
        chains: cluster.chains.iter().map(|_| ChainRt { active: Vec::new(), idle: Vec::new() }).collect(),
        workers: cluster
            .workers
            .iter()
            .map(|w| WorkerRt { spec: w.clone(), sched: WorkerScheduler::new(w.worker_id, w.num_cores) })
            .collect(),
        instances: Vec::new(),
        flows: Vec::new(),
        flow_chain: Vec::new(),
        table: FlowTable::new(),
        traces: Vec::new(),
        pool_log: Vec::new(),
        departures: Vec::new(),
        q: EventQueue::new(),
        rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x656e_67696e65)),
        packet_budget: scenario.traffic.packet_budget,
        output: scenario.output.clone(),
        plans,
        cluster,
        gen,
        now: 0,
        gen_done: false,
        flow_arrival_pending: false,
        pending_packet_events: 0,
        pending_installs: 0,
        scheduled_packets: 0,
        deadline: None,
        sync_enabled,
    };
    engine.bootstrap();
    engine.run();
    engine.finish()
}

impl Engine {
    fn bootstrap(&mut self) {
        for c in 0..self.chains.len() {
            if !self.plans[c].slo_feasible {
                self.metrics.fault("slo_infeasible");
            }
            self.pool_maintain(c);
        }
        self.pull_next_flow();
        self.q.push(self.cluster.scaling.window_ns, EventKind::MonitorTick);
        self.q.push(self.cluster.scaling.loop_period_ns, EventKind::LoopStep);
        if self.sync_enabled {
            self.q.push(self.cluster.costs.state_store.sync_period_ns, EventKind::SyncTick);
        }
        self.update_drain_deadline();
    }

    fn run(&mut self) {
        while let Some(t) = self.q.peek_time() {
            if let Some(d) = self.deadline {
                if t > d {
                    break;
                }
            }
            let ev = self.q.pop().expect("peeked");
            self.now = ev.time;
            self.dispatch(ev.kind);
            self.update_drain_deadline();
        }
    }

    fn finish(mut self) -> Result<RunArtifacts, SimError> {
        let in_flight: u64 = self.instances.iter().map(|i| i.vf.len() as u64).sum::<u64>()
            + (self.table.buffered_packets - self.table.released_packets);
        for inst in &self.instances {
            self.metrics.monitor_accepted += inst.gate.accepted;
            self.metrics.monitor_suppressed += inst.gate.suppressed;
            self.metrics.isolation_violations += inst.ledger.violation_count();
        }
        let report = self.metrics.finalize(self.now, in_flight)?;
        Ok(RunArtifacts {
            report,
            traces: self.traces,
            ledgers: self.instances.into_iter().map(|i| i.ledger).collect(),
            flow_table: self.table,
            pool_log: self.pool_log,
            departures: self.departures,
            plans: self.plans,
        })
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::FlowArrival { flow } => self.on_flow_arrival(flow),
            EventKind::PacketArrival { flow } => self.on_packet_arrival(flow),
            EventKind::RuleInstalled { flow } => self.on_rule_installed(flow),
            EventKind::BatchRound { instance, phase: RoundPhase::Start } => self.on_round_start(instance),
            EventKind::BatchRound { instance, phase: RoundPhase::Complete } => {
                self.on_round_complete(instance)
            }
            EventKind::MonitorTick => self.on_monitor_tick(),
            EventKind::LoopStep => self.on_loop_step(),
            EventKind::SyncTick => self.on_sync_tick(),
            EventKind::FlowEnd { flow } => self.on_flow_end(flow),
            EventKind::RemoteFetchDone { .. } => self.metrics.remote_fetches += 1,
            EventKind::TimeoutCheck { instance } => self.on_timeout(instance),
        }
    }

    /// Anything left that can still create or move packets?
    fn work_pending(&self) -> bool {
        if !self.gen_done
            || self.flow_arrival_pending
            || self.pending_packet_events > 0
            || self.pending_installs > 0
        {
            return true;
        }
        self.instances
            .iter()
            .any(|i| i.round_in_progress || (!i.faulted && !i.vf.is_empty()))
    }

    /// Once no new packets can appear, drain for at most `DRAIN_CAP_NS`.
    fn update_drain_deadline(&mut self) {
        if self.deadline.is_none()
            && self.gen_done
            && !self.flow_arrival_pending
            && self.pending_packet_events == 0
            && self.pending_installs == 0
        {
            self.deadline = Some(self.now + DRAIN_CAP_NS);
        }
    }

    // ---- traffic ----

    fn pull_next_flow(&mut self) {
        match self.gen.next_flow() {
            Some(f) => {
                debug_assert_eq!(f.id as usize, self.flows.len());
                self.q.push(f.start_ns, EventKind::FlowArrival { flow: f.id });
                self.flows.push(f);
                self.flow_chain.push(None);
                self.flow_arrival_pending = true;
            }
            None => self.gen_done = true,
        }
    }

    fn try_schedule_packet(&mut self, flow: FlowId, at: TimeNs) {
        let within_budget = self.packet_budget.map_or(true, |b| self.scheduled_packets < b);
        if within_budget {
            self.scheduled_packets += 1;
            self.pending_packet_events += 1;
            self.q.push(at, EventKind::PacketArrival { flow });
        }
    }

    fn on_flow_arrival(&mut self, flow: FlowId) {
        self.flow_arrival_pending = false;
        if let Some(t) = self.flows[flow as usize].next_packet_at() {
            self.try_schedule_packet(flow, t);
        }
        let end = self.flows[flow as usize].end_ns;
        self.q.push(end, EventKind::FlowEnd { flow });
        self.pull_next_flow();
    }

    fn on_packet_arrival(&mut self, flow: FlowId) {
        self.pending_packet_events -= 1;
        let f = &mut self.flows[flow as usize];
        let key = f.key;
        let size = f.sample_size();
        let next = f.next_packet_at();
        let id = self.metrics.record_arrival();
        let p = PacketRec { id, flow: key, size, arrival_ns: self.now };
        if let Some(t) = next {
            self.try_schedule_packet(flow, t);
        }
        self.route_packet(flow, p);
    }

    fn on_flow_end(&mut self, flow: FlowId) {
        let key = self.flows[flow as usize].key;
        if let Some(i) = self.table.assigned_instance(&key) {
            let inst = &mut self.instances[i as usize];
            inst.assigned_flows = inst.assigned_flows.saturating_sub(1);
        }
    }

    // ---- ingress ----

    fn route_packet(&mut self, flow: FlowId, p: PacketRec) {
        let fid = flow as usize;
        let chain = match self.flow_chain[fid] {
            Some(c) => c,
            None => {
                let c = classify(&self.cluster.chains, &p.flow);
                self.flow_chain[fid] = Some(c);
                c
            }
        };
        let Some(chain_idx) = chain else {
            self.metrics.record_bypass();
            return;
        };
        self.metrics.record_chain_arrival(chain_idx);
        match self.table.route_packet(&p) {
            RouteOutcome::Deliver(i) => self.enqueue_packet(i, p),
            RouteOutcome::Buffered => {}
            RouteOutcome::RejectedDrop => self.metrics.record_drop(chain_idx, DropKind::Rejected),
            RouteOutcome::Unknown => self.handle_new_flow(chain_idx, flow, p),
        }
    }

    fn handle_new_flow(&mut self, chain_idx: usize, flow: FlowId, p: PacketRec) {
        let plan = &self.plans[chain_idx];
        let active: Vec<ActiveCandidate> = self.chains[chain_idx]
            .active
            .iter()
            .map(|&i| ActiveCandidate {
                instance: i,
                load: chain_load(self.instances[i as usize].reported_rate, plan.max_rate_pps),
            })
            .collect();
        let idle: Vec<IdleCandidate> = self.chains[chain_idx]
            .idle
            .iter()
            .map(|&i| IdleCandidate { instance: i, worker_idx: self.instances[i as usize].worker_idx })
            .collect();
        let worker_loads: Vec<f64> = self
            .workers
            .iter()
            .map(|w| w.sched.attached_count() as f64 / w.spec.num_cores as f64)
            .collect();
        match assign_new_flow(&active, &idle, &worker_loads, plan.threshold_pct / 100.0) {
            AssignmentDecision::Existing(i) => self.map_flow(i, flow, p),
            AssignmentDecision::Activate(i) => {
                self.activate_instance(chain_idx, i);
                self.map_flow(i, flow, p);
                self.pool_maintain(chain_idx);
            }
            AssignmentDecision::Reject => {
                self.table.mark_rejected(p.flow);
                self.metrics.record_drop(chain_idx, DropKind::Rejected);
                self.metrics.fault("flow_rejected");
            }
        }
    }

    fn map_flow(&mut self, instance: InstanceId, flow: FlowId, p: PacketRec) {
        let inst = &mut self.instances[instance as usize];
        let rule = FlowRule {
            flow: p.flow,
            worker_id: self.workers[inst.worker_idx].spec.worker_id,
            instance,
            l2_tag: inst.l2_tag,
            installed_at: 0,
        };
        inst.assigned_flows += 1;
        let ready = self.now + self.cluster.costs.install_latency_ns;
        self.table.begin_install(rule, ready, p);
        self.pending_installs += 1;
        self.q.push(ready, EventKind::RuleInstalled { flow });
    }

    fn on_rule_installed(&mut self, flow: FlowId) {
        self.pending_installs -= 1;
        let key = self.flows[flow as usize].key;
        let (rule, packets) = self.table.install_rule_complete(key, self.now);
        for p in packets {
            self.enqueue_packet(rule.instance, p);
        }
    }

    fn enqueue_packet(&mut self, instance: InstanceId, p: PacketRec) {
        let inst = &mut self.instances[instance as usize];
        inst.last_arrival_ns = self.now;
        if inst.vf.enqueue(p) {
            self.maybe_schedule_round(instance);
        } else {
            let chain_idx = inst.chain_idx;
            self.metrics.record_drop(chain_idx, DropKind::VfOverflow);
        }
    }

    // ---- scaling ----

    /// Spawns one idle instance of `chain_idx` on the worker with the
    /// lowest attached-core load that still has registration room.
    fn scale_out(&mut self, chain_idx: usize) -> bool {
        let mut best: Option<(f64, usize)> = None;
        for (w, worker) in self.workers.iter().enumerate() {
            if worker.sched.registered_count() >= worker.spec.num_cores as usize {
                continue;
            }
            let load = worker.sched.attached_count() as f64 / worker.spec.num_cores as f64;
            if best.map_or(true, |(b, _)| load < b) {
                best = Some((load, w));
            }
        }
        let Some((_, worker_idx)) = best else {
            self.metrics.fault("worker_capacity");
            return false;
        };
        let id = self.instances.len() as InstanceId;
        let nfs = &self.cluster.chains[chain_idx].nfs;
        let sgroup = SGroup::new(id, nfs.len(), self.plans[chain_idx].batch_multiplier);
        self.workers[worker_idx].sched.register_sgroup(&sgroup).expect("fresh instance id");
        let wspec = &self.workers[worker_idx].spec;
        self.instances.push(InstanceRt {
            id,
            chain_idx,
            worker_idx,
            l2_tag: id as u16,
            vf: NicVfQueue::new(id, wspec.vf_queue_capacity),
            buf: ChainPacketBuffer::new(id),
            tables: nfs.iter().map(|_| FlowStateTable::new()).collect(),
            ledger: OwnershipLedger::new(self.output.retain_ledger_entries),
            sgroup,
            gate: MonitorGate::default(),
            reported_rate: 0.0,
            window_processed: 0,
            last_busy_cycles: 0,
            assigned_flows: 0,
            last_arrival_ns: self.now,
            round_in_progress: false,
            next_round_id: 0,
            faulted: false,
            decommissioned: false,
        });
        self.chains[chain_idx].idle.push(id);
        true
    }

    /// Retires the most recently pooled idle instance. Draining instances
    /// wait for the next pass.
    fn scale_in(&mut self, chain_idx: usize) -> bool {
        let Some(&id) = self.chains[chain_idx].idle.last() else { return false };
        let inst = &mut self.instances[id as usize];
        if inst.sgroup.state != SGroupState::Detached {
            return false;
        }
        self.chains[chain_idx].idle.pop();
        self.workers[inst.worker_idx].sched.unregister_sgroup(&inst.sgroup).expect("idle is registered");
        inst.decommissioned = true;
        true
    }

    /// Brings the idle pool back inside its configured bounds.
    fn pool_maintain(&mut self, chain_idx: usize) {
        let out_thresh = self.cluster.scaling.scale_out_thresh as usize;
        let in_thresh = self.cluster.scaling.scale_in_thresh as usize;
        while self.chains[chain_idx].idle.len() < out_thresh {
            if !self.scale_out(chain_idx) {
                break;
            }
        }
        while self.chains[chain_idx].idle.len() > in_thresh {
            if !self.scale_in(chain_idx) {
                break;
            }
        }
        self.pool_log.push(PoolSample {
            time_ns: self.now,
            chain_idx,
            idle_len: self.chains[chain_idx].idle.len(),
        });
    }

    fn activate_instance(&mut self, chain_idx: usize, id: InstanceId) {
        let chain = &mut self.chains[chain_idx];
        chain.idle.retain(|&i| i != id);
        chain.active.push(id);
        self.instances[id as usize].sgroup.active = true;
        // the scheduler loop would attach within one iteration; do it now
        self.try_attach(id);
    }

    fn try_attach(&mut self, id: InstanceId) {
        let inst = &mut self.instances[id as usize];
        if inst.sgroup.state != SGroupState::Detached || inst.faulted || inst.decommissioned {
            return;
        }
        let sched = &mut self.workers[inst.worker_idx].sched;
        match sched.pick_idle_core() {
            Some(core) => {
                sched.attach_sgroup(&mut inst.sgroup, core).expect("core was idle");
                self.metrics.core_attached(self.now);
                self.maybe_schedule_round(id);
            }
            None => self.metrics.fault("no_idle_core"),
        }
    }

    // ---- periodic controller work ----

    fn on_monitor_tick(&mut self) {
        let window_s = self.cluster.scaling.window_ns as f64 / 1e9;
        let epsilon = self.cluster.scaling.epsilon;
        let alert = self.cluster.monitoring.queue_alert_len;
        for inst in &mut self.instances {
            if inst.decommissioned {
                continue;
            }
            let stats = ChainStats {
                instance: inst.id,
                packet_rate: inst.window_processed as f64 / window_s,
                queue_len: inst.vf.len(),
                per_batch_exec: inst.last_busy_cycles,
                last_report: self.now,
            };
            if inst.gate.on_stats_update(&stats, epsilon, alert) {
                inst.reported_rate = stats.packet_rate;
            }
            inst.window_processed = 0;
        }
        if self.work_pending() {
            self.q.push(self.now + self.cluster.scaling.window_ns, EventKind::MonitorTick);
        }
    }

    fn on_loop_step(&mut self) {
        let idle_window = self.cluster.scaling.idle_window_ns;
        // idle detection: flows gone, queue drained, nothing arriving
        for i in 0..self.instances.len() {
            let inst = &self.instances[i];
            if inst.decommissioned || inst.faulted || !inst.sgroup.active {
                continue;
            }
            if inst.assigned_flows == 0
                && inst.vf.is_empty()
                && !inst.round_in_progress
                && self.now.saturating_sub(inst.last_arrival_ns) >= idle_window
            {
                let id = inst.id;
                let chain_idx = inst.chain_idx;
                self.instances[i].sgroup.active = false;
                let chain = &mut self.chains[chain_idx];
                chain.active.retain(|&x| x != id);
                chain.idle.push(id);
            }
        }
        // release cores of anything no longer active
        for i in 0..self.instances.len() {
            let inst = &mut self.instances[i];
            if inst.decommissioned || inst.faulted || inst.sgroup.active {
                continue;
            }
            if matches!(inst.sgroup.state, SGroupState::Attached { .. }) {
                let mid_round = inst.round_in_progress;
                self.workers[inst.worker_idx]
                    .sched
                    .detach_sgroup(&mut inst.sgroup, mid_round)
                    .expect("was attached");
                if !mid_round {
                    self.metrics.core_detached(self.now);
                }
            }
        }
        for c in 0..self.chains.len() {
            self.pool_maintain(c);
        }
        // attach anything active but off-core
        for i in 0..self.instances.len() {
            let inst = &self.instances[i];
            if inst.sgroup.active && inst.sgroup.state == SGroupState::Detached {
                self.try_attach(inst.id);
            }
        }
        if self.work_pending() {
            self.q.push(self.now + self.cluster.scaling.loop_period_ns, EventKind::LoopStep);
        }
    }

    fn on_sync_tick(&mut self) {
        for inst in &mut self.instances {
            if inst.decommissioned {
                continue;
            }
            for table in &mut inst.tables {
                table.periodic_sync(self.now);
            }
        }
        self.metrics.sync_ticks += 1;
        if self.work_pending() {
            self.q.push(self.now + self.cluster.costs.state_store.sync_period_ns, EventKind::SyncTick);
        }
    }

    // ---- batch rounds ----

    fn maybe_schedule_round(&mut self, id: InstanceId) {
        let inst = &mut self.instances[id as usize];
        if inst.round_in_progress
            || inst.faulted
            || inst.vf.is_empty()
            || !matches!(inst.sgroup.state, SGroupState::Attached { .. })
        {
            return;
        }
        inst.round_in_progress = true;
        self.q.push(self.now, EventKind::BatchRound { instance: id, phase: RoundPhase::Start });
    }

    fn on_round_start(&mut self, instance: InstanceId) {
        let i = instance as usize;
        let core = match self.instances[i].sgroup.state {
            SGroupState::Attached { core } => core,
            _ => {
                self.instances[i].round_in_progress = false;
                return;
            }
        };
        if self.instances[i].faulted {
            self.instances[i].round_in_progress = false;
            return;
        }
        let inst = &mut self.instances[i];
        let wspec = &self.workers[inst.worker_idx].spec;
        let round_id = inst.next_round_id;
        inst.next_round_id += 1;
        let inputs = RoundInputs {
            now: self.now,
            round_id,
            worker_id: wspec.worker_id,
            core,
            freq_hz: wspec.freq_hz,
            costs: &self.cluster.costs,
            chain: &self.cluster.chains[inst.chain_idx].nfs,
            chain_idx: inst.chain_idx as u32,
            instance,
            batch_multiplier: inst.sgroup.batch_multiplier,
            max_batch: wspec.max_batch,
        };
        let outcome = execute_batch_round(
            &inputs,
            &mut inst.vf,
            &mut inst.buf,
            &mut inst.tables,
            &mut inst.ledger,
            &mut self.rng,
        );
        let Some(outcome) = outcome else {
            inst.round_in_progress = false;
            return;
        };
        let chain_idx = inst.chain_idx;
        inst.window_processed += outcome.departures.len() as u64;
        inst.last_busy_cycles = outcome.trace.busy_cycles;
        let slot = &mut self.workers[inst.worker_idx].sched.cores[core];
        slot.busy_cycles += outcome.trace.busy_cycles;
        slot.rounds += 1;
        for (p, dep) in &outcome.departures {
            self.metrics.record_departure(chain_idx, p.arrival_ns, *dep);
            if self.output.retain_departures {
                self.departures.push(DepartureRec {
                    packet_id: p.id,
                    chain_idx,
                    flow: p.flow,
                    arrival_ns: p.arrival_ns,
                    departure_ns: *dep,
                });
            }
        }
        self.metrics.record_round_costs(
            chain_idx,
            outcome.trace.copies as u64,
            outcome.trace.ctx_switches as u64,
        );
        for f in &outcome.fetches {
            self.q.push(f.complete_at, EventKind::RemoteFetchDone { instance });
        }
        for _ in &outcome.dropped {
            self.metrics.record_drop(chain_idx, DropKind::Terminated);
        }
        let end = outcome.trace.end_ns;
        let terminated = outcome.trace.terminated;
        if self.output.retain_traces {
            self.traces.push(outcome.trace);
        }
        if terminated {
            self.q.push(end, EventKind::TimeoutCheck { instance });
        } else {
            self.q.push(end, EventKind::BatchRound { instance, phase: RoundPhase::Complete });
        }
    }

    fn on_round_complete(&mut self, instance: InstanceId) {
        let inst = &mut self.instances[instance as usize];
        inst.round_in_progress = false;
        if matches!(inst.sgroup.state, SGroupState::Draining { .. }) {
            self.workers[inst.worker_idx]
                .sched
                .finalize_drain(&mut inst.sgroup)
                .expect("was draining");
            self.metrics.core_detached(self.now);
            return;
        }
        self.maybe_schedule_round(instance);
    }

    /// The yield watchdog fired: the instance's round overran its budget.
    /// The chain comes off its core and takes no further work.
    fn on_timeout(&mut self, instance: InstanceId) {
        let inst = &mut self.instances[instance as usize];
        inst.round_in_progress = false;
        inst.faulted = true;
        inst.sgroup.active = false;
        let sched = &mut self.workers[inst.worker_idx].sched;
        match inst.sgroup.state {
            SGroupState::Attached { .. } => {
                sched.detach_sgroup(&mut inst.sgroup, false).expect("was attached");
                self.metrics.core_detached(self.now);
            }
            SGroupState::Draining { .. } => {
                sched.finalize_drain(&mut inst.sgroup).expect("was draining");
                self.metrics.core_detached(self.now);
            }
            SGroupState::Detached => {}
        }
        let chain_idx = inst.chain_idx;
        self.chains[chain_idx].active.retain(|&x| x != instance);
        self.metrics.fault("yield_timeout");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::traffic::{DurationDist, RateDist, SizeDist};
    use crate::types::test_fixtures::{chain, worker};
    use crate::types::{ScalingConfig, ThresholdSource};

    fn small_scenario() -> Scenario {
        Scenario {
            cluster: ClusterSpec {
                workers: vec![worker(0), worker(1)],
                chains: vec![chain("fwd", &[300, 250]), chain("filter", &[500])],
                costs: Default::default(),
                scaling: ScalingConfig {
                    threshold: ThresholdSource::Fixed { pct: 80.0 },
                    ..Default::default()
                },
                monitoring: Default::default(),
            },
            traffic: TrafficModel {
                flow_rate_per_s: 200.0,
                duration_ns: 200_000_000,
                flow_duration: DurationDist::Constant { ns: 100_000_000 },
                flow_pps: RateDist::Constant { pps: 5_000.0 },
                packet_size: SizeDist::Constant { bytes: 256 },
                ..Default::default()
            },
            output: OutputOptions::default(),
        }
    }

    #[test]
    fn zero_traffic_run_is_all_zeros() {
        let mut s = small_scenario();
        s.traffic.flow_rate_per_s = 0.0;
        let art = run_scenario(&s, 1).unwrap();
        assert_eq!(art.report.injected, 0);
        assert_eq!(art.report.processed, 0);
        assert_eq!(art.report.dropped, 0);
        assert_eq!(art.report.max_cores, 0);
        assert_eq!(art.report.avg_cores, 0.0);
        assert_eq!(art.report.isolation_violations, 0);
    }

    #[test]
    fn smoke_run_processes_traffic_and_uses_cores() {
        let art = run_scenario(&small_scenario(), 7).unwrap();
        assert!(art.report.injected > 10_000, "injected {}", art.report.injected);
        assert!(art.report.processed > 0);
        assert!(art.report.max_cores >= 1);
        assert_eq!(art.report.isolation_violations, 0);
        assert!(art.report.per_chain["fwd"].p99_ns > 0);
        // pools were pre-deployed and stayed inside bounds at every sample
        let scaling = ScalingConfig::default();
        for s in &art.pool_log {
            assert!(s.idle_len <= scaling.scale_in_thresh as usize, "pool overfull: {s:?}");
        }
    }

    #[test]
    fn same_seed_gives_identical_reports() {
        let s = small_scenario();
        let a = run_scenario(&s, 42).unwrap();
        let b = run_scenario(&s, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn different_seeds_differ_somewhere() {
        let s = small_scenario();
        let a = run_scenario(&s, 1).unwrap();
        let b = run_scenario(&s, 2).unwrap();
        assert_ne!(a.report.injected, b.report.injected);
    }

    #[test]
    fn packet_budget_caps_injection() {
        let mut s = small_scenario();
        s.traffic.packet_budget = Some(5_000);
        let art = run_scenario(&s, 3).unwrap();
        assert_eq!(art.report.injected, 5_000);
    }

    #[test]
    fn bypass_traffic_is_counted_not_processed() {
        let mut s = small_scenario();
        s.traffic.bypass_weight = 1.0;
        s.traffic.chain_mix = vec![
            crate::sim::traffic::MixEntry { chain_id: "fwd".into(), weight: 1.0 },
        ];
        let art = run_scenario(&s, 5).unwrap();
        assert!(art.report.bypass > 0);
        assert_eq!(art.report.per_chain["filter"].injected, 0);
    }

    #[test]
    fn invalid_spec_is_rejected_up_front() {
        let mut s = small_scenario();
        s.cluster.workers.clear();
        assert!(matches!(run_scenario(&s, 1), Err(SimError::Spec(_))));
    }
}
