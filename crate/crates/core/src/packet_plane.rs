//! NIC VF queues, chain packet buffers, copy costs, and the ownership
//! ledger that makes packet isolation checkable after the fact.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::types::{CostModel, Cycles, InstanceId, PacketRec, TimeNs};

/// Receive queue of one chain instance's NIC virtual function.
#[derive(Debug, Clone)]
pub struct NicVfQueue {
    pub owner: InstanceId,
    pub capacity: usize,
    queue: VecDeque<PacketRec>,
    pub offered: u64,
    pub accepted: u64,
    pub dropped: u64,
}

impl NicVfQueue {
    pub fn new(owner: InstanceId, capacity: usize) -> Self {
        NicVfQueue {
            owner,
            capacity,
            queue: VecDeque::new(),
            offered: 0,
            accepted: 0,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Appends the packet if a slot is free; otherwise drops it.
    pub fn enqueue(&mut self, p: PacketRec) -> bool {
        self.offered += 1;
        if self.queue.len() < self.capacity {
            self.queue.push_back(p);
            self.accepted += 1;
            true
        } else {
            self.dropped += 1;
            false
        }
    }

    /// Removes up to `b_m` packets for the first NF, recording its access
    /// to each NIC-buffer slot in the ledger.
    pub fn dma_batch(
        &mut self,
        b_m: u32,
        ledger: &mut OwnershipLedger,
        now: TimeNs,
        accessor: Accessor,
    ) -> Vec<PacketRec> {
        let take = (b_m as usize).min(self.queue.len());
        let mut batch = Vec::with_capacity(take);
        for _ in 0..take {
            let p = self.queue.pop_front().unwrap();
            ledger.record_access(now, accessor, p.id, BufferRef::Vf(self.owner));
            batch.push(p);
        }
        batch
    }
}

/// Shared-memory buffer a chain's first NF copies packets into.
#[derive(Debug, Clone)]
pub struct ChainPacketBuffer {
    pub owner: InstanceId,
    resident: Vec<u64>,
}

impl ChainPacketBuffer {
    pub fn new(owner: InstanceId) -> Self {
        ChainPacketBuffer { owner, resident: Vec::new() }
    }

    pub fn resident(&self) -> &[u64] {
        &self.resident
    }

    /// Marks a packet as copied in by the owning chain's first NF.
    pub fn note_copied(&mut self, packet_id: u64) {
        self.resident.push(packet_id);
    }

    pub fn clear(&mut self) {
        self.resident.clear();
    }
}

/// Copies a batch into the chain buffer and returns the cycles charged.
/// Only called for chains of two or more NFs; single-NF chains work out of
/// the NIC buffer directly.
pub fn copy_into_chain_buffer(
    batch: &[PacketRec],
    buf: &mut ChainPacketBuffer,
    costs: &CostModel,
) -> Cycles {
    let mut charged = 0;
    for p in batch {
        buf.resident.push(p.id);
        charged += copy_cost(p.size, costs);
    }
    charged
}

/// Cycles to copy a packet of `size` bytes: flat below 100 bytes, linear
/// between the two measured endpoints above.
pub fn copy_cost(size: u32, costs: &CostModel) -> Cycles {
    assert!((64..=1500).contains(&size), "packet size {size} out of range");
    if size <= 100 {
        return costs.copy_base_cycles;
    }
    let span = costs.copy_max_cycles - costs.copy_base_cycles;
    let scaled = (size as u64 - 100) * span;
    costs.copy_base_cycles + (scaled + 700) / 1400
}

/// How packet ownership moves between NFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Shared mapping; the handoff costs one context switch.
    ContextSwitch,
    /// Unmap from the upstream process and map into the downstream one.
    Remap,
}

pub fn ownership_transfer_cost(mode: TransferMode, costs: &CostModel) -> Cycles {
    match mode {
        TransferMode::ContextSwitch => costs.t_ctx_cycles,
        TransferMode::Remap => costs.unmap_cycles + costs.map_cycles,
    }
}

/// Diagnostics: how much more a remap handoff costs than a context switch.
pub fn transfer_cost_ratio(costs: &CostModel) -> f64 {
    ownership_transfer_cost(TransferMode::Remap, costs) as f64
        / ownership_transfer_cost(TransferMode::ContextSwitch, costs) as f64
}

/// Who is touching a packet buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accessor {
    pub instance: InstanceId,
    /// Index of the owning logical chain, for export labeling.
    pub chain_idx: u32,
    pub nf_index: u8,
}

/// Which buffer is being touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferRef {
    Vf(InstanceId),
    Chain(InstanceId),
}

impl BufferRef {
    pub fn owner(&self) -> InstanceId {
        match *self {
            BufferRef::Vf(i) | BufferRef::Chain(i) => i,
        }
    }
}

impl fmt::Display for BufferRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BufferRef::Vf(i) => write!(f, "vf-{i}"),
            BufferRef::Chain(i) => write!(f, "buf-{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Access across chain-instance boundaries.
    Spatial,
    /// Downstream NF touched a packet its upstream had not finished.
    Temporal,
    /// A non-first NF reached into the NIC VF buffer.
    NicAccess,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::Spatial => write!(f, "spatial"),
            ViolationKind::Temporal => write!(f, "temporal"),
            ViolationKind::NicAccess => write!(f, "nic-access"),
        }
    }
}

/// One recorded buffer access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub time_ns: TimeNs,
    pub accessor: Accessor,
    pub packet_id: u64,
    pub buffer: BufferRef,
    pub violation: Option<ViolationKind>,
}

/// Append-only record of every packet-buffer access plus the violations
/// found among them. Detection state is per batch epoch; the entry log can
/// be turned off for long runs where only counts and violations matter.
#[derive(Debug, Clone)]
pub struct OwnershipLedger {
    entries: Vec<LedgerEntry>,
    violations: Vec<LedgerEntry>,
    pub retain_entries: bool,
    pub accesses: u64,
    epoch_progress: HashMap<u64, u8>,
    last_time: TimeNs,
}

impl OwnershipLedger {
    pub fn new(retain_entries: bool) -> Self {
        OwnershipLedger {
            entries: Vec::new(),
            violations: Vec::new(),
            retain_entries,
            accesses: 0,
            epoch_progress: HashMap::new(),
            last_time: 0,
        }
    }

    /// Starts a new batch epoch: temporal ordering is tracked per round.
    pub fn begin_epoch(&mut self) {
        self.epoch_progress.clear();
    }

    /// Records one access and classifies it. Violations are data, never
    /// errors; the scheduler is what keeps honest runs clean.
    pub fn record_access(
        &mut self,
        time_ns: TimeNs,
        accessor: Accessor,
        packet_id: u64,
        buffer: BufferRef,
    ) -> Option<ViolationKind> {
        debug_assert!(time_ns >= self.last_time, "ledger must be appended in time order");
        self.last_time = time_ns;
        self.accesses += 1;

        let violation = if accessor.instance != buffer.owner() {
            Some(ViolationKind::Spatial)
        } else if accessor.nf_index > 0 && matches!(buffer, BufferRef::Vf(_)) {
            Some(ViolationKind::NicAccess)
        } else if accessor.nf_index > 0
            && self.epoch_progress.get(&packet_id).copied().map_or(true, |done| done + 1 < accessor.nf_index)
        {
            Some(ViolationKind::Temporal)
        } else {
            None
        };

        if violation.is_none() {
            let done = self.epoch_progress.entry(packet_id).or_insert(accessor.nf_index);
            if accessor.nf_index > *done {
                *done = accessor.nf_index;
            }
        }

        let entry = LedgerEntry { time_ns, accessor, packet_id, buffer, violation };
        if violation.is_some() {
            self.violations.push(entry);
        }
        if self.retain_entries {
            self.entries.push(entry);
        }
        violation
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn violations(&self) -> &[LedgerEntry] {
        &self.violations
    }

    pub fn violation_count(&self) -> u64 {
        self.violations.len() as u64
    }
}

/// Writes the retained ledger entries as CSV.
pub fn write_ledger_csv<W: std::io::Write>(
    ledger: &OwnershipLedger,
    chain_ids: &[String],
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_ns", "chain_id", "nf_index", "packet_id", "buffer_id", "violation_flag"])?;
    for e in ledger.entries() {
        let chain = chain_ids
            .get(e.accessor.chain_idx as usize)
            .map(String::as_str)
            .unwrap_or("?");
        out.write_record([
            e.time_ns.to_string(),
            chain.to_string(),
            e.accessor.nf_index.to_string(),
            e.packet_id.to_string(),
            e.buffer.to_string(),
            e.violation.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FlowKey;
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn pkt(id: u64, size: u32) -> PacketRec {
        PacketRec {
            id,
            flow: FlowKey {
                src_ip: Ipv4Addr::new(10, 0, 0, 1),
                dst_ip: Ipv4Addr::new(10, 1, 0, 1),
                src_port: 4000,
                dst_port: 80,
                proto: 6,
            },
            size,
            arrival_ns: 0,
        }
    }

    fn acc(instance: InstanceId, nf: u8) -> Accessor {
        Accessor { instance, chain_idx: 0, nf_index: nf }
    }

    #[test]
    fn enqueue_respects_capacity() {
        let mut q = NicVfQueue::new(0, 128);
        for i in 0..200 {
            q.enqueue(pkt(i, 100));
        }
        assert_eq!(q.len(), 128);
        assert_eq!(q.dropped, 72);
        assert_eq!(q.accepted, 128);
        assert_eq!(q.offered, 200);
    }

    #[test]
    fn dma_batch_takes_min_of_queue_and_cap() {
        let mut ledger = OwnershipLedger::new(true);
        let mut q = NicVfQueue::new(3, 128);
        for i in 0..40 {
            q.enqueue(pkt(i, 100));
        }
        let batch = q.dma_batch(32, &mut ledger, 10, acc(3, 0));
        assert_eq!(batch.len(), 32);
        assert_eq!(q.len(), 8);
        let rest = q.dma_batch(32, &mut ledger, 20, acc(3, 0));
        assert_eq!(rest.len(), 8);
        assert!(q.dma_batch(32, &mut ledger, 30, acc(3, 0)).is_empty());
        assert_eq!(ledger.accesses, 40);
        assert_eq!(ledger.violation_count(), 0);
    }

    #[test]
    fn copy_cost_anchors_and_interpolation() {
        let costs = CostModel::default();
        assert_eq!(copy_cost(100, &costs), 247);
        assert_eq!(copy_cost(1500, &costs), 467);
        assert_eq!(copy_cost(800, &costs), 357);
        assert_eq!(copy_cost(64, &costs), 247);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn copy_cost_rejects_oversized_packets() {
        copy_cost(1501, &CostModel::default());
    }

    #[test]
    fn copying_charges_per_packet_cost() {
        let costs = CostModel::default();
        let batch: Vec<_> = (0..32).map(|i| pkt(i, 1024)).collect();
        let mut buf = ChainPacketBuffer::new(7);
        let charged = copy_into_chain_buffer(&batch, &mut buf, &costs);
        assert_eq!(charged, 32 * copy_cost(1024, &costs));
        assert_eq!(buf.resident().len(), 32);
    }

    #[test]
    fn transfer_costs_and_ratio() {
        let costs = CostModel::default();
        assert_eq!(ownership_transfer_cost(TransferMode::ContextSwitch, &costs), 2143);
        assert_eq!(ownership_transfer_cost(TransferMode::Remap, &costs), 12578);
        let ratio = transfer_cost_ratio(&costs);
        assert!((ratio - 5.87).abs() <= 0.01, "ratio {ratio}");
    }

    #[test]
    fn in_order_traversal_is_clean() {
        let mut ledger = OwnershipLedger::new(true);
        ledger.begin_epoch();
        let ids = [1u64, 2, 3];
        for id in ids {
            ledger.record_access(0, acc(5, 0), id, BufferRef::Vf(5));
        }
        for nf in 1..3u8 {
            for id in ids {
                let v = ledger.record_access(nf as u64 * 10, acc(5, nf), id, BufferRef::Chain(5));
                assert_eq!(v, None);
            }
        }
        assert_eq!(ledger.violation_count(), 0);
        assert_eq!(ledger.entries().len(), 9);
    }

    #[test]
    fn downstream_access_before_upstream_is_temporal() {
        let mut ledger = OwnershipLedger::new(false);
        ledger.begin_epoch();
        ledger.record_access(0, acc(5, 0), 1, BufferRef::Vf(5));
        let v = ledger.record_access(1, acc(5, 2), 1, BufferRef::Chain(5));
        assert_eq!(v, Some(ViolationKind::Temporal));
    }

    #[test]
    fn cross_chain_access_is_spatial() {
        let mut ledger = OwnershipLedger::new(false);
        ledger.begin_epoch();
        let v = ledger.record_access(0, acc(5, 1), 9, BufferRef::Chain(6));
        assert_eq!(v, Some(ViolationKind::Spatial));
    }

    #[test]
    fn non_first_nf_touching_vf_is_flagged() {
        let mut ledger = OwnershipLedger::new(false);
        ledger.begin_epoch();
        ledger.record_access(0, acc(5, 0), 1, BufferRef::Vf(5));
        let v = ledger.record_access(1, acc(5, 1), 1, BufferRef::Vf(5));
        assert_eq!(v, Some(ViolationKind::NicAccess));
    }

    #[test]
    fn epochs_reset_temporal_progress() {
        let mut ledger = OwnershipLedger::new(false);
        ledger.begin_epoch();
        ledger.record_access(0, acc(5, 0), 1, BufferRef::Vf(5));
        assert_eq!(ledger.record_access(1, acc(5, 1), 1, BufferRef::Chain(5)), None);
        ledger.begin_epoch();
        let v = ledger.record_access(2, acc(5, 1), 1, BufferRef::Chain(5));
        assert_eq!(v, Some(ViolationKind::Temporal));
    }

    proptest! {
        #[test]
        fn copy_cost_is_monotone(a in 64u32..=1500, b in 64u32..=1500) {
            let costs = CostModel::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(copy_cost(lo, &costs) <= copy_cost(hi, &costs));
        }

        #[test]
        fn enqueue_conserves_packets(capacity in 1usize..64, offered in 0u64..300) {
            let mut q = NicVfQueue::new(0, capacity);
            for i in 0..offered {
                q.enqueue(pkt(i, 100));
            }
            prop_assert_eq!(q.accepted + q.dropped, q.offered);
            prop_assert_eq!(q.offered, offered);
            prop_assert!(q.len() <= capacity);
        }
    }
}
