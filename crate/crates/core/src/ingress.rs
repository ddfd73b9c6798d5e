//! Flow classification, new-flow assignment, rule installation with
//! buffering, and per-packet routing.
//!
//! Rule installation takes real time; packets of a still-pending flow are
//! buffered and released in arrival order the instant the rule lands, so
//! installation itself never loses packets.

use std::collections::HashMap;

use crate::types::{ChainIdx, ChainSpec, FlowKey, InstanceId, PacketRec, TimeNs, WorkerId};

/// Installed routing decision for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRule {
    pub flow: FlowKey,
    pub worker_id: WorkerId,
    pub instance: InstanceId,
    pub l2_tag: u16,
    pub installed_at: TimeNs,
}

#[derive(Debug, Clone)]
struct PendingEntry {
    rule: FlowRule,
    ready_at: TimeNs,
    packets: Vec<PacketRec>,
}

#[derive(Debug, Clone)]
enum FlowEntry {
    Installed(FlowRule),
    Pending(PendingEntry),
    /// Assignment failed for lack of capacity; the flow stays rejected.
    Rejected,
}

/// Where a routed packet ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteOutcome {
    /// Enqueue at this instance's VF queue.
    Deliver(InstanceId),
    /// Held until the flow's rule finishes installing.
    Buffered,
    /// The flow was rejected earlier; the packet is dropped.
    RejectedDrop,
    /// No entry for this flow; run classification/assignment.
    Unknown,
}

/// Flow-to-instance routing state at the ingress.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: HashMap<FlowKey, FlowEntry>,
    pub buffered_packets: u64,
    pub released_packets: u64,
    pub installed_rules: u64,
    pub rejected_flows: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        FlowTable::default()
    }

    pub fn rule(&self, flow: &FlowKey) -> Option<&FlowRule> {
        match self.entries.get(flow) {
            Some(FlowEntry::Installed(r)) => Some(r),
            _ => None,
        }
    }

    pub fn assigned_instance(&self, flow: &FlowKey) -> Option<InstanceId> {
        match self.entries.get(flow) {
            Some(FlowEntry::Installed(r)) => Some(r.instance),
            Some(FlowEntry::Pending(p)) => Some(p.rule.instance),
            _ => None,
        }
    }

    /// Routes one packet against the current table. Unknown flows are the
    /// caller's cue to classify and assign.
    pub fn route_packet(&mut self, p: &PacketRec) -> RouteOutcome {
        match self.entries.get_mut(&p.flow) {
            Some(FlowEntry::Installed(r)) => RouteOutcome::Deliver(r.instance),
            Some(FlowEntry::Pending(pe)) => {
                pe.packets.push(*p);
                self.buffered_packets += 1;
                RouteOutcome::Buffered
            }
            Some(FlowEntry::Rejected) => RouteOutcome::RejectedDrop,
            None => RouteOutcome::Unknown,
        }
    }

    /// Starts installing a rule; the first packet is buffered with it.
    pub fn begin_install(&mut self, rule: FlowRule, ready_at: TimeNs, first_packet: PacketRec) {
        debug_assert!(!self.entries.contains_key(&rule.flow), "flow already has an entry");
        self.buffered_packets += 1;
        self.entries.insert(
            rule.flow,
            FlowEntry::Pending(PendingEntry { rule, ready_at, packets: vec![first_packet] }),
        );
    }

    /// Records a capacity rejection; later packets of the flow drop.
    pub fn mark_rejected(&mut self, flow: FlowKey) {
        self.entries.insert(flow, FlowEntry::Rejected);
        self.rejected_flows += 1;
    }

    /// Activates a pending rule and hands back the buffered packets in
    /// arrival order for immediate delivery.
    pub fn install_rule_complete(&mut self, flow: FlowKey, now: TimeNs) -> (FlowRule, Vec<PacketRec>) {
        let entry = self.entries.remove(&flow).expect("no pending entry for flow");
        let pe = match entry {
            FlowEntry::Pending(pe) => pe,
            other => {
                self.entries.insert(flow, other);
                panic!("flow is not pending");
            }
        };
        debug_assert!(now >= pe.ready_at);
        let mut rule = pe.rule;
        rule.installed_at = now;
        self.entries.insert(flow, FlowEntry::Installed(rule));
        self.installed_rules += 1;
        self.released_packets += pe.packets.len() as u64;
        (rule, pe.packets)
    }

    /// Installed rules, sorted by flow key for stable export.
    pub fn installed_rules_sorted(&self) -> Vec<FlowRule> {
        let mut rules: Vec<FlowRule> = self
            .entries
            .values()
            .filter_map(|e| match e {
                FlowEntry::Installed(r) => Some(*r),
                _ => None,
            })
            .collect();
        rules.sort_by_key(|r| r.flow);
        rules
    }
}

/// First chain (in spec order) whose filter matches; none means the flow
/// bypasses the NFV cluster.
pub fn classify(chains: &[ChainSpec], flow: &FlowKey) -> Option<ChainIdx> {
    chains.iter().position(|c| c.traffic_filter.matches(flow))
}

/// An active instance as the assignment step sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveCandidate {
    pub instance: InstanceId,
    pub load: f64,
}

/// An idle (registered, inactive) instance in the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleCandidate {
    pub instance: InstanceId,
    pub worker_idx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentDecision {
    /// Route to an already-active instance.
    Existing(InstanceId),
    /// Wake this idle instance and route to it.
    Activate(InstanceId),
    /// No capacity anywhere; reject the flow.
    Reject,
}

/// Picks the instance for a new flow: the loaded-but-not-overloaded active
/// instance with the highest load, else an idle instance from the
/// lowest-load worker, else rejection. Ties break toward the lowest
/// instance id (and lowest worker index).
pub fn assign_new_flow(
    active: &[ActiveCandidate],
    idle: &[IdleCandidate],
    worker_loads: &[f64],
    overload_threshold: f64,
) -> AssignmentDecision {
    let mut best: Option<ActiveCandidate> = None;
    for c in active {
        if c.load > overload_threshold {
            continue;
        }
        best = match best {
            None => Some(*c),
            Some(b) if c.load > b.load || (c.load == b.load && c.instance < b.instance) => Some(*c),
            keep => keep,
        };
    }
    if let Some(b) = best {
        return AssignmentDecision::Existing(b.instance);
    }

    let mut pick: Option<IdleCandidate> = None;
    for c in idle {
        let load = worker_loads[c.worker_idx];
        pick = match pick {
            None => Some(*c),
            Some(p) => {
                let p_load = worker_loads[p.worker_idx];
                if load < p_load
                    || (load == p_load && c.worker_idx < p.worker_idx)
                    || (load == p_load && c.worker_idx == p.worker_idx && c.instance < p.instance)
                {
                    Some(*c)
                } else {
                    Some(p)
                }
            }
        };
    }
    match pick {
        Some(p) => AssignmentDecision::Activate(p.instance),
        None => AssignmentDecision::Reject,
    }
}

/// Writes installed flow rules as CSV.
pub fn write_flow_table_csv<W: std::io::Write>(table: &FlowTable, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "src_ip",
        "src_port",
        "dst_ip",
        "dst_port",
        "proto",
        "worker",
        "instance",
        "l2_tag",
        "installed_at_ns",
    ])?;
    for r in table.installed_rules_sorted() {
        out.write_record([
            r.flow.src_ip.to_string(),
            r.flow.src_port.to_string(),
            r.flow.dst_ip.to_string(),
            r.flow.dst_port.to_string(),
            r.flow.proto.to_string(),
            r.worker_id.to_string(),
            r.instance.to_string(),
            r.l2_tag.to_string(),
            r.installed_at.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NfProfile, ServiceCost, TrafficFilter};
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn chain_with_dst(id: &str, prefix: &str) -> ChainSpec {
        ChainSpec {
            chain_id: id.into(),
            nfs: vec![NfProfile {
                name: "nf".into(),
                service_cost: ServiceCost::Constant { constant: 500 },
                stateful: false,
                stuck: false,
            }],
            traffic_filter: TrafficFilter {
                dst_prefix: Some(prefix.parse().unwrap()),
                ..TrafficFilter::default()
            },
            slo_p99_ns: 100_000,
            batch_multiplier: None,
        }
    }

    fn key(dst: [u8; 4], sport: u16) -> FlowKey {
        FlowKey {
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::from(dst),
            src_port: sport,
            dst_port: 80,
            proto: 6,
        }
    }

    fn pkt(flow: FlowKey, id: u64, arrival: TimeNs) -> PacketRec {
        PacketRec { id, flow, size: 100, arrival_ns: arrival }
    }

    #[test]
    fn classify_picks_first_match() {
        let chains = vec![
            chain_with_dst("a", "10.1.0.0/16"),
            chain_with_dst("b", "10.2.0.0/16"),
            chain_with_dst("c", "10.0.0.0/8"),
        ];
        assert_eq!(classify(&chains, &key([10, 2, 0, 5], 1)), Some(1));
        assert_eq!(classify(&chains, &key([10, 1, 9, 9], 1)), Some(0), "overlap goes to first");
        assert_eq!(classify(&chains, &key([10, 9, 0, 1], 1)), Some(2));
        assert_eq!(classify(&chains, &key([192, 168, 0, 1], 1)), None);
    }

    #[test]
    fn assignment_prefers_highest_non_overloaded_load() {
        let active = vec![
            ActiveCandidate { instance: 1, load: 0.5 },
            ActiveCandidate { instance: 2, load: 0.7 },
            ActiveCandidate { instance: 3, load: 0.9 },
        ];
        let d = assign_new_flow(&active, &[], &[0.0], 0.8);
        assert_eq!(d, AssignmentDecision::Existing(2));
    }

    #[test]
    fn assignment_falls_back_to_idle_on_lowest_load_worker() {
        let active = vec![ActiveCandidate { instance: 1, load: 0.9 }];
        let idle = vec![
            IdleCandidate { instance: 4, worker_idx: 1 },
            IdleCandidate { instance: 5, worker_idx: 0 },
        ];
        let d = assign_new_flow(&active, &idle, &[0.2, 0.6], 0.8);
        assert_eq!(d, AssignmentDecision::Activate(5));
    }

    #[test]
    fn assignment_rejects_when_nothing_fits() {
        let active = vec![ActiveCandidate { instance: 1, load: 0.95 }];
        assert_eq!(assign_new_flow(&active, &[], &[0.5], 0.8), AssignmentDecision::Reject);
        assert_eq!(assign_new_flow(&[], &[], &[], 0.8), AssignmentDecision::Reject);
    }

    #[test]
    fn assignment_ties_break_to_lowest_instance_id() {
        let active = vec![
            ActiveCandidate { instance: 9, load: 0.6 },
            ActiveCandidate { instance: 2, load: 0.6 },
        ];
        assert_eq!(assign_new_flow(&active, &[], &[0.0], 0.8), AssignmentDecision::Existing(2));
    }

    #[test]
    fn pending_packets_release_in_arrival_order() {
        let mut table = FlowTable::new();
        let f = key([10, 1, 0, 1], 4000);
        let rule = FlowRule { flow: f, worker_id: 0, instance: 3, l2_tag: 3, installed_at: 0 };
        table.begin_install(rule, 5_000_000, pkt(f, 0, 0));
        assert_eq!(table.route_packet(&pkt(f, 1, 1_000_000)), RouteOutcome::Buffered);
        assert_eq!(table.route_packet(&pkt(f, 2, 2_000_000)), RouteOutcome::Buffered);
        let (installed, released) = table.install_rule_complete(f, 5_000_000);
        assert_eq!(installed.installed_at, 5_000_000);
        let ids: Vec<u64> = released.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(table.route_packet(&pkt(f, 3, 5_000_001)), RouteOutcome::Deliver(3));
        assert_eq!(table.buffered_packets, table.released_packets);
    }

    #[test]
    fn rejected_flows_drop_their_packets() {
        let mut table = FlowTable::new();
        let f = key([10, 1, 0, 1], 4000);
        table.mark_rejected(f);
        assert_eq!(table.route_packet(&pkt(f, 0, 0)), RouteOutcome::RejectedDrop);
        assert_eq!(table.rejected_flows, 1);
    }

    #[test]
    fn unknown_flow_reports_unknown() {
        let mut table = FlowTable::new();
        assert_eq!(table.route_packet(&pkt(key([10, 1, 0, 1], 4000), 0, 0)), RouteOutcome::Unknown);
    }

    #[test]
    fn every_packet_lands_in_exactly_one_bucket() {
        let mut table = FlowTable::new();
        let mut delivered = 0u64;
        let mut buffered = 0u64;
        let mut dropped = 0u64;
        let mut unknown = 0u64;
        let flows: Vec<FlowKey> = (0..100).map(|i| key([10, 1, (i >> 8) as u8, i as u8], 4000 + i)).collect();
        for (i, f) in flows.iter().enumerate() {
            match i % 3 {
                0 => {
                    let rule = FlowRule { flow: *f, worker_id: 0, instance: 1, l2_tag: 1, installed_at: 0 };
                    table.begin_install(rule, 10, pkt(*f, 0, 0));
                    buffered += 1;
                    table.install_rule_complete(*f, 10);
                }
                1 => {
                    let rule = FlowRule { flow: *f, worker_id: 0, instance: 2, l2_tag: 2, installed_at: 0 };
                    table.begin_install(rule, 10, pkt(*f, 0, 0));
                    buffered += 1;
                }
                _ => table.mark_rejected(*f),
            }
        }
        for n in 0..10_000u64 {
            let f = flows[(n % 100) as usize];
            match table.route_packet(&pkt(f, n, n)) {
                RouteOutcome::Deliver(_) => delivered += 1,
                RouteOutcome::Buffered => buffered += 1,
                RouteOutcome::RejectedDrop => dropped += 1,
                RouteOutcome::Unknown => unknown += 1,
            }
        }
        assert_eq!(delivered + buffered + dropped + unknown, 10_000 + 67);
        assert_eq!(unknown, 0);
        assert!(delivered > 0 && buffered > 0 && dropped > 0);
    }

    proptest! {
        #[test]
        fn chosen_active_instance_is_argmax_under_threshold(
            loads in proptest::collection::vec(0.0f64..1.5, 1..12),
            threshold in 0.1f64..1.0,
        ) {
            let active: Vec<ActiveCandidate> = loads
                .iter()
                .enumerate()
                .map(|(i, l)| ActiveCandidate { instance: i as InstanceId, load: *l })
                .collect();
            let decision = assign_new_flow(&active, &[], &[0.0], threshold);
            let eligible: Vec<&ActiveCandidate> =
                active.iter().filter(|c| c.load <= threshold).collect();
            match decision {
                AssignmentDecision::Existing(id) => {
                    let chosen = active.iter().find(|c| c.instance == id).unwrap();
                    prop_assert!(chosen.load <= threshold);
                    for c in &eligible {
                        prop_assert!(
                            chosen.load > c.load
                                || (chosen.load == c.load && chosen.instance <= c.instance)
                        );
                    }
                }
                AssignmentDecision::Reject => prop_assert!(eligible.is_empty()),
                AssignmentDecision::Activate(_) => prop_assert!(false, "no idle pool offered"),
            }
        }
    }
}
