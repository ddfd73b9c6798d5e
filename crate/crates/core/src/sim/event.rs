//! Discrete-event queue with a closed set of event kinds.
//!
//! Ordering is (time, insertion sequence); ties resolve in insertion order
//! so runs replay identically for a given seed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::types::{InstanceId, TimeNs};

pub type FlowId = u64;

/// Both edges of a batch round share one event kind; the phase tells the
/// dispatcher which edge fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundPhase {
    Start,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// A new flow enters the system.
    FlowArrival { flow: FlowId },
    /// One packet of an existing flow arrives at ingress.
    PacketArrival { flow: FlowId },
    /// A switch rule install finished; buffered packets release.
    RuleInstalled { flow: FlowId },
    /// A scheduled group begins or finishes a batch round.
    BatchRound { instance: InstanceId, phase: RoundPhase },
    /// Periodic stats collection across instances.
    MonitorTick,
    /// One pass of the scheduler/scaling loop.
    LoopStep,
    /// Periodic state-store write-back.
    SyncTick,
    /// A flow stops emitting packets.
    FlowEnd { flow: FlowId },
    /// A remote state fetch completed.
    RemoteFetchDone { instance: InstanceId },
    /// Deadline check for a round that may have exceeded its yield budget.
    TimeoutCheck { instance: InstanceId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: TimeNs,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    last_time: TimeNs,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: TimeNs, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event { time, seq, kind }));
    }

    /// Pops the next event; simulated time never moves backwards.
    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?.0;
        debug_assert!(ev.time >= self.last_time, "time went backwards");
        self.last_time = ev.time;
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<TimeNs> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.push(30, EventKind::MonitorTick);
        q.push(10, EventKind::LoopStep);
        q.push(20, EventKind::SyncTick);
        let times: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.time).collect();
        assert_eq!(times, vec![10, 20, 30]);
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.push(5, EventKind::FlowArrival { flow: 1 });
        q.push(5, EventKind::FlowArrival { flow: 2 });
        q.push(5, EventKind::FlowArrival { flow: 3 });
        let flows: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.kind {
                EventKind::FlowArrival { flow } => flow,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(flows, vec![1, 2, 3]);
    }

    #[test]
    fn interleaved_push_pop_keeps_order() {
        let mut q = EventQueue::new();
        q.push(10, EventKind::MonitorTick);
        q.push(40, EventKind::MonitorTick);
        assert_eq!(q.pop().unwrap().time, 10);
        q.push(20, EventKind::MonitorTick);
        assert_eq!(q.pop().unwrap().time, 20);
        assert_eq!(q.pop().unwrap().time, 40);
        assert!(q.is_empty());
    }
}
