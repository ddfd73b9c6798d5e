//! Run metrics: per-chain latency distributions, drop accounting, core
//! usage, and the packet-conservation check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::TimeNs;

/// Nearest-rank percentile over an unsorted sample; 0 for empty input.
pub fn percentile_ns(samples: &mut [u64], p: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.sort_unstable();
    let rank = ((p / 100.0) * samples.len() as f64).ceil() as usize;
    samples[rank.clamp(1, samples.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropKind {
    /// NIC virtual-function queue overflow.
    VfOverflow,
    /// Flow admission rejected for lack of capacity.
    Rejected,
    /// Batch discarded when a round hit the yield timeout.
    Terminated,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropBreakdown {
    pub vf_overflow: u64,
    pub rejected: u64,
    pub terminated: u64,
}

impl DropBreakdown {
    pub fn total(&self) -> u64 {
        self.vf_overflow + self.rejected + self.terminated
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub injected: u64,
    pub processed: u64,
    pub dropped: u64,
    pub loss_rate: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub max_latency_ns: u64,
    pub copies: u64,
    pub ctx_switches: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration_ns: TimeNs,
    pub injected: u64,
    pub processed: u64,
    pub dropped: u64,
    pub in_flight_at_end: u64,
    pub bypass: u64,
    pub drops: DropBreakdown,
    pub per_chain: BTreeMap<String, ChainReport>,
    pub copies: u64,
    pub ctx_switches: u64,
    pub avg_cores: f64,
    pub max_cores: u32,
    pub monitor_accepted: u64,
    pub monitor_suppressed: u64,
    pub isolation_violations: u64,
    pub remote_fetches: u64,
    pub sync_ticks: u64,
    pub faults: BTreeMap<String, u64>,
}

#[derive(Debug, Error)]
#[error(
    "packet conservation violated: injected {injected} != processed {processed} \
     + dropped {dropped} + in_flight {in_flight} + bypass {bypass}"
)]
pub struct ConservationError {
    pub injected: u64,
    pub processed: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub bypass: u64,
}

#[derive(Debug, Default)]
struct ChainAccum {
    injected: u64,
    processed: u64,
    dropped: u64,
    latencies: Vec<u64>,
    copies: u64,
    ctx_switches: u64,
}

/// Accumulates raw observations during a run and folds them into a
/// `MetricsReport` at the end.
#[derive(Debug, Default)]
pub struct MetricsCollector {
    /// Departures of packets that arrived before this instant are
    /// excluded from latency stats (warm-up trimming).
    pub measure_from_ns: TimeNs,
    injected: u64,
    bypass: u64,
    drops: DropBreakdown,
    chains: Vec<ChainAccum>,
    chain_ids: Vec<String>,
    core_events: Vec<(TimeNs, i32)>,
    pub monitor_accepted: u64,
    pub monitor_suppressed: u64,
    pub isolation_violations: u64,
    pub remote_fetches: u64,
    pub sync_ticks: u64,
    faults: BTreeMap<String, u64>,
}

impl MetricsCollector {
    pub fn new(chain_ids: Vec<String>, measure_from_ns: TimeNs) -> Self {
        let chains = chain_ids.iter().map(|_| ChainAccum::default()).collect();
        MetricsCollector { measure_from_ns, chains, chain_ids, ..Default::default() }
    }

    pub fn record_arrival(&mut self) -> u64 {
        let id = self.injected;
        self.injected += 1;
        id
    }

    pub fn record_chain_arrival(&mut self, chain: usize) {
        self.chains[chain].injected += 1;
    }

    pub fn record_bypass(&mut self) {
        self.bypass += 1;
    }

    pub fn record_drop(&mut self, chain: usize, kind: DropKind) {
        match kind {
            DropKind::VfOverflow => self.drops.vf_overflow += 1,
            DropKind::Rejected => self.drops.rejected += 1,
            DropKind::Terminated => self.drops.terminated += 1,
        }
        self.chains[chain].dropped += 1;
    }

    pub fn record_departure(&mut self, chain: usize, arrival_ns: TimeNs, departure_ns: TimeNs) {
        let acc = &mut self.chains[chain];
        acc.processed += 1;
        if arrival_ns >= self.measure_from_ns {
            acc.latencies.push(departure_ns.saturating_sub(arrival_ns));
        }
    }

    pub fn record_round_costs(&mut self, chain: usize, copies: u64, ctx_switches: u64) {
        self.chains[chain].copies += copies;
        self.chains[chain].ctx_switches += ctx_switches;
    }

    pub fn core_attached(&mut self, at: TimeNs) {
        self.core_events.push((at, 1));
    }

    pub fn core_detached(&mut self, at: TimeNs) {
        self.core_events.push((at, -1));
    }

    pub fn fault(&mut self, kind: &str) {
        *self.faults.entry(kind.to_string()).or_insert(0) += 1;
    }

    pub fn fault_count(&self, kind: &str) -> u64 {
        self.faults.get(kind).copied().unwrap_or(0)
    }

    pub fn injected(&self) -> u64 {
        self.injected
    }

    fn core_usage(&self, run_end: TimeNs) -> (f64, u32) {
        let mut level: i64 = 0;
        let mut max_level: i64 = 0;
        let mut area: f64 = 0.0;
        let mut last = 0u64;
        for &(t, delta) in &self.core_events {
            let t = t.min(run_end);
            area += level as f64 * (t - last) as f64;
            last = t;
            level += delta as i64;
            max_level = max_level.max(level);
        }
        area += level as f64 * (run_end.saturating_sub(last)) as f64;
        let avg = if run_end == 0 { 0.0 } else { area / run_end as f64 };
        (avg, max_level.max(0) as u32)
    }

    /// Folds the run into a report; fails hard if packets went missing.
    pub fn finalize(mut self, run_end: TimeNs, in_flight_at_end: u64) -> Result<MetricsReport, ConservationError> {
        let processed: u64 = self.chains.iter().map(|c| c.processed).sum();
        let dropped = self.drops.total();
        if processed + dropped + in_flight_at_end + self.bypass != self.injected {
            return Err(ConservationError {
                injected: self.injected,
                processed,
                dropped,
                in_flight: in_flight_at_end,
                bypass: self.bypass,
            });
        }
        let (avg_cores, max_cores) = self.core_usage(run_end);
        let mut per_chain = BTreeMap::new();
        for (id, acc) in self.chain_ids.iter().zip(self.chains.iter_mut()) {
            let report = ChainReport {
                injected: acc.injected,
                processed: acc.processed,
                dropped: acc.dropped,
                loss_rate: if acc.injected == 0 { 0.0 } else { acc.dropped as f64 / acc.injected as f64 },
                p50_ns: percentile_ns(&mut acc.latencies, 50.0),
                p99_ns: percentile_ns(&mut acc.latencies, 99.0),
                p999_ns: percentile_ns(&mut acc.latencies, 99.9),
                max_latency_ns: acc.latencies.last().copied().unwrap_or(0),
                copies: acc.copies,
                ctx_switches: acc.ctx_switches,
            };
            per_chain.insert(id.clone(), report);
        }
        Ok(MetricsReport {
            duration_ns: run_end,
            injected: self.injected,
            processed,
            dropped,
            in_flight_at_end,
            bypass: self.bypass,
            drops: self.drops,
            copies: per_chain.values().map(|c| c.copies).sum(),
            ctx_switches: per_chain.values().map(|c| c.ctx_switches).sum(),
            per_chain,
            avg_cores,
            max_cores,
            monitor_accepted: self.monitor_accepted,
            monitor_suppressed: self.monitor_suppressed,
            isolation_violations: self.isolation_violations,
            remote_fetches: self.remote_fetches,
            sync_ticks: self.sync_ticks,
            faults: self.faults,
        })
    }
}

/// Flat key/value CSV with one row per (scope, metric); scope is `total`
/// or a chain id.
pub fn write_metrics_csv<W: std::io::Write>(report: &MetricsReport, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scope", "metric", "value"])?;
    let mut total = |metric: &str, value: String| -> csv::Result<()> {
        out.write_record(["total", metric, &value])
    };
    total("duration_ns", report.duration_ns.to_string())?;
    total("injected", report.injected.to_string())?;
    total("processed", report.processed.to_string())?;
    total("dropped", report.dropped.to_string())?;
    total("in_flight_at_end", report.in_flight_at_end.to_string())?;
    total("bypass", report.bypass.to_string())?;
    total("drops_vf_overflow", report.drops.vf_overflow.to_string())?;
    total("drops_rejected", report.drops.rejected.to_string())?;
    total("drops_terminated", report.drops.terminated.to_string())?;
    total("copies", report.copies.to_string())?;
    total("ctx_switches", report.ctx_switches.to_string())?;
    total("avg_cores", format!("{:.6}", report.avg_cores))?;
    total("max_cores", report.max_cores.to_string())?;
    total("monitor_accepted", report.monitor_accepted.to_string())?;
    total("monitor_suppressed", report.monitor_suppressed.to_string())?;
    total("isolation_violations", report.isolation_violations.to_string())?;
    total("remote_fetches", report.remote_fetches.to_string())?;
    total("sync_ticks", report.sync_ticks.to_string())?;
    for (name, count) in &report.faults {
        out.write_record(["total", &format!("fault_{name}"), &count.to_string()])?;
    }
    for (id, c) in &report.per_chain {
        let mut row = |metric: &str, value: String| -> csv::Result<()> {
            out.write_record([id.as_str(), metric, &value])
        };
        row("injected", c.injected.to_string())?;
        row("processed", c.processed.to_string())?;
        row("dropped", c.dropped.to_string())?;
        row("loss_rate", format!("{:.6}", c.loss_rate))?;
        row("p50_ns", c.p50_ns.to_string())?;
        row("p99_ns", c.p99_ns.to_string())?;
        row("p999_ns", c.p999_ns.to_string())?;
        row("max_latency_ns", c.max_latency_ns.to_string())?;
        row("copies", c.copies.to_string())?;
        row("ctx_switches", c.ctx_switches.to_string())?;
    }
    out.flush()?;
    Ok(())
}
