//! Startup profiling: runs one chain instance pinned to a single core
//! against synthetic Poisson traffic and measures a latency/queue/rate
//! row per candidate load threshold.
//!
//! All rows thin one master arrival stream drawn at the chain's ideal
//! (overhead-free) rate. Thinning decisions consume randomness for every
//! candidate whether or not it is kept, so a higher keep fraction admits
//! a strict superset of a lower one and the measured curve is monotone in
//! load by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::batch::{effective_cost_summary, ideal_rate, min_batch, BatchParams};
use crate::controller::{CurveError, ProfileCurve, ProfileRow};
use crate::nf_state::FlowStateTable;
use crate::packet_plane::{ChainPacketBuffer, NicVfQueue, OwnershipLedger};
use crate::sched::{execute_batch_round, RoundInputs};
use crate::sim::metrics::percentile_ns;
use crate::sim::traffic::sub_seed;
use crate::types::{ClusterSpec, PacketRec, TimeNs};

/// Settling time excluded from every measurement.
const WARMUP_NS: TimeNs = 20_000_000;
/// How long a run may keep draining after arrivals stop.
const DRAIN_CAP_NS: TimeNs = 1_000_000_000;
/// Distinct synthetic flows cycled through the chain's filter.
const PROFILE_FLOWS: u64 = 8;

struct Measured {
    rate_pps: f64,
    p99_ns: TimeNs,
    max_qlen: usize,
}

/// Measures one chain's profile curve on the first worker's hardware.
///
/// The saturation run (keep fraction 1) pins down the single-core maximum
/// rate; each threshold row then offers that percentage of it.
pub fn profile_chain(
    cluster: &ClusterSpec,
    chain_idx: usize,
    thresholds: &[f64],
    window_ns: TimeNs,
    seed: u64,
) -> Result<ProfileCurve, CurveError> {
    let chain = &cluster.chains[chain_idx];
    let costs = &cluster.costs;
    let reference = &cluster.workers[0];
    let summary = effective_cost_summary(&chain.nfs, costs, costs.reference_packet_size);
    let params = BatchParams {
        freq_hz: reference.freq_hz,
        t_ctx_cycles: costs.t_ctx_cycles,
        avg_batch: reference.max_batch,
        target_ratio: costs.batch_ratio,
    };
    let multiplier = chain.batch_multiplier.unwrap_or_else(|| min_batch(&summary, &params));
    let master_pps = ideal_rate(&summary, reference.freq_hz);

    let saturated = measure(cluster, chain_idx, multiplier, master_pps, 1.0, window_ns, seed);
    let r_max = saturated.rate_pps.max(1.0);

    let mut pcts = thresholds.to_vec();
    pcts.sort_by(|a, b| a.partial_cmp(b).expect("threshold is not NaN"));
    pcts.dedup();
    let mut rows = Vec::with_capacity(pcts.len());
    for pct in pcts {
        let keep = (pct / 100.0 * r_max / master_pps).clamp(0.0, 1.0);
        let m = measure(cluster, chain_idx, multiplier, master_pps, keep, window_ns, seed);
        rows.push(ProfileRow {
            threshold_pct: pct,
            p99_ns: m.p99_ns,
            max_qlen: m.max_qlen,
            rate_pps: m.rate_pps,
        });
    }
    ProfileCurve::new(rows)
}

/// Measures one chain's saturated single-core throughput with the given
/// batch multiplier: arrivals are offered at the chain's ideal
/// (overhead-free) rate, which always exceeds what a core can serve, and
/// the departure rate over the measurement window is returned.
pub fn measure_saturated_rate(
    cluster: &ClusterSpec,
    chain_idx: usize,
    multiplier: u32,
    window_ns: TimeNs,
    seed: u64,
) -> f64 {
    let chain = &cluster.chains[chain_idx];
    let summary = effective_cost_summary(
        &chain.nfs,
        &cluster.costs,
        cluster.costs.reference_packet_size,
    );
    let master_pps = ideal_rate(&summary, cluster.workers[0].freq_hz);
    measure(cluster, chain_idx, multiplier, master_pps, 1.0, window_ns, seed).rate_pps
}

/// One profiling run: a fresh instance, one core, thinned arrivals.
fn measure(
    cluster: &ClusterSpec,
    chain_idx: usize,
    multiplier: u32,
    master_pps: f64,
    keep: f64,
    window_ns: TimeNs,
    seed: u64,
) -> Measured {
    let chain = &cluster.chains[chain_idx];
    let wspec = &cluster.workers[0];
    let costs = &cluster.costs;
    let mut arrival_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x6172_7276));
    let mut round_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x726e_6473));
    let gap = Exp::new(master_pps / 1e9).expect("ideal rate is positive");
    let keys: Vec<_> =
        (0..PROFILE_FLOWS).map(|i| chain.traffic_filter.key_at(i, i, i, i)).collect();

    let mut vf = NicVfQueue::new(0, wspec.vf_queue_capacity);
    let mut buf = ChainPacketBuffer::new(0);
    let mut tables: Vec<FlowStateTable> = chain.nfs.iter().map(|_| FlowStateTable::new()).collect();
    let mut ledger = OwnershipLedger::new(false);

    let horizon = WARMUP_NS + window_ns;
    let window = WARMUP_NS..horizon;
    let window_s = window_ns as f64 / 1e9;

    let mut next_arrival = {
        let t = gap.sample(&mut arrival_rng).ceil().max(1.0) as TimeNs;
        (t <= horizon).then_some(t)
    };
    let mut round_end: Option<TimeNs> = None;
    let mut round_id = 0u64;
    let mut pkt_id = 0u64;
    let mut samples: Vec<u64> = Vec::new();
    let mut departed_in_window = 0u64;
    let mut max_qlen = 0usize;

    let run_round = |now: TimeNs,
                         round_id: &mut u64,
                         vf: &mut NicVfQueue,
                         buf: &mut ChainPacketBuffer,
                         tables: &mut Vec<FlowStateTable>,
                         ledger: &mut OwnershipLedger,
                         rng: &mut ChaCha8Rng,
                         samples: &mut Vec<u64>,
                         departed: &mut u64|
     -> Option<TimeNs> {
        let inputs = RoundInputs {
            now,
            round_id: *round_id,
            worker_id: wspec.worker_id,
            core: 0,
            freq_hz: wspec.freq_hz,
            costs,
            chain: &chain.nfs,
            chain_idx: chain_idx as u32,
            instance: 0,
            batch_multiplier: multiplier,
            max_batch: wspec.max_batch,
        };
        *round_id += 1;
        let outcome = execute_batch_round(&inputs, vf, buf, tables, ledger, rng)?;
        for (p, dep) in &outcome.departures {
            if window.contains(&p.arrival_ns) {
                samples.push(dep - p.arrival_ns);
            }
            if window.contains(dep) {
                *departed += 1;
            }
        }
        Some(outcome.trace.end_ns)
    };

    loop {
        let arrival_first = match (next_arrival, round_end) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(r)) => a < r,
        };
        if arrival_first {
            let now = next_arrival.expect("checked above");
            let u: f64 = arrival_rng.gen();
            if u < keep {
                let p = PacketRec {
                    id: pkt_id,
                    flow: keys[(pkt_id % PROFILE_FLOWS) as usize],
                    size: costs.reference_packet_size,
                    arrival_ns: now,
                };
                pkt_id += 1;
                if vf.enqueue(p) && window.contains(&now) {
                    max_qlen = max_qlen.max(vf.len());
                }
                if round_end.is_none() {
                    round_end = run_round(
                        now,
                        &mut round_id,
                        &mut vf,
                        &mut buf,
                        &mut tables,
                        &mut ledger,
                        &mut round_rng,
                        &mut samples,
                        &mut departed_in_window,
                    );
                }
            }
            next_arrival = {
                let t = now + gap.sample(&mut arrival_rng).ceil().max(1.0) as TimeNs;
                (t <= horizon).then_some(t)
            };
        } else {
            let now = round_end.expect("checked above");
            if now > horizon + DRAIN_CAP_NS {
                break;
            }
            round_end = if vf.is_empty() {
                None
            } else {
                run_round(
                    now,
                    &mut round_id,
                    &mut vf,
                    &mut buf,
                    &mut tables,
                    &mut ledger,
                    &mut round_rng,
                    &mut samples,
                    &mut departed_in_window,
                )
            };
        }
    }

    Measured {
        rate_pps: departed_in_window as f64 / window_s,
        p99_ns: if samples.is_empty() { TimeNs::MAX } else { percentile_ns(&mut samples, 99.0) },
        max_qlen,
    }
}
