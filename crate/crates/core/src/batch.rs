//! Batch-multiplier planning.
//!
//! A chain's first NF pulls up to `B_v` DMA batches before handing the
//! super-batch downstream, amortizing the per-round context switches. This
//! module answers: how small can `B_v` be while keeping the per-core packet
//! rate within a ratio `p` of the context-switch-free ideal?

use crate::packet_plane::copy_cost;
use crate::types::{CostModel, Cycles, NfProfile};

/// Per-packet service cycles of each NF in a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainCostSummary {
    pub service_cycles: Vec<Cycles>,
}

impl ChainCostSummary {
    pub fn new(service_cycles: Vec<Cycles>) -> Self {
        ChainCostSummary { service_cycles }
    }

    pub fn nf_count(&self) -> usize {
        self.service_cycles.len()
    }

    pub fn sum_cycles(&self) -> Cycles {
        self.service_cycles.iter().sum()
    }
}

/// Inputs to the rate estimate besides the chain costs.
///
/// The context-switch time is stored in cycles and divided out by `freq_hz`
/// at the formula boundary, so integer configs stay integer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchParams {
    pub freq_hz: u64,
    pub t_ctx_cycles: Cycles,
    /// Average packets per DMA batch (b_v), in [1, b_m].
    pub avg_batch: u32,
    /// Target ratio p of the ideal rate, in (0, 1).
    pub target_ratio: f64,
}

/// Estimated per-core packet rate with batch multiplier `multiplier`:
/// `Freq / (sum_T + N * T_ctx * Freq / (B_v * b_v))`, packets per second.
pub fn estimated_rate(c: &ChainCostSummary, params: &BatchParams, multiplier: u32) -> f64 {
    assert!(multiplier >= 1, "batch multiplier must be at least 1");
    let per_packet = c.sum_cycles() as f64
        + c.nf_count() as f64 * params.t_ctx_cycles as f64
            / (multiplier as f64 * params.avg_batch as f64);
    params.freq_hz as f64 / per_packet
}

/// Upper bound on the per-core rate: service time alone, no switch overhead.
pub fn ideal_rate(c: &ChainCostSummary, freq_hz: u64) -> f64 {
    let sum = c.sum_cycles();
    assert!(sum > 0, "chain service cycles must be positive");
    freq_hz as f64 / sum as f64
}

/// Smallest multiplier keeping `estimated_rate >= p * ideal_rate`, closed
/// form: `max(1, ceil(p * N * T_ctx / ((1 - p) * b_v * sum_T)))`.
pub fn min_batch(c: &ChainCostSummary, params: &BatchParams) -> u32 {
    let p = params.target_ratio;
    assert!(p > 0.0 && p < 1.0, "target ratio must be in (0, 1)");
    let numer = p * c.nf_count() as f64 * params.t_ctx_cycles as f64;
    let denom = (1.0 - p) * params.avg_batch as f64 * c.sum_cycles() as f64;
    (numer / denom).ceil().max(1.0) as u32
}

/// Planning-time per-NF costs at one packet size: service plus the
/// per-packet overheads each NF loop actually charges, so rate estimates
/// line up with executed rounds. The first NF absorbs cache warm-up and
/// (for multi-NF chains) the packet copy; downstream NFs absorb the
/// per-hop overhead.
pub fn effective_cost_summary(chain: &[NfProfile], costs: &CostModel, size: u32) -> ChainCostSummary {
    let n = chain.len();
    let per_hop = costs.per_hop_overhead_cycles.round() as Cycles;
    let service = chain
        .iter()
        .enumerate()
        .map(|(i, nf)| {
            let mut c = nf.service_cost.eval(size);
            if i == 0 {
                c += costs.warmup_cycles;
                if n >= 2 {
                    c += copy_cost(size, costs);
                }
            } else {
                c += per_hop;
            }
            c
        })
        .collect();
    ChainCostSummary::new(service)
}

/// Reference implementation of [`min_batch`]: scan multipliers upward until
/// the rate constraint holds.
pub fn min_batch_scan(c: &ChainCostSummary, params: &BatchParams) -> u32 {
    let target = params.target_ratio * ideal_rate(c, params.freq_hz);
    let mut b = 1u32;
    while estimated_rate(c, params, b) < target {
        b += 1;
    }
    b
}
