//! Traffic synthesis: flow arrivals, per-flow packet schedules, and the
//! chain mix.
//!
//! Flow arrivals follow a Poisson process whose rate ramps linearly from
//! zero to `flow_rate_per_s` over `ramp_ns`, produced by thinning a
//! constant-rate candidate stream. Per-flow attributes come from a
//! flow-local generator seeded from the flow id, so one flow's draws never
//! shift another's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::event::FlowId;
use crate::types::{ChainSpec, FlowKey, TimeNs, TrafficFilter};

pub const MIN_PACKET_BYTES: u32 = 64;
pub const MAX_PACKET_BYTES: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DurationDist {
    Constant { ns: u64 },
    Exponential { mean_ns: u64 },
    Uniform { min_ns: u64, max_ns: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum RateDist {
    Constant { pps: f64 },
    Uniform { min_pps: f64, max_pps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SizeDist {
    Constant { bytes: u32 },
    Uniform { min_bytes: u32, max_bytes: u32 },
}

/// Spacing of packets within a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapModel {
    /// Evenly spaced at 1/pps.
    Deterministic,
    /// Evenly spaced plus uniform noise of at most `frac` of the gap
    /// (frac <= 0.5 keeps packets in order).
    Jitter { frac: f64 },
    /// Exponential gaps with mean 1/pps.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub chain_id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficModel {
    /// Peak flow arrival rate after the ramp.
    pub flow_rate_per_s: f64,
    /// Linear ramp from zero to peak; 0 starts at full rate.
    pub ramp_ns: TimeNs,
    /// New flows stop arriving after this point.
    pub duration_ns: TimeNs,
    /// Optional cap on total packets injected.
    pub packet_budget: Option<u64>,
    pub flow_duration: DurationDist,
    pub flow_pps: RateDist,
    pub packet_size: SizeDist,
    pub gap_model: GapModel,
    /// Relative weights per chain; empty means uniform over all chains.
    pub chain_mix: Vec<MixEntry>,
    /// Relative weight of traffic matching no chain at all.
    pub bypass_weight: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel {
            flow_rate_per_s: 10.0,
            ramp_ns: 0,
            duration_ns: 1_000_000_000,
            packet_budget: None,
            flow_duration: DurationDist::Constant { ns: 100_000_000 },
            flow_pps: RateDist::Constant { pps: 1000.0 },
            packet_size: SizeDist::Constant { bytes: 512 },
            gap_model: GapModel::Deterministic,
            chain_mix: Vec::new(),
            bypass_weight: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("flow_rate_per_s must be finite and >= 0")]
    BadFlowRate,
    #[error("duration_ns must be > 0")]
    ZeroDuration,
    #[error("chain mix references unknown chain `{0}`")]
    UnknownChain(String),
    #[error("mix weight for `{0}` must be finite and >= 0")]
    BadWeight(String),
    #[error("bypass_weight must be finite and >= 0")]
    BadBypassWeight,
    #[error("all traffic weights are zero")]
    NoTargets,
    #[error("jitter frac must be in [0, 0.5]")]
    BadJitter,
    #[error("flow duration must be > 0")]
    BadFlowDuration,
    #[error("flow pps must be finite and > 0")]
    BadFlowPps,
    #[error("packet bytes must lie in [{MIN_PACKET_BYTES}, {MAX_PACKET_BYTES}]")]
    BadPacketSize,
    #[error("uniform range has min > max")]
    InvertedRange,
}

pub fn validate_traffic(model: &TrafficModel, chains: &[ChainSpec]) -> Vec<TrafficError> {
    let mut errs = Vec::new();
    if !model.flow_rate_per_s.is_finite() || model.flow_rate_per_s < 0.0 {
        errs.push(TrafficError::BadFlowRate);
    }
    if model.duration_ns == 0 {
        errs.push(TrafficError::ZeroDuration);
    }
    match model.flow_duration {
        DurationDist::Constant { ns } if ns == 0 => errs.push(TrafficError::BadFlowDuration),
        DurationDist::Exponential { mean_ns } if mean_ns == 0 => errs.push(TrafficError::BadFlowDuration),
        DurationDist::Uniform { min_ns, max_ns } => {
            if min_ns > max_ns {
                errs.push(TrafficError::InvertedRange);
            } else if min_ns == 0 {
                errs.push(TrafficError::BadFlowDuration);
            }
        }
        _ => {}
    }
    match model.flow_pps {
        RateDist::Constant { pps } if !pps.is_finite() || pps <= 0.0 => {
            errs.push(TrafficError::BadFlowPps)
        }
        RateDist::Uniform { min_pps, max_pps } => {
            if !(min_pps.is_finite() && max_pps.is_finite()) || min_pps <= 0.0 {
                errs.push(TrafficError::BadFlowPps);
            } else if min_pps > max_pps {
                errs.push(TrafficError::InvertedRange);
            }
        }
        _ => {}
    }
    match model.packet_size {
        SizeDist::Constant { bytes } => {
            if !(MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(&bytes) {
                errs.push(TrafficError::BadPacketSize);
            }
        }
        SizeDist::Uniform { min_bytes, max_bytes } => {
            if min_bytes > max_bytes {
                errs.push(TrafficError::InvertedRange);
            } else if min_bytes < MIN_PACKET_BYTES || max_bytes > MAX_PACKET_BYTES {
                errs.push(TrafficError::BadPacketSize);
            }
        }
    }
    if let GapModel::Jitter { frac } = model.gap_model {
        if !frac.is_finite() || !(0.0..=0.5).contains(&frac) {
            errs.push(TrafficError::BadJitter);
        }
    }
    if !model.bypass_weight.is_finite() || model.bypass_weight < 0.0 {
        errs.push(TrafficError::BadBypassWeight);
    }
    let mut total_weight = model.bypass_weight.max(0.0);
    if model.chain_mix.is_empty() {
        total_weight += chains.len() as f64;
    } else {
        for entry in &model.chain_mix {
            if !chains.iter().any(|c| c.chain_id == entry.chain_id) {
                errs.push(TrafficError::UnknownChain(entry.chain_id.clone()));
            }
            if !entry.weight.is_finite() || entry.weight < 0.0 {
                errs.push(TrafficError::BadWeight(entry.chain_id.clone()));
            } else {
                total_weight += entry.weight;
            }
        }
    }
    if model.flow_rate_per_s > 0.0 && total_weight <= 0.0 {
        errs.push(TrafficError::NoTargets);
    }
    errs
}

/// Stable per-object sub-seed derivation (splitmix64 over seed ^ salt).
pub(crate) fn sub_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A live flow: identity, schedule, and its private sample stream.
#[derive(Debug, Clone)]
pub struct FlowRt {
    pub id: FlowId,
    pub key: FlowKey,
    /// Index into the scenario's chain list; `None` is traffic built to
    /// match nothing.
    pub target_chain: Option<usize>,
    pub start_ns: TimeNs,
    pub end_ns: TimeNs,
    pub gap_ns: f64,
    size: SizeDist,
    gap_model: GapModel,
    emitted: u64,
    poisson_clock: f64,
    rng: ChaCha8Rng,
}

impl FlowRt {
    /// Arrival time of the next packet, or `None` once the flow is over.
    /// Times never decrease between calls.
    pub fn next_packet_at(&mut self) -> Option<TimeNs> {
        let t = match self.gap_model {
            GapModel::Deterministic => self.start_ns as f64 + self.emitted as f64 * self.gap_ns,
            GapModel::Jitter { frac } => {
                let base = self.start_ns as f64 + self.emitted as f64 * self.gap_ns;
                let noise = if self.emitted == 0 {
                    0.0
                } else {
                    self.gap_ns * frac * (self.rng.gen::<f64>() * 2.0 - 1.0)
                };
                base + noise
            }
            GapModel::Poisson => {
                if self.emitted > 0 {
                    let exp = Exp::new(1.0 / self.gap_ns).expect("gap_ns > 0");
                    self.poisson_clock += exp.sample(&mut self.rng);
                }
                self.start_ns as f64 + self.poisson_clock
            }
        };
        let t = t.round().max(self.start_ns as f64) as TimeNs;
        if t >= self.end_ns {
            return None;
        }
        self.emitted += 1;
        Some(t)
    }

    pub fn sample_size(&mut self) -> u32 {
        match self.size {
            SizeDist::Constant { bytes } => bytes,
            SizeDist::Uniform { min_bytes, max_bytes } => self.rng.gen_range(min_bytes..=max_bytes),
        }
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }
}

fn bypass_filter() -> TrafficFilter {
    TrafficFilter {
        src_prefix: Some("240.0.0.0/8".parse().expect("static prefix")),
        dst_prefix: Some("241.0.0.0/8".parse().expect("static prefix")),
        src_ports: None,
        dst_ports: None,
        proto: Some(17),
    }
}

/// Draws flows in arrival order for one run.
#[derive(Debug)]
pub struct TrafficGen {
    lambda_per_ns: f64,
    ramp_ns: f64,
    horizon_ns: f64,
    master_clock_ns: f64,
    rng: ChaCha8Rng,
    seed: u64,
    /// (chain index or bypass, cumulative weight).
    targets: Vec<(Option<usize>, f64)>,
    total_weight: f64,
    filters: Vec<TrafficFilter>,
    bypass: TrafficFilter,
    duration: DurationDist,
    pps: RateDist,
    size: SizeDist,
    gap_model: GapModel,
    next_id: FlowId,
    done: bool,
}

impl TrafficGen {
    pub fn new(model: &TrafficModel, chains: &[ChainSpec], seed: u64) -> Result<Self, Vec<TrafficError>> {
        let errs = validate_traffic(model, chains);
        if !errs.is_empty() {
            return Err(errs);
        }
        let mut targets = Vec::new();
        let mut acc = 0.0;
        if model.chain_mix.is_empty() {
            for idx in 0..chains.len() {
                acc += 1.0;
                targets.push((Some(idx), acc));
            }
        } else {
            for entry in &model.chain_mix {
                let idx = chains
                    .iter()
                    .position(|c| c.chain_id == entry.chain_id)
                    .expect("validated above");
                acc += entry.weight;
                targets.push((Some(idx), acc));
            }
        }
        if model.bypass_weight > 0.0 {
            acc += model.bypass_weight;
            targets.push((None, acc));
        }
        Ok(TrafficGen {
            lambda_per_ns: model.flow_rate_per_s / 1e9,
            ramp_ns: model.ramp_ns as f64,
            horizon_ns: model.duration_ns as f64,
            master_clock_ns: 0.0,
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x7261_6666_6963)),
            seed,
            targets,
            total_weight: acc,
            filters: chains.iter().map(|c| c.traffic_filter.clone()).collect(),
            bypass: bypass_filter(),
            duration: model.flow_duration,
            pps: model.flow_pps,
            size: model.packet_size,
            gap_model: model.gap_model,
            next_id: 0,
            done: model.flow_rate_per_s <= 0.0 || acc <= 0.0,
        })
    }

    /// Next flow in arrival order, or `None` once the horizon is reached.
    pub fn next_flow(&mut self) -> Option<FlowRt> {
        if self.done {
            return None;
        }
        let exp = Exp::new(self.lambda_per_ns).expect("rate > 0");
        loop {
            self.master_clock_ns += exp.sample(&mut self.rng);
            if self.master_clock_ns >= self.horizon_ns {
                self.done = true;
                return None;
            }
            let keep_prob = if self.ramp_ns <= 0.0 {
                1.0
            } else {
                (self.master_clock_ns / self.ramp_ns).min(1.0)
            };
            let u: f64 = self.rng.gen();
            let pick: f64 = self.rng.gen::<f64>() * self.total_weight;
            if u >= keep_prob {
                continue;
            }
            let target = self
                .targets
                .iter()
                .find(|(_, cum)| pick < *cum)
                .or(self.targets.last())
                .expect("targets nonempty")
                .0;
            return Some(self.materialize(self.master_clock_ns.round() as TimeNs, target));
        }
    }

    fn materialize(&mut self, start_ns: TimeNs, target: Option<usize>) -> FlowRt {
        let id = self.next_id;
        self.next_id += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, 0x666c_6f77_0000 ^ id));
        let duration_ns = match self.duration {
            DurationDist::Constant { ns } => ns,
            DurationDist::Exponential { mean_ns } => {
                let exp = Exp::new(1.0 / mean_ns as f64).expect("mean > 0");
                exp.sample(&mut rng).round().max(1.0) as u64
            }
            DurationDist::Uniform { min_ns, max_ns } => rng.gen_range(min_ns..=max_ns),
        };
        let pps = match self.pps {
            RateDist::Constant { pps } => pps,
            RateDist::Uniform { min_pps, max_pps } => rng.gen_range(min_pps..=max_pps),
        };
        let filter = match target {
            Some(idx) => &self.filters[idx],
            None => &self.bypass,
        };
        let key = filter.key_at(rng.gen(), rng.gen(), rng.gen(), rng.gen());
        FlowRt {
            id,
            key,
            target_chain: target,
            start_ns,
            end_ns: start_ns.saturating_add(duration_ns),
            gap_ns: 1e9 / pps,
            size: self.size,
            gap_model: self.gap_model,
            emitted: 0,
            poisson_clock: 0.0,
            rng,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingress::classify;
    use crate::types::test_fixtures::chain;

    fn chains() -> Vec<ChainSpec> {
        vec![chain("edge-a", &[500]), chain("edge-b", &[400, 300])]
    }

    fn model(rate: f64, horizon_ns: TimeNs) -> TrafficModel {
        TrafficModel {
            flow_rate_per_s: rate,
            duration_ns: horizon_ns,
            ..TrafficModel::default()
        }
    }

    fn drain(gen: &mut TrafficGen) -> Vec<FlowRt> {
        std::iter::from_fn(|| gen.next_flow()).collect()
    }

    #[test]
    fn zero_rate_yields_no_flows() {
        let mut gen = TrafficGen::new(&model(0.0, 1_000_000_000), &chains(), 7).unwrap();
        assert!(gen.next_flow().is_none());
    }

    #[test]
    fn arrivals_are_ordered_and_inside_horizon() {
        let mut gen = TrafficGen::new(&model(500.0, 2_000_000_000), &chains(), 1).unwrap();
        let flows = drain(&mut gen);
        assert!(flows.len() > 500);
        assert!(flows.windows(2).all(|w| w[0].start_ns <= w[1].start_ns));
        assert!(flows.iter().all(|f| f.start_ns < 2_000_000_000));
    }

    #[test]
    fn linear_ramp_halves_expected_volume() {
        // Ramp spanning the whole horizon integrates to rate * T / 2.
        let mut m = model(200.0, 10_000_000_000);
        m.ramp_ns = 10_000_000_000;
        let mut totals = Vec::new();
        for seed in [11, 22, 33] {
            let mut gen = TrafficGen::new(&m, &chains(), seed).unwrap();
            totals.push(drain(&mut gen).len() as f64);
        }
        let expected = 200.0 * 10.0 / 2.0;
        for t in totals {
            assert!((t - expected).abs() < expected * 0.10, "{t} vs {expected}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_same_flows() {
        let m = model(300.0, 1_000_000_000);
        let mut a = TrafficGen::new(&m, &chains(), 42).unwrap();
        let mut b = TrafficGen::new(&m, &chains(), 42).unwrap();
        let fa = drain(&mut a);
        let fb = drain(&mut b);
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!((x.id, x.key, x.start_ns, x.end_ns), (y.id, y.key, y.start_ns, y.end_ns));
        }
    }

    #[test]
    fn deterministic_gaps_are_exact() {
        let mut gen = TrafficGen::new(&model(100.0, 1_000_000_000), &chains(), 5).unwrap();
        let mut f = gen.next_flow().unwrap();
        let start = f.start_ns;
        for k in 0..20 {
            match f.next_packet_at() {
                Some(t) => assert_eq!(t, start + k * 1_000_000),
                None => break,
            }
        }
    }

    #[test]
    fn jittered_gaps_stay_ordered_and_bounded() {
        let mut m = model(100.0, 1_000_000_000);
        m.gap_model = GapModel::Jitter { frac: 0.4 };
        let mut gen = TrafficGen::new(&m, &chains(), 5).unwrap();
        let mut f = gen.next_flow().unwrap();
        let gap = f.gap_ns;
        let times: Vec<_> = std::iter::from_fn(|| f.next_packet_at()).collect();
        assert!(times.len() > 10);
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        for (k, t) in times.iter().enumerate() {
            let base = times[0] as f64 + k as f64 * gap;
            assert!((*t as f64 - base).abs() <= gap * 0.4 + 1.0);
        }
    }

    #[test]
    fn poisson_gaps_average_near_the_mean() {
        let mut m = model(50.0, 1_000_000_000);
        m.gap_model = GapModel::Poisson;
        m.flow_duration = DurationDist::Constant { ns: 500_000_000 };
        m.flow_pps = RateDist::Constant { pps: 10_000.0 };
        let mut gen = TrafficGen::new(&m, &chains(), 9).unwrap();
        let mut f = gen.next_flow().unwrap();
        let times: Vec<_> = std::iter::from_fn(|| f.next_packet_at()).collect();
        let mean_gap = (times[times.len() - 1] - times[0]) as f64 / (times.len() - 1) as f64;
        assert!((mean_gap - 100_000.0).abs() < 10_000.0, "mean gap {mean_gap}");
    }

    #[test]
    fn mix_weights_steer_flow_counts() {
        let mut m = model(2000.0, 1_000_000_000);
        m.chain_mix = vec![
            MixEntry { chain_id: "edge-a".into(), weight: 1.0 },
            MixEntry { chain_id: "edge-b".into(), weight: 3.0 },
        ];
        let mut gen = TrafficGen::new(&m, &chains(), 3).unwrap();
        let flows = drain(&mut gen);
        let b = flows.iter().filter(|f| f.target_chain == Some(1)).count() as f64;
        let frac = b / flows.len() as f64;
        assert!((frac - 0.75).abs() < 0.05, "weight-3 share {frac}");
    }

    #[test]
    fn unknown_mix_chain_is_rejected() {
        let mut m = model(10.0, 1_000_000_000);
        m.chain_mix = vec![MixEntry { chain_id: "nope".into(), weight: 1.0 }];
        let errs = TrafficGen::new(&m, &chains(), 0).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, TrafficError::UnknownChain(c) if c == "nope")));
    }

    #[test]
    fn bypass_flows_match_no_chain() {
        let mut m = model(500.0, 1_000_000_000);
        m.bypass_weight = 1.0;
        let cs = chains();
        let mut gen = TrafficGen::new(&m, &cs, 13).unwrap();
        let flows = drain(&mut gen);
        let bypass: Vec<_> = flows.iter().filter(|f| f.target_chain.is_none()).collect();
        assert!(!bypass.is_empty());
        for f in bypass {
            assert_eq!(classify(&cs, &f.key), None);
        }
    }

    #[test]
    fn flow_keys_satisfy_their_chain_filter() {
        let cs = chains();
        let mut gen = TrafficGen::new(&model(300.0, 1_000_000_000), &cs, 21).unwrap();
        for f in drain(&mut gen) {
            let idx = f.target_chain.unwrap();
            assert!(cs[idx].traffic_filter.matches(&f.key));
        }
    }

    #[test]
    fn packet_sizes_respect_the_distribution() {
        let mut m = model(100.0, 1_000_000_000);
        m.packet_size = SizeDist::Uniform { min_bytes: 128, max_bytes: 256 };
        let mut gen = TrafficGen::new(&m, &chains(), 17).unwrap();
        let mut f = gen.next_flow().unwrap();
        for _ in 0..100 {
            let s = f.sample_size();
            assert!((128..=256).contains(&s));
        }
    }

    #[test]
    fn validation_flags_bad_ranges() {
        let mut m = model(10.0, 0);
        m.packet_size = SizeDist::Constant { bytes: 9000 };
        m.gap_model = GapModel::Jitter { frac: 0.9 };
        let errs = validate_traffic(&m, &chains());
        assert!(errs.contains(&TrafficError::ZeroDuration));
        assert!(errs.contains(&TrafficError::BadPacketSize));
        assert!(errs.contains(&TrafficError::BadJitter));
    }
}
