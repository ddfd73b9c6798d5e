//! Shared identifiers, unit conversions, and the cluster specification.
//!
//! Everything here is plain data: the simulator owns all behavior. Times are
//! integer nanoseconds, costs integer CPU cycles, so identical inputs produce
//! identical outputs on every platform.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Simulated time in nanoseconds.
pub type TimeNs = u64;
/// CPU work in cycles.
pub type Cycles = u64;
/// Index into `ClusterSpec::chains`.
pub type ChainIdx = usize;
/// Runtime id of a deployed chain instance (sgroup).
pub type InstanceId = u32;
/// Worker id as given in the cluster definition.
pub type WorkerId = u32;

/// Converts cycles at `freq_hz` to nanoseconds, rounding half up.
pub fn cycles_to_ns(cycles: Cycles, freq_hz: u64) -> TimeNs {
    assert!(freq_hz > 0, "cpu frequency must be positive");
    let n = cycles as u128 * 1_000_000_000;
    ((n + freq_hz as u128 / 2) / freq_hz as u128) as u64
}

/// Converts nanoseconds at `freq_hz` to cycles, rounding half up.
pub fn ns_to_cycles(ns: TimeNs, freq_hz: u64) -> Cycles {
    assert!(freq_hz > 0, "cpu frequency must be positive");
    let n = ns as u128 * freq_hz as u128;
    ((n + 500_000_000) / 1_000_000_000) as u64
}

/// Connection 5-tuple identifying a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}>{}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.proto
        )
    }
}

/// IPv4 prefix, serialized as `a.b.c.d/len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpPrefix {
    pub addr: Ipv4Addr,
    pub len: u8,
}

impl IpPrefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Self {
        assert!(len <= 32, "prefix length out of range");
        IpPrefix { addr, len }
    }

    fn mask(&self) -> u32 {
        if self.len == 0 {
            0
        } else {
            u32::MAX << (32 - self.len)
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        (u32::from(ip) & self.mask()) == (u32::from(self.addr) & self.mask())
    }

    /// Number of host addresses under the prefix.
    pub fn host_space(&self) -> u64 {
        1u64 << (32 - self.len)
    }

    /// The `offset`-th address inside the prefix.
    pub fn nth(&self, offset: u64) -> Ipv4Addr {
        let base = u32::from(self.addr) & self.mask();
        Ipv4Addr::from(base.wrapping_add((offset % self.host_space()) as u32))
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl FromStr for IpPrefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (addr, len) = s.split_once('/').ok_or_else(|| format!("missing '/' in prefix {s:?}"))?;
        let addr: Ipv4Addr = addr.parse().map_err(|e| format!("bad address in {s:?}: {e}"))?;
        let len: u8 = len.parse().map_err(|e| format!("bad length in {s:?}: {e}"))?;
        if len > 32 {
            return Err(format!("prefix length {len} out of range in {s:?}"));
        }
        Ok(IpPrefix { addr, len })
    }
}

impl Serialize for IpPrefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpPrefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive port range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRange {
    pub min: u16,
    pub max: u16,
}

impl PortRange {
    pub fn contains(&self, p: u16) -> bool {
        self.min <= p && p <= self.max
    }

    pub fn nth(&self, offset: u64) -> u16 {
        let span = (self.max - self.min) as u64 + 1;
        self.min + (offset % span) as u16
    }
}

/// Match condition on the 5-tuple; absent fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_prefix: Option<IpPrefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_prefix: Option<IpPrefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_ports: Option<PortRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_ports: Option<PortRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proto: Option<u8>,
}

impl TrafficFilter {
    pub fn matches(&self, key: &FlowKey) -> bool {
        self.src_prefix.map_or(true, |p| p.contains(key.src_ip))
            && self.dst_prefix.map_or(true, |p| p.contains(key.dst_ip))
            && self.src_ports.map_or(true, |r| r.contains(key.src_port))
            && self.dst_ports.map_or(true, |r| r.contains(key.dst_port))
            && self.proto.map_or(true, |p| p == key.proto)
    }

    /// Builds a key matching the filter from four offset coordinates.
    /// Unconstrained fields fall back to fixed default spaces.
    pub fn key_at(&self, src_off: u64, dst_off: u64, sport_off: u64, dport_off: u64) -> FlowKey {
        let src_space = self.src_prefix.unwrap_or(IpPrefix::new(Ipv4Addr::new(10, 0, 0, 0), 8));
        let dst_space = self.dst_prefix.unwrap_or(IpPrefix::new(Ipv4Addr::new(10, 0, 0, 0), 8));
        let sports = self.src_ports.unwrap_or(PortRange { min: 1024, max: 65535 });
        let dports = self.dst_ports.unwrap_or(PortRange { min: 1, max: 1023 });
        FlowKey {
            src_ip: src_space.nth(src_off),
            dst_ip: dst_space.nth(dst_off),
            src_port: sports.nth(sport_off),
            dst_port: dports.nth(dport_off),
            proto: self.proto.unwrap_or(6),
        }
    }
}

/// Per-packet service cost of one NF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServiceCost {
    Constant { constant: Cycles },
    Linear { base: Cycles, per_byte: f64 },
}

impl ServiceCost {
    pub fn eval(&self, size: u32) -> Cycles {
        match *self {
            ServiceCost::Constant { constant } => constant,
            ServiceCost::Linear { base, per_byte } => {
                base.saturating_add((per_byte * size as f64).round() as Cycles)
            }
        }
    }
}

/// One network function in a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfProfile {
    pub name: String,
    pub service_cost: ServiceCost,
    /// Stateful NFs keep per-flow state and may stall on remote fetches.
    #[serde(default)]
    pub stateful: bool,
    /// Fault-injection knob: a stuck NF never yields and trips the
    /// scheduler's yield timeout.
    #[serde(default)]
    pub stuck: bool,
}

/// A deployable NF chain with its match condition and latency target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub chain_id: String,
    pub nfs: Vec<NfProfile>,
    #[serde(default)]
    pub traffic_filter: TrafficFilter,
    /// Tail-latency objective for the chain (p99, nanoseconds).
    pub slo_p99_ns: TimeNs,
    /// Overrides the computed batch multiplier when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_multiplier: Option<u32>,
}

impl ChainSpec {
    pub fn len(&self) -> usize {
        self.nfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nfs.is_empty()
    }
}

fn default_vf_capacity() -> usize {
    128
}

fn default_max_batch() -> u32 {
    32
}

/// One machine in the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSpec {
    pub worker_id: WorkerId,
    pub num_cores: u32,
    pub freq_hz: u64,
    pub nic_rate_bps: u64,
    /// NIC VF receive queue depth, packets.
    #[serde(default = "default_vf_capacity")]
    pub vf_queue_capacity: usize,
    /// DMA batch size cap (b_m).
    #[serde(default = "default_max_batch")]
    pub max_batch: u32,
}

/// How remote state reads are delayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchLatency {
    Constant { ns: TimeNs },
    Uniform { min_ns: TimeNs, max_ns: TimeNs },
}

impl Default for FetchLatency {
    fn default() -> Self {
        FetchLatency::Constant { ns: 310_000 }
    }
}

fn default_sync_period() -> TimeNs {
    1_000_000
}

/// Remote state store behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateStoreModel {
    #[serde(default)]
    pub fetch_latency: FetchLatency,
    /// Background flush cadence for dirty per-flow state.
    #[serde(default = "default_sync_period")]
    pub sync_period_ns: TimeNs,
}

impl Default for StateStoreModel {
    fn default() -> Self {
        StateStoreModel {
            fetch_latency: FetchLatency::default(),
            sync_period_ns: default_sync_period(),
        }
    }
}

fn default_t_ctx() -> Cycles {
    2143
}

fn default_copy_base() -> Cycles {
    247
}

fn default_copy_max() -> Cycles {
    467
}

fn default_per_hop() -> f64 {
    50.8
}

fn default_warmup() -> Cycles {
    100
}

fn default_unmap() -> Cycles {
    4083
}

fn default_map() -> Cycles {
    8495
}

fn default_install_latency() -> TimeNs {
    5_000_000
}

fn default_yield_timeout() -> TimeNs {
    10_000_000
}

fn default_batch_ratio() -> f64 {
    0.9
}

fn default_reference_size() -> u32 {
    1024
}

/// Measured cost constants the simulator charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Cycles per process context switch.
    pub t_ctx_cycles: Cycles,
    /// Packet copy cost at and below 100 bytes.
    pub copy_base_cycles: Cycles,
    /// Packet copy cost at 1500 bytes; linear in between.
    pub copy_max_cycles: Cycles,
    /// Extra cycles per packet at each downstream NF.
    pub per_hop_overhead_cycles: f64,
    /// One-time per-packet cache warm-up at the first NF.
    pub warmup_cycles: Cycles,
    pub unmap_cycles: Cycles,
    pub map_cycles: Cycles,
    /// Delay between a rule install request and the rule taking effect.
    pub install_latency_ns: TimeNs,
    /// Budget an sgroup may hold a core before forced termination.
    pub yield_timeout_ns: TimeNs,
    pub state_store: StateStoreModel,
    /// Target ratio p of ideal throughput when sizing batch multipliers.
    pub batch_ratio: f64,
    /// Packet size used for planning-time cost summaries.
    pub reference_packet_size: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            t_ctx_cycles: default_t_ctx(),
            copy_base_cycles: default_copy_base(),
            copy_max_cycles: default_copy_max(),
            per_hop_overhead_cycles: default_per_hop(),
            warmup_cycles: default_warmup(),
            unmap_cycles: default_unmap(),
            map_cycles: default_map(),
            install_latency_ns: default_install_latency(),
            yield_timeout_ns: default_yield_timeout(),
            state_store: StateStoreModel::default(),
            batch_ratio: default_batch_ratio(),
            reference_packet_size: default_reference_size(),
        }
    }
}

/// Where the controller gets each chain's overload threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Use this load threshold (percent of single-core max rate) as is.
    Fixed { pct: f64 },
    /// Profile each chain at startup and pick the highest threshold whose
    /// p99 stays under the chain's SLO.
    Profile {
        #[serde(default = "default_profile_thresholds")]
        thresholds: Vec<f64>,
        #[serde(default = "default_profile_window")]
        window_ns: TimeNs,
    },
}

pub fn default_profile_thresholds() -> Vec<f64> {
    (1..=17).map(|i| i as f64 * 5.0).collect()
}

fn default_profile_window() -> TimeNs {
    200_000_000
}

impl Default for ThresholdSource {
    fn default() -> Self {
        ThresholdSource::Fixed { pct: 80.0 }
    }
}

fn default_scale_out() -> u32 {
    1
}

fn default_scale_in() -> u32 {
    2
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_window() -> TimeNs {
    10_000_000
}

fn default_loop_period() -> TimeNs {
    10_000_000
}

fn default_idle_window() -> TimeNs {
    100_000_000
}

/// Auto-scaling policy knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Grow the idle pool when it falls below this size.
    pub scale_out_thresh: u32,
    /// Shrink the idle pool when it exceeds this size.
    pub scale_in_thresh: u32,
    /// Relative rate change an instance must see before reporting.
    pub epsilon: f64,
    /// Monitoring window.
    pub window_ns: TimeNs,
    /// Controller scheduling loop period.
    pub loop_period_ns: TimeNs,
    /// Zero-arrival span after which an active sgroup is considered idle.
    pub idle_window_ns: TimeNs,
    pub threshold: ThresholdSource,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            scale_out_thresh: default_scale_out(),
            scale_in_thresh: default_scale_in(),
            epsilon: default_epsilon(),
            window_ns: default_window(),
            loop_period_ns: default_loop_period(),
            idle_window_ns: default_idle_window(),
            threshold: ThresholdSource::default(),
        }
    }
}

fn default_queue_alert() -> usize {
    64
}

/// Monitoring-side report triggers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    /// Queue length whose crossing always triggers a report.
    pub queue_alert_len: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { queue_alert_len: default_queue_alert() }
    }
}

/// Full static description of the simulated cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub workers: Vec<WorkerSpec>,
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub costs: CostModel,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub monitoring: MonitorConfig,
}

/// A packet inside the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRec {
    pub id: u64,
    pub flow: FlowKey,
    pub size: u32,
    pub arrival_ns: TimeNs,
}

/// One way a cluster spec can be invalid.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("no workers defined")]
    NoWorkers,
    #[error("no chains defined")]
    NoChains,
    #[error("duplicate worker id {0}")]
    DuplicateWorkerId(WorkerId),
    #[error("duplicate chain id {0:?}")]
    DuplicateChainId(String),
    #[error("worker {0}: num_cores must be positive")]
    ZeroCores(WorkerId),
    #[error("worker {0}: freq_hz must be positive")]
    ZeroFreq(WorkerId),
    #[error("worker {0}: nic_rate_bps must be positive")]
    ZeroNicRate(WorkerId),
    #[error("worker {0}: vf_queue_capacity must be positive")]
    ZeroVfCapacity(WorkerId),
    #[error("worker {0}: max_batch must be positive")]
    ZeroMaxBatch(WorkerId),
    #[error("chain {0:?} is empty")]
    EmptyChain(String),
    #[error("chain {chain:?} nf {nf:?}: service cost must be positive at {size} bytes")]
    NonPositiveServiceCost { chain: String, nf: String, size: u32 },
    #[error("chain {0:?}: slo_p99_ns must be positive")]
    ZeroSlo(String),
    #[error("chain {0:?}: batch_multiplier must be positive")]
    ZeroBatchMultiplier(String),
    #[error("chain {chain:?}: port range min {min} exceeds max {max}")]
    BadPortRange { chain: String, min: u16, max: u16 },
    #[error("scaling: scale_out_thresh must be positive")]
    ZeroScaleOut,
    #[error("scaling: scale_out_thresh {out} exceeds scale_in_thresh {inn}")]
    PoolBoundsInverted { out: u32, inn: u32 },
    #[error("scaling: epsilon must be in (0, 1)")]
    BadEpsilon,
    #[error("scaling: {0} must be positive")]
    ZeroScalingPeriod(&'static str),
    #[error("scaling: fixed threshold pct must be in (0, 100]")]
    BadFixedThreshold,
    #[error("scaling: profile thresholds must be strictly increasing in (0, 100]")]
    BadProfileThresholds,
    #[error("costs: t_ctx_cycles must be positive")]
    ZeroTctx,
    #[error("costs: copy_max_cycles must be >= copy_base_cycles")]
    CopyCostInverted,
    #[error("costs: per_hop_overhead_cycles must be finite and non-negative")]
    BadPerHop,
    #[error("costs: batch_ratio must be in (0, 1)")]
    BadBatchRatio,
    #[error("costs: reference_packet_size must be in [64, 1500]")]
    BadReferenceSize,
    #[error("costs: {0} must be positive")]
    ZeroCostPeriod(&'static str),
}

/// Checks every structural invariant and returns the cluster unchanged iff
/// all hold; otherwise lists every violation found.
pub fn validate_cluster_spec(spec: ClusterSpec) -> Result<ClusterSpec, Vec<ValidationError>> {
    let mut errs = Vec::new();

    if spec.workers.is_empty() {
        errs.push(ValidationError::NoWorkers);
    }
    if spec.chains.is_empty() {
        errs.push(ValidationError::NoChains);
    }

    let mut seen_workers = std::collections::BTreeSet::new();
    for w in &spec.workers {
        if !seen_workers.insert(w.worker_id) {
            errs.push(ValidationError::DuplicateWorkerId(w.worker_id));
        }
        if w.num_cores == 0 {
            errs.push(ValidationError::ZeroCores(w.worker_id));
        }
        if w.freq_hz == 0 {
            errs.push(ValidationError::ZeroFreq(w.worker_id));
        }
        if w.nic_rate_bps == 0 {
            errs.push(ValidationError::ZeroNicRate(w.worker_id));
        }
        if w.vf_queue_capacity == 0 {
            errs.push(ValidationError::ZeroVfCapacity(w.worker_id));
        }
        if w.max_batch == 0 {
            errs.push(ValidationError::ZeroMaxBatch(w.worker_id));
        }
    }

    let mut seen_chains = std::collections::BTreeSet::new();
    for c in &spec.chains {
        if !seen_chains.insert(c.chain_id.clone()) {
            errs.push(ValidationError::DuplicateChainId(c.chain_id.clone()));
        }
        if c.nfs.is_empty() {
            errs.push(ValidationError::EmptyChain(c.chain_id.clone()));
        }
        for nf in &c.nfs {
            for size in [64u32, 1500] {
                if nf.service_cost.eval(size) == 0 {
                    errs.push(ValidationError::NonPositiveServiceCost {
                        chain: c.chain_id.clone(),
                        nf: nf.name.clone(),
                        size,
                    });
                }
            }
        }
        if c.slo_p99_ns == 0 {
            errs.push(ValidationError::ZeroSlo(c.chain_id.clone()));
        }
        if c.batch_multiplier == Some(0) {
            errs.push(ValidationError::ZeroBatchMultiplier(c.chain_id.clone()));
        }
        for range in [c.traffic_filter.src_ports, c.traffic_filter.dst_ports].into_iter().flatten() {
            if range.min > range.max {
                errs.push(ValidationError::BadPortRange {
                    chain: c.chain_id.clone(),
                    min: range.min,
                    max: range.max,
                });
            }
        }
    }

    let s = &spec.scaling;
    if s.scale_out_thresh == 0 {
        errs.push(ValidationError::ZeroScaleOut);
    }
    if s.scale_out_thresh > s.scale_in_thresh {
        errs.push(ValidationError::PoolBoundsInverted { out: s.scale_out_thresh, inn: s.scale_in_thresh });
    }
    if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
        errs.push(ValidationError::BadEpsilon);
    }
    for (name, v) in [
        ("window_ns", s.window_ns),
        ("loop_period_ns", s.loop_period_ns),
        ("idle_window_ns", s.idle_window_ns),
    ] {
        if v == 0 {
            errs.push(ValidationError::ZeroScalingPeriod(name));
        }
    }
    match &s.threshold {
        ThresholdSource::Fixed { pct } => {
            if !(*pct > 0.0 && *pct <= 100.0) {
                errs.push(ValidationError::BadFixedThreshold);
            }
        }
        ThresholdSource::Profile { thresholds, window_ns } => {
            let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
            let in_range = thresholds.iter().all(|t| *t > 0.0 && *t <= 100.0);
            if thresholds.is_empty() || !increasing || !in_range {
                errs.push(ValidationError::BadProfileThresholds);
            }
            if *window_ns == 0 {
                errs.push(ValidationError::ZeroScalingPeriod("profile window_ns"));
            }
        }
    }

    let costs = &spec.costs;
    if costs.t_ctx_cycles == 0 {
        errs.push(ValidationError::ZeroTctx);
    }
    if costs.copy_max_cycles < costs.copy_base_cycles {
        errs.push(ValidationError::CopyCostInverted);
    }
    if !costs.per_hop_overhead_cycles.is_finite() || costs.per_hop_overhead_cycles < 0.0 {
        errs.push(ValidationError::BadPerHop);
    }
    if !(costs.batch_ratio > 0.0 && costs.batch_ratio < 1.0) {
        errs.push(ValidationError::BadBatchRatio);
    }
    if !(64..=1500).contains(&costs.reference_packet_size) {
        errs.push(ValidationError::BadReferenceSize);
    }
    for (name, v) in [
        ("install_latency_ns", costs.install_latency_ns),
        ("yield_timeout_ns", costs.yield_timeout_ns),
        ("state_store.sync_period_ns", costs.state_store.sync_period_ns),
    ] {
        if v == 0 {
            errs.push(ValidationError::ZeroCostPeriod(name));
        }
    }

    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(errs)
    }
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;

    /// Distinct dst octet per chain id so fixture filters never overlap.
    fn dst_octet(id: &str) -> u32 {
        16 + id.bytes().fold(0u32, |a, b| (a.wrapping_mul(31) + b as u32) % 200)
    }

    pub(crate) fn worker(id: WorkerId) -> WorkerSpec {
        WorkerSpec {
            worker_id: id,
            num_cores: 4,
            freq_hz: 2_400_000_000,
            nic_rate_bps: 10_000_000_000,
            vf_queue_capacity: 128,
            max_batch: 32,
        }
    }

    pub(crate) fn chain(id: &str, costs: &[Cycles]) -> ChainSpec {
        ChainSpec {
            chain_id: id.to_string(),
            nfs: costs
                .iter()
                .enumerate()
                .map(|(i, c)| NfProfile {
                    name: format!("nf{i}"),
                    service_cost: ServiceCost::Constant { constant: *c },
                    stateful: false,
                    stuck: false,
                })
                .collect(),
            traffic_filter: TrafficFilter {
                dst_prefix: Some(format!("10.{}.0.0/16", dst_octet(id)).parse().unwrap()),
                ..TrafficFilter::default()
            },
            slo_p99_ns: 100_000,
            batch_multiplier: None,
        }
    }
}
