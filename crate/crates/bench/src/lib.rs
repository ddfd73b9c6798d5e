//! Shared fixtures for the criterion benchmarks in benches/.

use quaysim_core::sim::traffic::{DurationDist, GapModel, RateDist, SizeDist};
use quaysim_core::sim::{OutputOptions, Scenario, TrafficModel};
use quaysim_core::types::{
    ChainSpec, ClusterSpec, CostModel, MonitorConfig, NfProfile, ScalingConfig, ServiceCost,
    TrafficFilter, WorkerSpec,
};

pub fn demo_cluster() -> ClusterSpec {
    let worker = |id| WorkerSpec {
        worker_id: id,
        num_cores: 4,
        freq_hz: 2_400_000_000,
        nic_rate_bps: 10_000_000_000,
        vf_queue_capacity: 128,
        max_batch: 32,
    };
    let nf = |name: &str, cycles| NfProfile {
        name: name.to_string(),
        service_cost: ServiceCost::Constant { constant: cycles },
        stateful: false,
        stuck: false,
    };
    let chain = |id: &str, octet, nfs| ChainSpec {
        chain_id: id.to_string(),
        nfs,
        traffic_filter: TrafficFilter {
            dst_prefix: Some(format!("10.{octet}.0.0/16").parse().unwrap()),
            ..TrafficFilter::default()
        },
        slo_p99_ns: 1_000_000,
        batch_multiplier: None,
    };
    ClusterSpec {
        workers: vec![worker(0), worker(1)],
        chains: vec![
            chain("fwd", 1, vec![nf("decap", 300), nf("route", 250)]),
            chain("filter", 2, vec![nf("acl", 400), nf("dpi", 1200), nf("encrypt", 1800)]),
        ],
        costs: CostModel::default(),
        scaling: ScalingConfig::default(),
        monitoring: MonitorConfig::default(),
    }
}

pub fn demo_scenario() -> Scenario {
    Scenario {
        cluster: demo_cluster(),
        traffic: TrafficModel {
            flow_rate_per_s: 300.0,
            ramp_ns: 0,
            duration_ns: 50_000_000,
            flow_duration: DurationDist::Constant { ns: 20_000_000 },
            flow_pps: RateDist::Constant { pps: 4000.0 },
            packet_size: SizeDist::Constant { bytes: 512 },
            gap_model: GapModel::Poisson,
            chain_mix: vec![],
            bypass_weight: 0.0,
            packet_budget: None,
        },
        output: OutputOptions::default(),
    }
}
