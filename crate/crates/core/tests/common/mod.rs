#![allow(dead_code)]

use quaysim_core::sim::{OutputOptions, Scenario};
use quaysim_core::sim::traffic::TrafficModel;
use quaysim_core::types::{
    ChainSpec, ClusterSpec, Cycles, NfProfile, ServiceCost, TrafficFilter, WorkerSpec,
};

pub fn worker(id: u32) -> WorkerSpec {
    WorkerSpec {
        worker_id: id,
        num_cores: 4,
        freq_hz: 2_400_000_000,
        nic_rate_bps: 10_000_000_000,
        vf_queue_capacity: 128,
        max_batch: 32,
    }
}

pub fn nf(name: &str, cycles: Cycles) -> NfProfile {
    NfProfile {
        name: name.to_string(),
        service_cost: ServiceCost::Constant { constant: cycles },
        stateful: false,
        stuck: false,
    }
}

/// A chain matching destination prefix `10.<octet>.0.0/16`, one constant-cost
/// NF per entry of `svc`.
pub fn chain(id: &str, octet: u8, svc: &[Cycles]) -> ChainSpec {
    ChainSpec {
        chain_id: id.to_string(),
        nfs: svc.iter().enumerate().map(|(i, &c)| nf(&format!("{id}-nf{i}"), c)).collect(),
        traffic_filter: TrafficFilter {
            dst_prefix: Some(format!("10.{octet}.0.0/16").parse().unwrap()),
            ..Default::default()
        },
        slo_p99_ns: 1_000_000,
        batch_multiplier: None,
    }
}

pub fn cluster(workers: Vec<WorkerSpec>, chains: Vec<ChainSpec>) -> ClusterSpec {
    ClusterSpec {
        workers,
        chains,
        costs: Default::default(),
        scaling: Default::default(),
        monitoring: Default::default(),
    }
}

pub fn scenario(cluster: ClusterSpec, traffic: TrafficModel) -> Scenario {
    Scenario { cluster, traffic, output: OutputOptions::default() }
}
