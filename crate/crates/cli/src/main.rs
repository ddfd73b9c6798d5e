//! `quaysim` — run scenario files, profile chains, and sweep parameters.
//!
//! Exit codes: 0 success, 2 invalid input (scenario file, spec, traffic),
//! 3 internal inconsistency (conservation failure, self-check mismatch).

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use quaysim_core::batch::{
    effective_cost_summary, estimated_rate, ideal_rate, min_batch, min_batch_scan, BatchParams,
};
use quaysim_core::controller::{pick_load_threshold, write_profile_curve_csv};
use quaysim_core::ingress::write_flow_table_csv;
use quaysim_core::packet_plane::write_ledger_csv;
use quaysim_core::scenario::{load_scenario, ScenarioError};
use quaysim_core::sched::write_trace_csv;
use quaysim_core::sim::metrics::write_metrics_csv;
use quaysim_core::sim::{profile_chain, run_scenario, RunArtifacts, Scenario, SimError};
use quaysim_core::types::{default_profile_thresholds, ClusterSpec, ThresholdSource};

#[derive(Parser)]
#[command(name = "quaysim", version, about = "Simulates NF chains scheduled on dedicated cores")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and print a run summary.
    Run(RunArgs),
    /// Measure one chain's latency/queue/rate curve over load thresholds.
    Profile(ProfileArgs),
    /// Print batch-multiplier planning per chain, cross-checking the
    /// closed form against an exhaustive scan.
    BatchCalc(BatchCalcArgs),
    /// Re-run a scenario over a swept parameter; one CSV row per value.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long, env = "QUAYSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory for run artifacts (metrics, plans, pool log, flow table).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep and write per-round execution traces.
    #[arg(long)]
    traces: bool,
    /// Keep and write every buffer-access ledger entry.
    #[arg(long)]
    ledger: bool,
    /// Keep and write one record per processed packet.
    #[arg(long)]
    departures: bool,
}

#[derive(Args)]
struct ProfileArgs {
    scenario: PathBuf,
    /// Chain to profile, by id.
    #[arg(long)]
    chain: String,
    #[arg(long, env = "QUAYSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Thresholds to sample (percent); defaults to the scenario's
    /// profiling config, or the standard 5..85 ladder.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    window_ms: u64,
    /// Write the curve as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchCalcArgs {
    scenario: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values the parameter takes, one run each.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, env = "QUAYSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV file for the sweep results.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepParam {
    /// Fixed per-core load threshold, percent.
    LoadThreshold,
    /// Every chain's p99 SLO, nanoseconds.
    Slo,
    /// Flow arrival rate, flows per second.
    FlowRate,
    /// Length of the first chain (repeats its last NF).
    ChainLength,
}

/// Errors that carry a specific exit code.
#[derive(Debug)]
enum CliFailure {
    Usage(String),
    SelfCheck(String),
}

impl fmt::Display for CliFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliFailure::Usage(m) | CliFailure::SelfCheck(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Profile(a) => cmd_profile(a),
        Cmd::BatchCalc(a) => cmd_batch_calc(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Several error types already embed their source in Display;
            // only append causes that add something new.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SimError>() {
            return match s {
                SimError::Spec(_) | SimError::Traffic(_) => 2,
                SimError::Conservation(_) | SimError::Profile(_) => 3,
            };
        }
        if cause.downcast_ref::<ScenarioError>().is_some() {
            return 2;
        }
        if let Some(f) = cause.downcast_ref::<CliFailure>() {
            return match f {
                CliFailure::Usage(_) => 2,
                CliFailure::SelfCheck(_) => 3,
            };
        }
    }
    1
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut scenario = load_scenario(&args.scenario)?;
    scenario.output.retain_traces |= args.traces;
    scenario.output.retain_ledger_entries |= args.ledger;
    scenario.output.retain_departures |= args.departures;
    let art = run_scenario(&scenario, args.seed)?;
    print_summary(&args.scenario, args.seed, &art);
    if let Some(dir) = &args.out {
        write_artifacts(dir, &scenario, &art)?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn print_summary(path: &Path, seed: u64, art: &RunArtifacts) {
    let r = &art.report;
    println!("run: {} (seed {seed}, {} ns simulated)", path.display(), r.duration_ns);
    println!();
    println!("{:<16} {:>10} {:>14} {:>6} {:>7}", "chain plan", "threshold", "max rate pps", "B_v", "slo ok");
    for p in &art.plans {
        println!(
            "{:<16} {:>9.1}% {:>14.0} {:>6} {:>7}",
            p.chain_id,
            p.threshold_pct,
            p.max_rate_pps,
            p.batch_multiplier,
            if p.slo_feasible { "yes" } else { "NO" }
        );
    }
    println!();
    println!(
        "totals: injected {}  processed {}  dropped {}  bypass {}  in-flight {}",
        r.injected, r.processed, r.dropped, r.bypass, r.in_flight_at_end
    );
    println!(
        "drops: vf-overflow {}  rejected {}  terminated {}",
        r.drops.vf_overflow, r.drops.rejected, r.drops.terminated
    );
    println!(
        "cores: avg {:.3}  max {}   monitor: {} accepted / {} suppressed",
        r.avg_cores, r.max_cores, r.monitor_accepted, r.monitor_suppressed
    );
    println!(
        "isolation violations: {}   copies: {}   context switches: {}   remote fetches: {}   sync ticks: {}",
        r.isolation_violations, r.copies, r.ctx_switches, r.remote_fetches, r.sync_ticks
    );
    println!();
    println!(
        "{:<16} {:>10} {:>10} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "chain", "injected", "processed", "loss", "p50 ns", "p99 ns", "p99.9 ns", "max ns"
    );
    for (id, c) in &r.per_chain {
        println!(
            "{:<16} {:>10} {:>10} {:>7.3}% {:>10} {:>10} {:>10} {:>10}",
            id,
            c.injected,
            c.processed,
            c.loss_rate * 100.0,
            c.p50_ns,
            c.p99_ns,
            c.p999_ns,
            c.max_latency_ns
        );
    }
    if !r.faults.is_empty() {
        println!();
        let list: Vec<String> = r.faults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("faults: {}", list.join(" "));
    }
}

fn write_artifacts(dir: &Path, scenario: &Scenario, art: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let chain_ids: Vec<String> =
        scenario.cluster.chains.iter().map(|c| c.chain_id.clone()).collect();

    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&art.report)?)?;
    write_metrics_csv(&art.report, File::create(dir.join("metrics.csv"))?)?;
    write_flow_table_csv(&art.flow_table, File::create(dir.join("flow_table.csv"))?)?;

    let mut plans = csv::Writer::from_writer(File::create(dir.join("plans.csv"))?);
    plans.write_record(["chain_id", "threshold_pct", "max_rate_pps", "batch_multiplier", "slo_feasible"])?;
    for p in &art.plans {
        plans.write_record([
            p.chain_id.clone(),
            format!("{}", p.threshold_pct),
            format!("{}", p.max_rate_pps),
            p.batch_multiplier.to_string(),
            p.slo_feasible.to_string(),
        ])?;
    }
    plans.flush()?;

    let mut pool = csv::Writer::from_writer(File::create(dir.join("pool.csv"))?);
    pool.write_record(["time_ns", "chain_id", "idle_len"])?;
    for s in &art.pool_log {
        pool.write_record([
            s.time_ns.to_string(),
            chain_ids[s.chain_idx].clone(),
            s.idle_len.to_string(),
        ])?;
    }
    pool.flush()?;

    if scenario.output.retain_traces {
        write_trace_csv(&art.traces, &chain_ids, File::create(dir.join("traces.csv"))?)?;
    }
    if scenario.output.retain_ledger_entries {
        for (i, ledger) in art.ledgers.iter().enumerate() {
            if ledger.entries().is_empty() {
                continue;
            }
            let name = format!("ledger_{i}.csv");
            write_ledger_csv(ledger, &chain_ids, File::create(dir.join(name))?)?;
        }
    }
    if scenario.output.retain_departures {
        let mut deps = csv::Writer::from_writer(File::create(dir.join("departures.csv"))?);
        deps.write_record([
            "packet_id", "chain_id", "src_ip", "src_port", "dst_ip", "dst_port", "proto",
            "arrival_ns", "departure_ns", "latency_ns",
        ])?;
        for d in &art.departures {
            deps.write_record([
                d.packet_id.to_string(),
                chain_ids[d.chain_idx].clone(),
                d.flow.src_ip.to_string(),
                d.flow.src_port.to_string(),
                d.flow.dst_ip.to_string(),
                d.flow.dst_port.to_string(),
                d.flow.proto.to_string(),
                d.arrival_ns.to_string(),
                d.departure_ns.to_string(),
                (d.departure_ns - d.arrival_ns).to_string(),
            ])?;
        }
        deps.flush()?;
    }
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cluster = &scenario.cluster;
    let idx = cluster
        .chains
        .iter()
        .position(|c| c.chain_id == args.chain)
        .ok_or_else(|| CliFailure::Usage(format!("no chain named {:?} in the scenario", args.chain)))?;
    let thresholds = if !args.thresholds.is_empty() {
        args.thresholds.clone()
    } else if let ThresholdSource::Profile { thresholds, .. } = &cluster.scaling.threshold {
        thresholds.clone()
    } else {
        default_profile_thresholds()
    };
    let curve = profile_chain(cluster, idx, &thresholds, args.window_ms * 1_000_000, args.seed)
        .map_err(SimError::Profile)?;

    println!("chain {:?} on worker {}:", args.chain, cluster.workers[0].worker_id);
    println!("{:>10} {:>12} {:>9} {:>14}", "threshold", "p99 ns", "max qlen", "rate pps");
    for r in curve.rows() {
        println!(
            "{:>9.1}% {:>12} {:>9} {:>14.0}",
            r.threshold_pct, r.p99_ns, r.max_qlen, r.rate_pps
        );
    }
    let slo = cluster.chains[idx].slo_p99_ns;
    let pick = pick_load_threshold(&curve, slo);
    println!(
        "single-core max rate {:.0} pps; for a {slo} ns SLO use {:.1}%{}",
        curve.max_rate_pps(),
        pick.threshold_pct,
        if pick.feasible { "" } else { " (SLO NOT attainable; lowest threshold shown)" }
    );
    if let Some(out) = &args.out {
        write_profile_curve_csv(&curve, File::create(out)?)?;
        println!("curve written to {}", out.display());
    }
    Ok(())
}

fn cmd_batch_calc(args: BatchCalcArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let cluster = &scenario.cluster;
    let reference = &cluster.workers[0];
    let params = BatchParams {
        freq_hz: reference.freq_hz,
        t_ctx_cycles: cluster.costs.t_ctx_cycles,
        avg_batch: reference.max_batch,
        target_ratio: cluster.costs.batch_ratio,
    };
    println!(
        "{:<16} {:>4} {:>12} {:>5} {:>14} {:>14} {:>9}",
        "chain", "nfs", "eff cycles", "B_v", "est rate pps", "ideal pps", "achieved"
    );
    let mut mismatch = None;
    for chain in &cluster.chains {
        let summary =
            effective_cost_summary(&chain.nfs, &cluster.costs, cluster.costs.reference_packet_size);
        let closed = min_batch(&summary, &params);
        let scanned = min_batch_scan(&summary, &params);
        if closed != scanned {
            mismatch = Some(format!(
                "{}: closed form B_v {closed} != scan {scanned}",
                chain.chain_id
            ));
        }
        let chosen = chain.batch_multiplier.unwrap_or(closed);
        let est = estimated_rate(&summary, &params, chosen);
        let ideal = ideal_rate(&summary, reference.freq_hz);
        println!(
            "{:<16} {:>4} {:>12} {:>4}{} {:>14.0} {:>14.0} {:>8.1}%",
            chain.chain_id,
            chain.nfs.len(),
            summary.sum_cycles(),
            chosen,
            if chain.batch_multiplier.is_some() { "*" } else { " " },
            est,
            ideal,
            est / ideal * 100.0
        );
    }
    if cluster.chains.iter().any(|c| c.batch_multiplier.is_some()) {
        println!("(* configured override)");
    }
    match mismatch {
        Some(m) => Err(CliFailure::SelfCheck(m).into()),
        None => Ok(()),
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_scenario(&args.scenario)?;
    let mut out = csv::Writer::from_writer(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    out.write_record([
        "param", "value", "seed", "threshold_pct", "batch_multiplier", "injected", "processed",
        "dropped", "bypass", "loss_pct", "worst_p99_ns", "avg_cores", "max_cores",
    ])?;
    for &value in &args.values {
        let mut s = base.clone();
        apply_sweep(&mut s, args.param, value)?;
        let art = run_scenario(&s, args.seed)?;
        let r = &art.report;
        let worst_p99 = r.per_chain.values().map(|c| c.p99_ns).max().unwrap_or(0);
        let loss = if r.injected > 0 {
            r.dropped as f64 / (r.injected - r.bypass).max(1) as f64 * 100.0
        } else {
            0.0
        };
        let param_name = args.param.to_possible_value().expect("no skipped variants");
        out.write_record([
            param_name.get_name().to_string(),
            format!("{value}"),
            args.seed.to_string(),
            format!("{}", art.plans[0].threshold_pct),
            art.plans[0].batch_multiplier.to_string(),
            r.injected.to_string(),
            r.processed.to_string(),
            r.dropped.to_string(),
            r.bypass.to_string(),
            format!("{loss:.4}"),
            worst_p99.to_string(),
            format!("{:.4}", r.avg_cores),
            r.max_cores.to_string(),
        ])?;
        eprintln!(
            "{:?}={value}: processed {} p99 {}ns avg cores {:.2}",
            args.param, r.processed, worst_p99, r.avg_cores
        );
    }
    out.flush()?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}

fn apply_sweep(s: &mut Scenario, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::LoadThreshold => {
            s.cluster.scaling.threshold = ThresholdSource::Fixed { pct: value };
        }
        SweepParam::Slo => {
            ensure_profiled_thresholds(&mut s.cluster);
            for c in &mut s.cluster.chains {
                c.slo_p99_ns = value as u64;
            }
        }
        SweepParam::FlowRate => s.traffic.flow_rate_per_s = value,
        SweepParam::ChainLength => {
            let n = value as usize;
            if n == 0 {
                return Err(CliFailure::Usage("chain length must be at least 1".into()).into());
            }
            let nfs = &mut s.cluster.chains[0].nfs;
            while nfs.len() > n {
                nfs.pop();
            }
            while nfs.len() < n {
                let mut clone = nfs.last().expect("chains are nonempty").clone();
                clone.name = format!("{}-x{}", clone.name, nfs.len());
                nfs.push(clone);
            }
        }
    }
    Ok(())
}

/// An SLO sweep under a fixed threshold would change nothing; switch to
/// profiled thresholds so the SLO actually drives the pick.
fn ensure_profiled_thresholds(cluster: &mut ClusterSpec) {
    if let ThresholdSource::Fixed { .. } = cluster.scaling.threshold {
        eprintln!("note: scenario uses a fixed threshold; profiling thresholds for the SLO sweep");
        cluster.scaling.threshold = ThresholdSource::Profile {
            thresholds: default_profile_thresholds(),
            window_ns: 200_000_000,
        };
    }
}
