//! Controller-side logic: monitor-update gating, load accounting, profile
//! curves, and threshold selection against an SLO.
//!
//! The scaling loops themselves (Listing-1 style attach/detach and pool
//! maintenance) run inside the simulation engine; this module holds the
//! pure decision rules they call.

use thiserror::Error;

use crate::types::{Cycles, InstanceId, TimeNs};

/// One instance's monitored stats for a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStats {
    pub instance: InstanceId,
    /// Windowed average processing rate, packets per second.
    pub packet_rate: f64,
    pub queue_len: usize,
    /// Sampled per-batch execution cost.
    pub per_batch_exec: Cycles,
    pub last_report: TimeNs,
}

/// Suppresses insignificant stats updates on the monitoring side.
///
/// A report is significant when the rate moved by at least `epsilon`
/// relative to the last *accepted* rate (so slow drift still reports once
/// it accumulates), or when the queue length crosses the alert mark.
#[derive(Debug, Clone, Copy, Default)]
pub struct MonitorGate {
    last_rate: f64,
    queue_above: bool,
    pub accepted: u64,
    pub suppressed: u64,
}

impl MonitorGate {
    pub fn on_stats_update(&mut self, stats: &ChainStats, epsilon: f64, queue_alert_len: usize) -> bool {
        let delta = (stats.packet_rate - self.last_rate).abs();
        let rel = delta / stats.packet_rate.max(1.0);
        let above = stats.queue_len >= queue_alert_len;
        let crossed = above != self.queue_above;
        if rel >= epsilon || crossed {
            self.last_rate = stats.packet_rate;
            self.queue_above = above;
            self.accepted += 1;
            true
        } else {
            self.suppressed += 1;
            false
        }
    }
}

/// Load fraction of an instance: rate over the chain's single-core max,
/// clamped to [0, 1.5] for reporting.
pub fn chain_load(packet_rate: f64, max_rate: f64) -> f64 {
    assert!(max_rate > 0.0, "max_rate must be positive");
    (packet_rate / max_rate).clamp(0.0, 1.5)
}

pub use crate::sim::profile::profile_chain;

/// One profiled operating point of a chain on a single core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub threshold_pct: f64,
    pub p99_ns: TimeNs,
    pub max_qlen: usize,
    pub rate_pps: f64,
}

/// Latency/queue/rate curve over load thresholds, rows strictly increasing
/// in threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileCurve {
    rows: Vec<ProfileRow>,
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("profile curve is empty")]
    Empty,
    #[error("profile thresholds must be strictly increasing")]
    NotIncreasing,
    #[error("curve csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("curve csv field: {0}")]
    Field(String),
}

impl ProfileCurve {
    pub fn new(rows: Vec<ProfileRow>) -> Result<Self, CurveError> {
        if rows.is_empty() {
            return Err(CurveError::Empty);
        }
        if !rows.windows(2).all(|w| w[0].threshold_pct < w[1].threshold_pct) {
            return Err(CurveError::NotIncreasing);
        }
        Ok(ProfileCurve { rows })
    }

    pub fn rows(&self) -> &[ProfileRow] {
        &self.rows
    }

    /// Single-core maximum packet rate implied by the curve: the top
    /// threshold row ran at `threshold_pct` percent of saturation, so its
    /// measured rate scales back to 100%.
    pub fn max_rate_pps(&self) -> f64 {
        let top = self.rows.last().expect("curve is never empty");
        top.rate_pps * 100.0 / top.threshold_pct
    }
}

/// Outcome of matching a curve against an SLO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPick {
    pub threshold_pct: f64,
    /// False when even the lowest threshold misses the SLO; the pick is
    /// then the minimum threshold and callers should record a warning.
    pub feasible: bool,
}

/// Picks the highest load threshold whose profiled p99 stays within the
/// SLO; infeasible SLOs fall back to the minimum threshold.
pub fn pick_load_threshold(curve: &ProfileCurve, slo_p99: TimeNs) -> ThresholdPick {
    let mut pick = None;
    for row in curve.rows() {
        if row.p99_ns <= slo_p99 {
            pick = Some(row.threshold_pct);
        }
    }
    match pick {
        Some(threshold_pct) => ThresholdPick { threshold_pct, feasible: true },
        None => ThresholdPick { threshold_pct: curve.rows()[0].threshold_pct, feasible: false },
    }
}

/// How many idle instances the pool is short of the lower bound.
pub fn pool_deficit(idle_len: usize, scale_out_thresh: u32) -> u32 {
    (scale_out_thresh as usize).saturating_sub(idle_len) as u32
}

/// How many idle instances sit above the upper bound.
pub fn pool_excess(idle_len: usize, scale_in_thresh: u32) -> u32 {
    idle_len.saturating_sub(scale_in_thresh as usize) as u32
}

/// Writes a curve as CSV in the format `pick_load_threshold` consumes.
pub fn write_profile_curve_csv<W: std::io::Write>(curve: &ProfileCurve, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold_pct", "p99_ns", "max_qlen", "rate_pps"])?;
    for r in curve.rows() {
        out.write_record([
            format!("{}", r.threshold_pct),
            r.p99_ns.to_string(),
            r.max_qlen.to_string(),
            format!("{}", r.rate_pps),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a curve from the CSV format written above.
pub fn read_profile_curve_csv<R: std::io::Read>(r: R) -> Result<ProfileCurve, CurveError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, CurveError> {
            rec.get(i).ok_or_else(|| CurveError::Field(format!("missing column {i}")))
        };
        rows.push(ProfileRow {
            threshold_pct: field(0)?.parse().map_err(|e| CurveError::Field(format!("{e}")))?,
            p99_ns: field(1)?.parse().map_err(|e| CurveError::Field(format!("{e}")))?,
            max_qlen: field(2)?.parse().map_err(|e| CurveError::Field(format!("{e}")))?,
            rate_pps: field(3)?.parse().map_err(|e| CurveError::Field(format!("{e}")))?,
        });
    }
    ProfileCurve::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(rate: f64, qlen: usize) -> ChainStats {
        ChainStats {
            instance: 0,
            packet_rate: rate,
            queue_len: qlen,
            per_batch_exec: 0,
            last_report: 0,
        }
    }

    fn curve_us(points: &[(f64, u64)]) -> ProfileCurve {
        ProfileCurve::new(
            points
                .iter()
                .map(|(t, us)| ProfileRow {
                    threshold_pct: *t,
                    p99_ns: us * 1000,
                    max_qlen: 10,
                    rate_pps: 9000.0 * t,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tiny_rate_change_is_suppressed() {
        let mut gate = MonitorGate::default();
        assert!(gate.on_stats_update(&stats(100_000.0, 0), 0.05, 64));
        assert!(!gate.on_stats_update(&stats(100_100.0, 0), 0.05, 64), "0.1% move");
        assert_eq!(gate.suppressed, 1);
    }

    #[test]
    fn queue_mark_crossing_always_reports() {
        let mut gate = MonitorGate::default();
        gate.on_stats_update(&stats(100_000.0, 0), 0.05, 64);
        assert!(gate.on_stats_update(&stats(100_000.0, 64), 0.05, 64));
        assert!(!gate.on_stats_update(&stats(100_000.0, 70), 0.05, 64), "still above, no crossing");
        assert!(gate.on_stats_update(&stats(100_000.0, 10), 0.05, 64), "crossing back down");
    }

    #[test]
    fn constant_traffic_reports_at_most_once() {
        let mut gate = MonitorGate::default();
        let mut accepted = 0;
        for _ in 0..10 {
            if gate.on_stats_update(&stats(250_000.0, 3), 0.05, 64) {
                accepted += 1;
            }
        }
        assert_eq!(accepted, 1);
        assert_eq!(gate.suppressed, 9);
    }

    #[test]
    fn slow_drift_eventually_reports() {
        let mut gate = MonitorGate::default();
        gate.on_stats_update(&stats(100_000.0, 0), 0.05, 64);
        let mut reported = false;
        for step in 1..=10 {
            let rate = 100_000.0 * (1.0 + 0.01 * step as f64);
            if gate.on_stats_update(&stats(rate, 0), 0.05, 64) {
                reported = true;
                break;
            }
        }
        assert!(reported, "cumulative drift must cross epsilon");
    }

    #[test]
    fn load_is_rate_over_max_clamped() {
        assert_eq!(chain_load(450_000.0, 900_000.0), 0.5);
        assert_eq!(chain_load(0.0, 900_000.0), 0.0);
        assert_eq!(chain_load(900_000.0, 900_000.0), 1.0);
        assert_eq!(chain_load(9_000_000.0, 900_000.0), 1.5);
    }

    #[test]
    fn threshold_pick_scans_for_highest_fit() {
        let curve = curve_us(&[(25.0, 40), (50.0, 70), (80.0, 150)]);
        let pick = pick_load_threshold(&curve, 100_000);
        assert_eq!(pick.threshold_pct, 50.0);
        assert!(pick.feasible);

        let all = pick_load_threshold(&curve, 1_000_000);
        assert_eq!(all.threshold_pct, 80.0);

        let none = pick_load_threshold(&curve, 10_000);
        assert_eq!(none.threshold_pct, 25.0);
        assert!(!none.feasible);
    }

    #[test]
    fn curve_rejects_bad_shapes() {
        assert!(matches!(ProfileCurve::new(vec![]), Err(CurveError::Empty)));
        let rows = vec![
            ProfileRow { threshold_pct: 50.0, p99_ns: 1, max_qlen: 1, rate_pps: 1.0 },
            ProfileRow { threshold_pct: 50.0, p99_ns: 2, max_qlen: 2, rate_pps: 2.0 },
        ];
        assert!(matches!(ProfileCurve::new(rows), Err(CurveError::NotIncreasing)));
    }

    #[test]
    fn max_rate_scales_top_row_to_full_load() {
        let curve = curve_us(&[(25.0, 40), (85.0, 150)]);
        let top_rate = curve.rows().last().unwrap().rate_pps;
        assert!((curve.max_rate_pps() - top_rate * 100.0 / 85.0).abs() < 1e-9);
    }

    #[test]
    fn pool_bounds_arithmetic() {
        assert_eq!(pool_deficit(0, 2), 2);
        assert_eq!(pool_deficit(3, 2), 0);
        assert_eq!(pool_excess(5, 3), 2);
        assert_eq!(pool_excess(2, 3), 0);
    }

    #[test]
    fn curve_csv_round_trips() {
        let curve = curve_us(&[(10.0, 20), (50.0, 70), (85.0, 151)]);
        let mut bytes = Vec::new();
        write_profile_curve_csv(&curve, &mut bytes).unwrap();
        let back = read_profile_curve_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, curve);
    }
}
