//! Metric computation over traces: response time, throughput, energy, and
//! the policy comparison tables.

use crate::config::SelectionPolicy;
use crate::trace::{NodeClass, Trace, TraceRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Response-time statistics over committed transactions. Absent when the
/// run committed nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseStats {
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyByClass {
    pub sensors_j: f64,
    pub heads_j: f64,
    pub validators_j: f64,
    pub total_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxCounts {
    pub created: u64,
    pub committed: u64,
    pub pending: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub fingerprint: String,
    pub seed: u64,
    pub policy: SelectionPolicy,
    pub duration_s: f64,
    pub response_time: Option<ResponseStats>,
    /// Committed transaction bytes per simulated second.
    pub throughput_bps: f64,
    pub energy_j: EnergyByClass,
    pub counts: TxCounts,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace is missing its META record")]
    MissingMeta,
    #[error("trace is missing its END record")]
    MissingEnd,
    #[error("reports come from different scenarios: {0} vs {1}")]
    ConfigMismatch(String, String),
}

/// Per committed transaction, delay from creation to commit. Uncommitted
/// transactions are excluded from the statistics but visible in the counts.
pub fn response_time_stats(trace: &Trace) -> Option<ResponseStats> {
    let mut created: BTreeMap<u64, f64> = BTreeMap::new();
    let mut delays: Vec<f64> = Vec::new();
    for r in &trace.records {
        match r {
            TraceRecord::TxCreated { t, tx, .. } => {
                created.insert(*tx, *t);
            }
            TraceRecord::TxCommitted { t, tx } => {
                if let Some(c) = created.get(tx) {
                    delays.push(t - c);
                }
            }
            _ => {}
        }
    }
    stats_from_delays(&mut delays)
}

fn stats_from_delays(delays: &mut [f64]) -> Option<ResponseStats> {
    if delays.is_empty() {
        return None;
    }
    delays.sort_by(|a, b| a.total_cmp(b));
    let n = delays.len();
    let mean = delays.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        delays[n / 2]
    } else {
        0.5 * (delays[n / 2 - 1] + delays[n / 2])
    };
    // nearest-rank percentile
    let p95_idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    Some(ResponseStats {
        mean_s: mean,
        median_s: median,
        p95_s: delays[p95_idx],
        max_s: delays[n - 1],
        count: n as u64,
    })
}

/// Committed transaction bytes over the simulated duration.
pub fn throughput(trace: &Trace) -> Result<f64, MetricsError> {
    let (_, _, _, duration, _) = trace.meta().ok_or(MetricsError::MissingMeta)?;
    if duration <= 0.0 {
        return Ok(0.0);
    }
    let bytes: u64 = trace
        .records
        .iter()
        .map(|r| match r {
            TraceRecord::Committed { bytes, .. } => *bytes,
            _ => 0,
        })
        .sum();
    Ok(bytes as f64 / duration)
}

/// Debits summed by node class. Validator energy isolates the consensus
/// network, the quantity the headline comparison uses; radio energy of the
/// sensing plane is reported alongside.
pub fn energy_report(trace: &Trace) -> EnergyByClass {
    let mut sensors = 0.0;
    let mut heads = 0.0;
    let mut validators = 0.0;
    for r in &trace.records {
        if let TraceRecord::Debit {
            class, amount_j, ..
        } = r
        {
            match class {
                NodeClass::Sensor => sensors += amount_j,
                NodeClass::Head => heads += amount_j,
                NodeClass::Validator => validators += amount_j,
            }
        }
    }
    EnergyByClass {
        sensors_j: sensors,
        heads_j: heads,
        validators_j: validators,
        total_j: sensors + heads + validators,
    }
}

pub fn report(trace: &Trace) -> Result<MetricsReport, MetricsError> {
    let (name, seed, policy, duration, fingerprint) =
        trace.meta().ok_or(MetricsError::MissingMeta)?;
    let counts = trace
        .records
        .iter()
        .find_map(|r| match r {
            TraceRecord::End {
                created,
                committed,
                pending,
                dropped,
            } => Some(TxCounts {
                created: *created,
                committed: *committed,
                pending: *pending,
                dropped: *dropped,
            }),
            _ => None,
        })
        .ok_or(MetricsError::MissingEnd)?;
    Ok(MetricsReport {
        scenario: name.to_string(),
        fingerprint: fingerprint.to_string(),
        seed,
        policy,
        duration_s: duration,
        response_time: response_time_stats(trace),
        throughput_bps: throughput(trace)?,
        energy_j: energy_report(trace),
        counts,
    })
}

/// One compared metric: baseline value, candidate value, and the delta as
/// a percentage of the baseline. Positive means the candidate improved on
/// the baseline for time/energy metrics and regressed for throughput; the
/// rendered header spells the convention out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub baseline: f64,
    pub candidate: f64,
    pub delta_pct: Option<f64>,
}

fn delta(baseline: f64, candidate: f64) -> MetricDelta {
    let delta_pct = if baseline != 0.0 {
        Some((baseline - candidate) / baseline * 100.0)
    } else {
        None
    };
    MetricDelta {
        baseline,
        candidate,
        delta_pct,
    }
}

/// Side-by-side comparison of two reports from the same scenario and seed,
/// differing only in selection policy. Deltas are percentages of the
/// first (baseline) report: delta% = (a - b) / a * 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fingerprint: String,
    pub seed: u64,
    pub baseline_policy: SelectionPolicy,
    pub candidate_policy: SelectionPolicy,
    pub mean_response: Option<MetricDelta>,
    pub validator_energy: MetricDelta,
    pub throughput: MetricDelta,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison, MetricsError> {
    if a.fingerprint != b.fingerprint || a.seed != b.seed {
        return Err(MetricsError::ConfigMismatch(
            format!("{}/seed{}", a.fingerprint, a.seed),
            format!("{}/seed{}", b.fingerprint, b.seed),
        ));
    }
    let mean_response = match (a.response_time, b.response_time) {
        (Some(ra), Some(rb)) => Some(delta(ra.mean_s, rb.mean_s)),
        _ => None,
    };
    Ok(Comparison {
        fingerprint: a.fingerprint.clone(),
        seed: a.seed,
        baseline_policy: a.policy,
        candidate_policy: b.policy,
        mean_response,
        validator_energy: delta(a.energy_j.validators_j, b.energy_j.validators_j),
        throughput: delta(a.throughput_bps, b.throughput_bps),
    })
}

/// Comma-separated comparison table over seeds, one row per seed plus a
/// mean row. The sign column is +1 when the candidate wins that seed
/// (lower response, lower validator energy, higher throughput).
pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut out = String::new();
    out.push_str(
        "seed,response_base_s,response_cand_s,response_delta_pct,response_sign,\
         venergy_base_j,venergy_cand_j,venergy_delta_pct,venergy_sign,\
         throughput_base_bps,throughput_cand_bps,throughput_delta_pct,throughput_sign\n",
    );
    let fmt = |d: Option<f64>| d.map_or("".to_string(), |v| format!("{v:.4}"));
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for c in rows {
        let (rb, rc, rd) = match c.mean_response {
            Some(m) => (m.baseline, m.candidate, m.delta_pct),
            None => (f64::NAN, f64::NAN, None),
        };
        let rsign = if rc < rb { 1 } else { -1 };
        let esign = if c.validator_energy.candidate < c.validator_energy.baseline {
            1
        } else {
            -1
        };
        let tsign = if c.throughput.candidate > c.throughput.baseline {
            1
        } else {
            -1
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{},{:.6},{:.6},{},{},{:.3},{:.3},{},{}\n",
            c.seed,
            rb,
            rc,
            fmt(rd),
            rsign,
            c.validator_energy.baseline,
            c.validator_energy.candidate,
            fmt(c.validator_energy.delta_pct),
            esign,
            c.throughput.baseline,
            c.throughput.candidate,
            fmt(c.throughput.delta_pct),
            tsign,
        ));
        if let Some(d) = rd {
            sums[0] += d;
            counts[0] += 1;
        }
        if let Some(d) = c.validator_energy.delta_pct {
            sums[1] += d;
            counts[1] += 1;
        }
        if let Some(d) = c.throughput.delta_pct {
            sums[2] += d;
            counts[2] += 1;
        }
    }
    if !rows.is_empty() {
        let mean = |i: usize| {
            if counts[i] > 0 {
                format!("{:.4}", sums[i] / counts[i] as f64)
            } else {
                String::new()
            }
        };
        out.push_str(&format!(
            "mean,,,{},,,,{},,,,{},\n",
            mean(0),
            mean(1),
            mean(2),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Trace;

    fn trace_with(policy: &str, lines: &str) -> Trace {
        let text = format!("META t 1 {policy} 30 fp\n{lines}END 0 0 0 0\n");
        Trace::parse(&text).unwrap()
    }

    #[test]
    fn response_stats_basic() {
        let lines = "TXC 0 0 0 10\nTXC 0 1 0 10\nTXC 0 2 0 10\nTXK 1 0\nTXK 2 1\nTXK 3 2\n";
        let s = response_time_stats(&trace_with("tbs", lines)).unwrap();
        assert_eq!(s.mean_s, 2.0);
        assert_eq!(s.median_s, 2.0);
        assert_eq!(s.max_s, 3.0);
        assert_eq!(s.count, 3);
    }

    #[test]
    fn single_commit_collapses_all_statistics() {
        let lines = "TXC 1 0 0 10\nTXK 3.5 0\n";
        let s = response_time_stats(&trace_with("tbs", lines)).unwrap();
        assert_eq!(s.mean_s, 2.5);
        assert_eq!(s.median_s, 2.5);
        assert_eq!(s.p95_s, 2.5);
        assert_eq!(s.max_s, 2.5);
    }

    #[test]
    fn no_commits_means_absent_statistics() {
        let lines = "TXC 1 0 0 10\n";
        assert!(response_time_stats(&trace_with("tbs", lines)).is_none());
    }

    #[test]
    fn throughput_counts_committed_bytes_over_duration() {
        // 3 blocks x 100 bytes over 30 s
        let lines = "CMT 5 1 1 100\nCMT 10 2 1 100\nCMT 15 3 1 100\n";
        let t = throughput(&trace_with("tbs", lines)).unwrap();
        assert!((t - 10.0).abs() < 1e-12);
        assert_eq!(throughput(&trace_with("tbs", "")).unwrap(), 0.0);
        let doubled = "CMT 5 1 1 200\nCMT 10 2 1 200\nCMT 15 3 1 200\n";
        let t2 = throughput(&trace_with("tbs", doubled)).unwrap();
        assert!((t2 - 2.0 * t).abs() < 1e-12);
    }

    #[test]
    fn energy_groups_by_class() {
        let lines = "NODE sensor 0 0 0 3\nDEBIT 1 sensor 0 0.5 radio_tx\nDEBIT 2 head 0 0.25 radio_rx\nDEBIT 3 validator 0 1.5 compute_busy\n";
        let e = energy_report(&trace_with("tbs", lines));
        assert_eq!(e.sensors_j, 0.5);
        assert_eq!(e.heads_j, 0.25);
        assert_eq!(e.validators_j, 1.5);
        assert_eq!(e.total_j, 2.25);
        assert_eq!(energy_report(&trace_with("tbs", "")).total_j, 0.0);
    }

    fn mk_report(
        policy: SelectionPolicy,
        seed: u64,
        mean: f64,
        venergy: f64,
        tput: f64,
    ) -> MetricsReport {
        MetricsReport {
            scenario: "s".into(),
            fingerprint: "fp".into(),
            seed,
            policy,
            duration_s: 30.0,
            response_time: Some(ResponseStats {
                mean_s: mean,
                median_s: mean,
                p95_s: mean,
                max_s: mean,
                count: 1,
            }),
            throughput_bps: tput,
            energy_j: EnergyByClass {
                sensors_j: 0.0,
                heads_j: 0.0,
                validators_j: venergy,
                total_j: venergy,
            },
            counts: TxCounts {
                created: 1,
                committed: 1,
                pending: 0,
                dropped: 0,
            },
        }
    }

    #[test]
    fn compare_matches_headline_arithmetic() {
        let a = mk_report(SelectionPolicy::Tbs, 1, 2.0, 100.0, 50.0);
        let b = mk_report(SelectionPolicy::Wbs, 1, 1.7, 92.0, 56.0);
        let c = compare(&a, &b).unwrap();
        assert!((c.mean_response.unwrap().delta_pct.unwrap() - 15.0).abs() < 1e-9);
        assert!((c.validator_energy.delta_pct.unwrap() - 8.0).abs() < 1e-9);
        assert!((c.throughput.delta_pct.unwrap() + 12.0).abs() < 1e-9);
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let a = mk_report(SelectionPolicy::Tbs, 1, 2.0, 100.0, 50.0);
        let c = compare(&a, &a).unwrap();
        assert_eq!(c.mean_response.unwrap().delta_pct, Some(0.0));
        assert_eq!(c.validator_energy.delta_pct, Some(0.0));
        assert_eq!(c.throughput.delta_pct, Some(0.0));
    }

    #[test]
    fn compare_flips_sign_with_argument_order() {
        let a = mk_report(SelectionPolicy::Tbs, 1, 2.0, 100.0, 50.0);
        let b = mk_report(SelectionPolicy::Wbs, 1, 1.7, 92.0, 56.0);
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        let sa = ab.mean_response.unwrap().delta_pct.unwrap().signum();
        let sb = ba.mean_response.unwrap().delta_pct.unwrap().signum();
        assert_eq!(sa, -sb);
    }

    #[test]
    fn compare_refuses_different_scenarios() {
        let a = mk_report(SelectionPolicy::Tbs, 1, 2.0, 100.0, 50.0);
        let mut b = mk_report(SelectionPolicy::Wbs, 1, 1.7, 92.0, 56.0);
        b.fingerprint = "other".into();
        assert!(matches!(
            compare(&a, &b),
            Err(MetricsError::ConfigMismatch(..))
        ));
        let mut c = mk_report(SelectionPolicy::Wbs, 2, 1.7, 92.0, 56.0);
        c.fingerprint = "fp".into();
        assert!(compare(&a, &c).is_err());
    }

    #[test]
    fn report_recomputation_is_stable() {
        let lines =
            "NODE sensor 0 0 0 3\nTXC 1 0 0 100\nTXA 2 0\nTXK 3 0\nDEBIT 1 sensor 0 0.5 radio_tx\n";
        let text = format!("META t 1 wbs 30 fp\n{lines}END 1 1 0 0\n");
        let trace = Trace::parse(&text).unwrap();
        assert_eq!(report(&trace).unwrap(), report(&trace).unwrap());
    }
}
