use serde::{Deserialize, Serialize};

use crate::consensus::Protocol;
use crate::patterns::{FrameCounts, Mechanism};

/// One trial of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Row number in the sweep.
    pub index: usize,
    pub protocol: Protocol,
    pub mechanism: Mechanism,
    pub alpha: f64,
    pub nodes: u32,
    pub clusters: u32,
    pub trial: u32,
    pub seed: u64,
    pub decisions: u64,
    pub latency_mean_slots: Option<f64>,
    pub latency_median_slots: Option<f64>,
    pub latency_mean_s: Option<f64>,
    pub latency_median_s: Option<f64>,
    /// Decisions per minute of simulated time.
    pub tpm: f64,
    pub frames_data: u64,
    pub frames_ack: u64,
    pub frames_nack: u64,
    pub frames_total: u64,
    pub retransmissions: u64,
    pub view_changes: u64,
    pub pattern_failures: u64,
    pub slots: u64,
    pub budget_exceeded: bool,
    pub safety_violations: u64,
    /// Multi-hop only: globally ordered digests missing from every local log.
    pub invalid_global_entries: u64,
    pub config_hash: String,
    pub version: String,
}

impl MetricsRecord {
    pub(crate) fn set_frames(&mut self, frames: &FrameCounts) {
        self.frames_data = frames.data;
        self.frames_ack = frames.ack;
        self.frames_nack = frames.nack;
        self.frames_total = frames.total();
    }

    pub(crate) fn set_latencies(&mut self, latencies: &[u64], slot_seconds: f64) {
        let mean = mean(latencies);
        let median = median(latencies);
        self.latency_mean_slots = mean;
        self.latency_median_slots = median;
        self.latency_mean_s = mean.map(|m| m * slot_seconds);
        self.latency_median_s = median.map(|m| m * slot_seconds);
    }
}

pub(crate) fn tpm(decisions: u64, slots: u64, slot_seconds: f64) -> f64 {
    if slots == 0 {
        return 0.0;
    }
    decisions as f64 / (slots as f64 * slot_seconds / 60.0)
}

fn mean(xs: &[u64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<u64>() as f64 / xs.len() as f64)
}

fn median(xs: &[u64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) as f64 / 2.0
    } else {
        v[mid] as f64
    })
}

/// Mean and standard error over the trials of one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: Protocol,
    pub mechanism: Mechanism,
    pub alpha: f64,
    pub trials: usize,
    pub latency_mean: f64,
    pub latency_stderr: f64,
    pub tpm_mean: f64,
    pub tpm_stderr: f64,
    pub frames_mean: f64,
    pub view_changes_mean: f64,
    pub budget_exceeded: usize,
    pub safety_violations: u64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Groups records by point in first-seen order. Trials that never decided
/// are left out of the latency mean but count towards throughput.
pub fn summarize(records: &[MetricsRecord]) -> Vec<Summary> {
    let mut keys: Vec<(Protocol, Mechanism, u64)> = Vec::new();
    for r in records {
        let key = (r.protocol, r.mechanism, r.alpha.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(protocol, mechanism, alpha)| {
            let rows: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| (r.protocol, r.mechanism, r.alpha.to_bits()) == (protocol, mechanism, alpha))
                .collect();
            let lat: Vec<f64> = rows.iter().filter_map(|r| r.latency_mean_slots).collect();
            let tpm: Vec<f64> = rows.iter().map(|r| r.tpm).collect();
            let frames: Vec<f64> = rows.iter().map(|r| r.frames_total as f64).collect();
            let vcs: Vec<f64> = rows.iter().map(|r| r.view_changes as f64).collect();
            let (latency_mean, latency_stderr) = mean_stderr(&lat);
            let (tpm_mean, tpm_stderr) = mean_stderr(&tpm);
            Summary {
                protocol,
                mechanism,
                alpha: f64::from_bits(alpha),
                trials: rows.len(),
                latency_mean,
                latency_stderr,
                tpm_mean,
                tpm_stderr,
                frames_mean: mean_stderr(&frames).0,
                view_changes_mean: mean_stderr(&vcs).0,
                budget_exceeded: rows.iter().filter(|r| r.budget_exceeded).count(),
                safety_violations: rows.iter().map(|r| r.safety_violations).sum(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians_and_means() {
        assert_eq!(median(&[3, 1, 2]), Some(2.0));
        assert_eq!(median(&[4, 1, 2, 3]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(mean(&[1, 2]), Some(1.5));
    }

    #[test]
    fn throughput_in_decisions_per_minute() {
        // 3 decisions in 90 one-second slots
        assert!((tpm(3, 90, 1.0) - 2.0).abs() < 1e-12);
        assert!((tpm(3, 90, 0.5) - 4.0).abs() < 1e-12);
        assert_eq!(tpm(3, 0, 1.0), 0.0);
    }

    #[test]
    fn standard_error_of_a_sample() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, divided by n and rooted
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }
}
