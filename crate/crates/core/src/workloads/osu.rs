//! OSU-style point-to-point micro-benchmarks over the α-β model.
//!
//! Latency is measured ping-pong style: the reported value is half the
//! round trip, averaged over the repetitions. Bandwidth sends a window of
//! back-to-back messages and waits for a single reply.

use rand::Rng;

use crate::fabric::{entity_rng, InterconnectModel};

pub const DEFAULT_MAX_BYTES: u64 = 4 * 1024 * 1024;
pub const DEFAULT_WINDOW: u64 = 64;
pub const DEFAULT_REPETITIONS: u32 = 1000;

/// `0, 1, 2, 4, ... max_bytes`.
pub fn latency_sizes(max_bytes: u64) -> Vec<u64> {
    let mut v = vec![0];
    v.extend(bandwidth_sizes(max_bytes));
    v
}

/// `1, 2, 4, ... max_bytes`.
pub fn bandwidth_sizes(max_bytes: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |s| s.checked_mul(2)).take_while(|s| *s <= max_bytes).collect()
}

/// Optional multiplicative jitter on each round trip, uniform in
/// `[1 - relative, 1 + relative]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub seed: u64,
    pub relative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthRow {
    pub bytes: u64,
    pub bytes_per_second: f64,
}

pub fn osu_latency(model: &InterconnectModel, sizes: &[u64], repetitions: u32, noise: Option<Noise>) -> Vec<LatencyRow> {
    assert!(!sizes.is_empty(), "sizes must be nonempty");
    let reps = repetitions.max(1);
    sizes
        .iter()
        .map(|&bytes| {
            let round_trip = 2.0 * model.comm_time(bytes);
            let seconds = match noise {
                None => round_trip / 2.0,
                Some(n) => {
                    let mut rng = entity_rng(n.seed, "osu-latency", &format!("{}:{bytes}", model.name));
                    let total: f64 = (0..reps)
                        .map(|_| round_trip * (1.0 + n.relative * rng.gen_range(-1.0..=1.0)))
                        .sum();
                    total / reps as f64 / 2.0
                }
            };
            LatencyRow { bytes, seconds }
        })
        .collect()
}

pub fn osu_bandwidth(model: &InterconnectModel, sizes: &[u64], window: u64) -> Vec<BandwidthRow> {
    assert!(window >= 1, "window must be at least 1");
    sizes
        .iter()
        .map(|&bytes| {
            let payload = (window * bytes) as f64;
            BandwidthRow { bytes, bytes_per_second: payload / (model.alpha + payload / model.beta) }
        })
        .collect()
}

/// Simulated wall time of a latency run: every repetition is one round trip.
pub fn latency_run_seconds(model: &InterconnectModel, sizes: &[u64], repetitions: u32) -> f64 {
    sizes.iter().map(|&b| 2.0 * model.comm_time(b) * repetitions as f64).sum()
}

/// Simulated wall time of a bandwidth run: each repetition streams one
/// window and waits for a zero-byte reply.
pub fn bandwidth_run_seconds(model: &InterconnectModel, sizes: &[u64], window: u64, repetitions: u32) -> f64 {
    sizes
        .iter()
        .map(|&b| (model.alpha + (window * b) as f64 / model.beta + model.comm_time(0)) * repetitions as f64)
        .sum()
}

pub fn latency_tsv(model: &InterconnectModel, rows: &[LatencyRow]) -> String {
    let mut out = format!("# OSU MPI Latency Test (alpha-beta model, {})\n# Size\tLatency (us)\n", model.name);
    for r in rows {
        out.push_str(&format!("{}\t{:.2}\n", r.bytes, r.seconds * 1e6));
    }
    out
}

pub fn bandwidth_tsv(model: &InterconnectModel, rows: &[BandwidthRow]) -> String {
    let mut out = format!("# OSU MPI Bandwidth Test (alpha-beta model, {})\n# Size\tBandwidth (MB/s)\n", model.name);
    for r in rows {
        out.push_str(&format!("{}\t{:.2}\n", r.bytes, r.bytes_per_second / 1e6));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let s = latency_sizes(DEFAULT_MAX_BYTES);
        assert_eq!(s.len(), 24);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 4 << 20);
        assert_eq!(bandwidth_sizes(1), vec![1]);
    }

    #[test]
    fn zero_bytes_window_one_is_zero_bandwidth() {
        let r = osu_bandwidth(&InterconnectModel::azure(), &[0], 1);
        assert_eq!(r[0].bytes_per_second, 0.0);
    }

    #[test]
    fn noise_is_seeded_and_centred() {
        let m = InterconnectModel::azure();
        let n = Some(Noise { seed: 3, relative: 0.1 });
        let a = osu_latency(&m, &[0, 1024], 2000, n);
        let b = osu_latency(&m, &[0, 1024], 2000, n);
        assert_eq!(a, b);
        assert!((a[0].seconds / 1.95e-6 - 1.0).abs() < 0.01);
    }

    #[test]
    fn tables_follow_osu_layout() {
        let m = InterconnectModel::colonial_one();
        let t = latency_tsv(&m, &osu_latency(&m, &[0], 1, None));
        assert_eq!(t.lines().nth(2), Some("0\t1.25"));
        let t = bandwidth_tsv(&m, &osu_bandwidth(&m, &[1], 1));
        assert!(t.lines().nth(1).unwrap().contains("MB/s"));
    }
}
