use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};

/// Per-query latencies in whole microseconds against a threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyMonitor {
    samples: Vec<u64>,
    threshold_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyReport {
    pub count: usize,
    pub avg_us: f64,
    pub max_us: u64,
    pub p95_us: u64,
    pub threshold_us: u64,
    /// `avg_us < threshold_us`, strictly.
    pub within_threshold: bool,
}

impl LatencyMonitor {
    pub fn new(threshold_us: u64) -> Self {
        LatencyMonitor {
            samples: Vec::new(),
            threshold_us,
        }
    }

    pub fn record(&mut self, latency: Duration) {
        self.record_us(latency.as_micros() as u64);
    }

    pub fn record_us(&mut self, us: u64) {
        self.samples.push(us);
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    /// p95 is the nearest-rank percentile: the `⌈0.95·n⌉`-th smallest sample.
    pub fn report(&self) -> Result<LatencyReport> {
        if self.samples.is_empty() {
            return Err(Error::NoSamples);
        }
        let n = self.samples.len();
        let avg = self.samples.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let rank = (0.95 * n as f64).ceil() as usize;
        Ok(LatencyReport {
            count: n,
            avg_us: avg,
            max_us: sorted[n - 1],
            p95_us: sorted[rank.max(1) - 1],
            threshold_us: self.threshold_us,
            within_threshold: avg < self.threshold_us as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_boundary() {
        let mut m = LatencyMonitor::new(25);
        for us in [10, 20, 30] {
            m.record_us(us);
        }
        let r = m.report().unwrap();
        assert_eq!(r.avg_us, 20.0);
        assert_eq!(r.max_us, 30);
        assert!(r.within_threshold);

        let mut m = LatencyMonitor::new(40);
        m.record(Duration::from_micros(40));
        assert!(!m.report().unwrap().within_threshold);
        assert!(matches!(LatencyMonitor::new(1).report(), Err(Error::NoSamples)));
    }

    #[test]
    fn p95_nearest_rank() {
        let mut m = LatencyMonitor::new(0);
        for us in (1..=100).rev() {
            m.record_us(us);
        }
        assert_eq!(m.report().unwrap().p95_us, 95);
    }

    proptest::proptest! {
        #[test]
        fn report_matches_naive_statistics(
            samples in proptest::collection::vec(0u64..1_000_000, 1000),
            threshold in 0u64..1_000_000,
        ) {
            let mut m = LatencyMonitor::new(threshold);
            for &s in &samples {
                m.record_us(s);
            }
            let r = m.report().unwrap();
            let mean = samples.iter().sum::<u64>() as f64 / 1000.0;
            let mut sorted = samples.clone();
            sorted.sort();
            proptest::prop_assert!((r.avg_us - mean).abs() < 1e-6);
            proptest::prop_assert_eq!(r.max_us, *samples.iter().max().unwrap());
            proptest::prop_assert_eq!(r.p95_us, sorted[949]);
            proptest::prop_assert_eq!(r.within_threshold, mean < threshold as f64);
        }
    }
}
