//! Per-id inter-arrival z-score detector.
//!
//! A baseline batch fixes, for every CAN id, the mean and standard deviation
//! of inter-arrival gaps. A later batch is cut into fixed windows; a window
//! whose mean gap departs from the baseline by more than `z_threshold`
//! standard errors is reported.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::LogBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean_us: f64,
    pub stdev_us: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub can_id: u16,
    pub window: (u64, u64),
    pub mean_gap_us: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterArrivalDetector {
    baseline: BTreeMap<u16, GapStats>,
    pub z_threshold: f64,
    pub window_us: u64,
}

fn gaps_by_id(batch: &LogBatch) -> HashMap<u16, Vec<u64>> {
    let mut times: HashMap<u16, Vec<u64>> = HashMap::new();
    for r in &batch.records {
        times.entry(r.can_id).or_default().push(r.timestamp_us);
    }
    times
}

impl InterArrivalDetector {
    pub fn train(baseline: &LogBatch, z_threshold: f64, window_us: u64) -> Self {
        let mut stats = BTreeMap::new();
        for (id, t) in gaps_by_id(baseline) {
            if t.len() < 3 {
                continue;
            }
            let gaps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
            let n = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
            stats.insert(
                id,
                GapStats {
                    mean_us: mean,
                    stdev_us: var.sqrt(),
                    samples: gaps.len(),
                },
            );
        }
        Self {
            baseline: stats,
            z_threshold,
            window_us: window_us.max(1),
        }
    }

    pub fn baseline(&self, can_id: u16) -> Option<GapStats> {
        self.baseline.get(&can_id).copied()
    }

    pub fn detect(&self, batch: &LogBatch) -> Vec<Anomaly> {
        let mut out = Vec::new();
        let by_id = gaps_by_id(batch);
        for (&id, base) in &self.baseline {
            let Some(times) = by_id.get(&id) else { continue };
            let mut start = 0usize;
            while start + 1 < times.len() {
                let w0 = times[start] / self.window_us * self.window_us;
                let w1 = w0 + self.window_us;
                let mut end = start;
                while end < times.len() && times[end] < w1 {
                    end += 1;
                }
                let n = end - start;
                if n >= 3 {
                    let mean = (times[end - 1] - times[start]) as f64 / (n - 1) as f64;
                    let se = base.stdev_us.max(base.mean_us * 0.01) / ((n - 1) as f64).sqrt();
                    let z = (mean - base.mean_us) / se;
                    if z.abs() > self.z_threshold {
                        out.push(Anomaly {
                            can_id: id,
                            window: (w0, w1),
                            mean_gap_us: mean,
                            z_score: z,
                        });
                    }
                }
                start = end.max(start + 1);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siem::{generate_synthetic_logs, Flood, SyntheticLogConfig};

    #[test]
    fn flags_flood_windows_only() {
        let clean = generate_synthetic_logs(&SyntheticLogConfig::new(1, 60, 2_000_000)).unwrap();
        let det = InterArrivalDetector::train(&clean, 6.0, 1_000_000);
        let other = generate_synthetic_logs(&SyntheticLogConfig::new(9, 60, 2_000_000)).unwrap();
        assert!(det.detect(&other).is_empty());
        let flooded = generate_synthetic_logs(&SyntheticLogConfig::new(9, 60, 2_000_000).with_flood(Flood {
            can_id: 0x130,
            rate_hz: 200.0,
            start_s: 20.0,
            end_s: 30.0,
        }))
        .unwrap();
        let found = det.detect(&flooded);
        assert!(!found.is_empty());
        assert!(found.iter().all(|a| a.can_id == 0x130 && a.z_score < 0.0));
        assert!(found.iter().all(|a| a.window.0 >= 19_000_000 && a.window.1 <= 31_000_000));
    }
}
