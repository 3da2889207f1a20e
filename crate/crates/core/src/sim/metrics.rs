//! Delivery ratio, delay, throughput and the transmission counters.

/// Delivered over generated; 1.0 when nothing was generated.
pub fn compute_pdr(delivered: u64, generated: u64) -> f64 {
    assert!(delivered <= generated, "delivered {delivered} > generated {generated}");
    if generated == 0 {
        1.0
    } else {
        delivered as f64 / generated as f64
    }
}

/// Mean of `arrived - sent`; 0 for no deliveries.
pub fn compute_avg_delay(deliveries: &[(f64, f64)]) -> f64 {
    if deliveries.is_empty() {
        return 0.0;
    }
    let total: f64 = deliveries
        .iter()
        .map(|&(sent, arrived)| {
            let d = arrived - sent;
            assert!(d >= 0.0, "delivery at {arrived} precedes send at {sent}");
            d
        })
        .sum();
    total / deliveries.len() as f64
}

/// Mean per-flow goodput. Each entry is `(payload bits delivered, seconds the
/// flow was active)`; flows with no active time are left out.
pub fn compute_avg_throughput(flows: &[(u64, f64)]) -> f64 {
    let rates: Vec<f64> = flows.iter().filter(|f| f.1 > 0.0).map(|&(bits, secs)| bits as f64 / secs).collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// Cumulative transmission and fault counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub tx_data_frames: u64,
    pub tx_coded_frames: u64,
    pub coded_components_total: u64,
    pub tx_announce: u64,
    pub tx_ack: u64,
    pub tx_probe: u64,
    pub duplicate_forwards: u64,
    pub decode_failures: u64,
    pub drops: u64,
}

impl Counters {
    /// True if no counter is below its value in `earlier`.
    pub fn dominates(&self, earlier: &Counters) -> bool {
        let a = self.as_array();
        let b = earlier.as_array();
        a.iter().zip(b.iter()).all(|(x, y)| x >= y)
    }

    fn as_array(&self) -> [u64; 9] {
        [
            self.tx_data_frames,
            self.tx_coded_frames,
            self.coded_components_total,
            self.tx_announce,
            self.tx_ack,
            self.tx_probe,
            self.duplicate_forwards,
            self.decode_failures,
            self.drops,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub generated: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub avg_delay_s: f64,
    pub avg_throughput_bps: f64,
    pub counters: Counters,
}

/// One measurement row: an epoch that starts when a flow starts, or the
/// whole-run summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t_s: f64,
    pub flows_active: usize,
    pub report: MetricsReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdr() {
        assert_eq!(compute_pdr(90, 100), 0.9);
        assert_eq!(compute_pdr(0, 0), 1.0);
        assert_eq!(compute_pdr(0, 5), 0.0);
    }

    #[test]
    #[should_panic]
    fn pdr_rejects_more_delivered_than_generated() {
        compute_pdr(3, 2);
    }

    #[test]
    fn delay() {
        assert!((compute_avg_delay(&[(0.0, 0.010), (0.05, 0.070)]) - 0.015).abs() < 1e-15);
        assert_eq!(compute_avg_delay(&[]), 0.0);
    }

    #[test]
    #[should_panic]
    fn delay_rejects_time_travel() {
        compute_avg_delay(&[(1.0, 0.5)]);
    }

    #[test]
    fn throughput() {
        assert_eq!(compute_avg_throughput(&[(8_000_000, 100.0)]), 80_000.0);
        assert_eq!(compute_avg_throughput(&[(0, 10.0)]), 0.0);
        assert_eq!(compute_avg_throughput(&[]), 0.0);
        assert_eq!(compute_avg_throughput(&[(1000, 1.0), (3000, 1.0), (5, 0.0)]), 2000.0);
    }

    #[test]
    fn counter_dominance() {
        let a = Counters { tx_data_frames: 3, ..Counters::default() };
        let b = Counters { tx_data_frames: 4, drops: 1, ..Counters::default() };
        assert!(b.dominates(&a));
        assert!(!a.dominates(&b));
    }
}
