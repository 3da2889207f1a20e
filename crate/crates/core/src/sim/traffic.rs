//! Constant-bit-rate flows and the seeded flow-pair generator.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::topology::{NodeId, Topology};

pub const DEFAULT_PAYLOAD_BYTES: u16 = 1000;
pub const DEFAULT_INTERVAL_S: f64 = 0.05;
pub const FIRST_FLOW_START_S: f64 = 30.0;
pub const FLOW_START_STEP_S: f64 = 20.0;
/// Run length past the last flow start.
pub const TAIL_S: f64 = 60.0;
/// Flows stop this long before the end so in-flight packets can land.
pub const DRAIN_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_bytes: u16,
    pub interval_s: f64,
    pub start_s: f64,
    /// Defaults to the run length minus [`DRAIN_S`].
    pub stop_s: Option<f64>,
    /// Stop after this many packets.
    pub count: Option<u32>,
}

impl FlowSpec {
    pub fn new(src: NodeId, dst: NodeId, start_s: f64) -> Self {
        FlowSpec {
            src,
            dst,
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            interval_s: DEFAULT_INTERVAL_S,
            start_s,
            stop_s: None,
            count: None,
        }
    }

    pub fn stop_at(&self, duration: f64) -> f64 {
        self.stop_s.unwrap_or(duration - DRAIN_S).min(duration)
    }

    /// Seconds during which the flow may generate packets.
    pub fn active_duration(&self, duration: f64) -> f64 {
        let stop = self.stop_at(duration);
        let stop = match self.count {
            Some(c) => stop.min(self.start_s + c as f64 * self.interval_s),
            None => stop,
        };
        (stop - self.start_s).max(0.0)
    }
}

/// Start time of the `k`-th flow (0-based) in the default schedule.
pub fn default_start(k: usize) -> f64 {
    FIRST_FLOW_START_S + FLOW_START_STEP_S * k as f64
}

/// Default run length: last flow start plus [`TAIL_S`].
pub fn default_duration(flows: &[FlowSpec]) -> f64 {
    flows.iter().map(|f| f.start_s).fold(0.0, f64::max) + TAIL_S
}

/// Hop counts over usable links from `src`; `None` where unreachable.
pub fn hop_distances(topo: &Topology, src: NodeId) -> Vec<Option<usize>> {
    let mut dist = vec![None; topo.node_count()];
    dist[src.index()] = Some(0);
    let mut frontier = VecDeque::from([src]);
    while let Some(u) = frontier.pop_front() {
        let d = dist[u.index()].expect("visited");
        for &v in topo.neighbors(u) {
            if topo.is_linked(u, v) && dist[v.index()].is_none() {
                dist[v.index()] = Some(d + 1);
                frontier.push_back(v);
            }
        }
    }
    dist
}

/// `count` flows on the default schedule. Even-numbered flows are drawn
/// from distinct node pairs at least two hops apart; each odd-numbered flow
/// reverses the flow before it, so half the flows (rounded down) run against
/// an earlier one.
pub fn auto_flows(topo: &Topology, count: usize, seed: u64) -> Vec<FlowSpec> {
    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for s in topo.nodes() {
        let dist = hop_distances(topo, s);
        for d in topo.nodes() {
            if dist[d.index()].is_some_and(|h| h >= 2) {
                pairs.push((s, d));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let mut chosen: Vec<(NodeId, NodeId)> = Vec::with_capacity(count);
    let mut fresh = pairs.into_iter();
    while chosen.len() < count {
        if chosen.len() % 2 == 1 {
            let (s, d) = chosen[chosen.len() - 1];
            chosen.push((d, s));
            continue;
        }
        let Some(p) = fresh.by_ref().find(|&(s, d)| !chosen.contains(&(s, d)) && !chosen.contains(&(d, s))) else {
            break;
        };
        chosen.push(p);
    }
    chosen.into_iter().enumerate().map(|(k, (s, d))| FlowSpec::new(s, d, default_start(k))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_grid;

    #[test]
    fn schedule_defaults() {
        assert_eq!(default_start(0), 30.0);
        assert_eq!(default_start(6), 150.0);
        let flows: Vec<_> = (0..7).map(|k| FlowSpec::new(NodeId(0), NodeId(2), default_start(k))).collect();
        assert_eq!(default_duration(&flows), 210.0);
        assert_eq!(flows[0].stop_at(210.0), 200.0);
        assert_eq!(flows[6].active_duration(210.0), 50.0);
    }

    #[test]
    fn counted_flow_is_short() {
        let mut f = FlowSpec::new(NodeId(0), NodeId(2), 1.0);
        f.count = Some(1);
        assert!((f.active_duration(100.0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn hop_distance_on_grid() {
        let t = build_grid(3, 3, 200.0, 1.0, 1.0).unwrap();
        let d = hop_distances(&t, NodeId(0));
        assert_eq!(d[8], Some(4));
        assert_eq!(d[4], Some(2));
        assert_eq!(d[1], Some(1));
    }

    #[test]
    fn auto_flows_are_seeded_and_paired() {
        let t = build_grid(3, 3, 200.0, 1.0, 1.0).unwrap();
        let a = auto_flows(&t, 7, 11);
        assert_eq!(a, auto_flows(&t, 7, 11));
        assert_eq!(a.len(), 7);
        for (k, f) in a.iter().enumerate() {
            assert_eq!(f.start_s, default_start(k));
            assert!(hop_distances(&t, f.src)[f.dst.index()].unwrap() >= 2);
            if k % 2 == 1 {
                assert_eq!((f.src, f.dst), (a[k - 1].dst, a[k - 1].src));
            }
        }
        let forward: Vec<_> = a.iter().step_by(2).map(|f| (f.src, f.dst)).collect();
        for (i, p) in forward.iter().enumerate() {
            assert!(!forward[..i].contains(p) && !forward[..i].contains(&(p.1, p.0)));
        }
    }
}
