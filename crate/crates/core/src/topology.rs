//! Node placement, link quality, the ETX metric and ETX shortest paths.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default decode radius in meters.
pub const DEFAULT_RADIO_RANGE: f64 = 250.0;
/// Default carrier-sense radius in meters.
pub const DEFAULT_CARRIER_SENSE_RANGE: f64 = 550.0;
/// Default probe-counting window in seconds.
pub const DEFAULT_PROBE_WINDOW: f64 = 10.0;

/// Tolerance used when comparing accumulated route ETX values.
const ETX_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Directed view of a link: `d_f` is the delivery ratio from the owning
/// node to the peer, `d_r` the ratio back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub d_f: f64,
    pub d_r: f64,
    pub etx: f64,
}

impl LinkState {
    pub fn new(d_f: f64, d_r: f64) -> Result<Self, TopologyError> {
        Ok(LinkState { d_f, d_r, etx: link_etx(d_f, d_r)? })
    }

    pub fn is_usable(&self) -> bool {
        self.etx.is_finite()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("grid dimensions must be at least 1x1, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("delivery ratio {0} is outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("carrier-sense range {cs} is smaller than radio range {radio}")]
    CarrierSenseTooSmall { radio: f64, cs: f64 },
    #[error("topology has {0} nodes; node ids are 16-bit")]
    TooManyNodes(usize),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("no link between {from} and {to} (hop {hop} of the path)")]
    BrokenHop { from: NodeId, to: NodeId, hop: usize },
    #[error("no route from {src} to {dst}")]
    NoRoute { src: NodeId, dst: NodeId },
    #[error("node ids must be dense 0..{expected}, found {found}")]
    SparseIds { expected: usize, found: NodeId },
}

/// `1 / (d_f * d_r)`, or `+inf` when either ratio is zero.
pub fn link_etx(d_f: f64, d_r: f64) -> Result<f64, TopologyError> {
    for r in [d_f, d_r] {
        if !(0.0..=1.0).contains(&r) {
            return Err(TopologyError::RatioOutOfRange(r));
        }
    }
    let p = d_f * d_r;
    if p == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub d_f: f64,
    pub d_r: f64,
    pub radio_range: f64,
    pub carrier_sense_range: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, spacing: f64, d_f: f64, d_r: f64) -> Self {
        GridSpec {
            rows,
            cols,
            spacing,
            d_f,
            d_r,
            radio_range: DEFAULT_RADIO_RANGE,
            carrier_sense_range: DEFAULT_CARRIER_SENSE_RANGE,
        }
    }

    pub fn with_ranges(mut self, radio: f64, carrier_sense: f64) -> Self {
        self.radio_range = radio;
        self.carrier_sense_range = carrier_sense;
        self
    }
}

/// A static wireless topology. Links exist exactly between nodes within
/// `radio_range` of each other; each direction is stored separately.
#[derive(Debug, Clone)]
pub struct Topology {
    positions: Vec<Position>,
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    neighbors: Vec<Vec<NodeId>>,
    radio_range: f64,
    carrier_sense_range: f64,
}

/// Square grid with the given spacing, ids assigned row-major.
pub fn build_grid(rows: usize, cols: usize, spacing: f64, d_f: f64, d_r: f64) -> Result<Topology, TopologyError> {
    GridSpec::new(rows, cols, spacing, d_f, d_r).build()
}

impl GridSpec {
    pub fn build(&self) -> Result<Topology, TopologyError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(TopologyError::ZeroDimension { rows: self.rows, cols: self.cols });
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(TopologyError::BadSpacing(self.spacing));
        }
        let positions = (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| Position::new(c as f64 * self.spacing, r as f64 * self.spacing))
            .collect();
        Topology::from_positions(positions, self.radio_range, self.carrier_sense_range, self.d_f, self.d_r)
    }
}

impl Topology {
    /// Links every pair within `radio_range` using the given default ratios.
    pub fn from_positions(
        positions: Vec<Position>,
        radio_range: f64,
        carrier_sense_range: f64,
        d_f: f64,
        d_r: f64,
    ) -> Result<Self, TopologyError> {
        if carrier_sense_range < radio_range {
            return Err(TopologyError::CarrierSenseTooSmall { radio: radio_range, cs: carrier_sense_range });
        }
        if positions.len() > u16::MAX as usize {
            return Err(TopologyError::TooManyNodes(positions.len()));
        }
        // validate ratios even for single-node topologies
        LinkState::new(d_f, d_r)?;

        let n = positions.len();
        let mut links = BTreeMap::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && positions[u].distance(&positions[v]) <= radio_range + 1e-9 {
                    let (a, b) = (NodeId(u as u16), NodeId(v as u16));
                    // (u,v) carries u->v as forward; the reverse entry mirrors it
                    let state = if u < v { LinkState::new(d_f, d_r)? } else { LinkState::new(d_r, d_f)? };
                    links.insert((a, b), state);
                }
            }
        }
        let mut topo = Topology {
            positions,
            links,
            neighbors: Vec::new(),
            radio_range,
            carrier_sense_range,
        };
        topo.rebuild_neighbors();
        Ok(topo)
    }

    fn rebuild_neighbors(&mut self) {
        let mut neighbors = vec![Vec::new(); self.positions.len()];
        for &(u, v) in self.links.keys() {
            neighbors[u.index()].push(v);
        }
        self.neighbors = neighbors;
    }

    /// Overrides the ratios of an existing link; `d_f` is the `u -> v`
    /// direction. Setting a ratio to 0 leaves the link in place with an
    /// infinite ETX.
    pub fn set_link(&mut self, u: NodeId, v: NodeId, d_f: f64, d_r: f64) -> Result<(), TopologyError> {
        for id in [u, v] {
            if id.index() >= self.positions.len() {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        if !self.links.contains_key(&(u, v)) {
            return Err(TopologyError::BrokenHop { from: u, to: v, hop: 0 });
        }
        self.links.insert((u, v), LinkState::new(d_f, d_r)?);
        self.links.insert((v, u), LinkState::new(d_r, d_f)?);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.positions.len()).map(|i| NodeId(i as u16))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.positions.len()
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.positions[id.index()]
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.positions[a.index()].distance(&self.positions[b.index()])
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn carrier_sense_range(&self) -> f64 {
        self.carrier_sense_range
    }

    pub fn within_radio_range(&self, a: NodeId, b: NodeId) -> bool {
        self.distance(a, b) <= self.radio_range + 1e-9
    }

    pub fn within_carrier_sense(&self, a: NodeId, b: NodeId) -> bool {
        self.distance(a, b) <= self.carrier_sense_range + 1e-9
    }

    pub fn link(&self, u: NodeId, v: NodeId) -> Option<&LinkState> {
        self.links.get(&(u, v))
    }

    pub fn links(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &LinkState)> {
        self.links.iter()
    }

    /// Neighbors by radio range, ascending id. Includes dead (infinite ETX) links.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.neighbors[id.index()]
    }

    pub fn is_linked(&self, u: NodeId, v: NodeId) -> bool {
        self.links.get(&(u, v)).is_some_and(LinkState::is_usable)
    }

    pub fn link_etx(&self, u: NodeId, v: NodeId) -> f64 {
        self.links.get(&(u, v)).map_or(f64::INFINITY, |l| l.etx)
    }

    /// Replaces every link's ratios with measured estimates; links missing
    /// from `estimates` become unusable.
    pub fn with_measured_etx(&self, estimates: &BTreeMap<(NodeId, NodeId), (f64, f64)>) -> Topology {
        let mut topo = self.clone();
        for (key, state) in topo.links.iter_mut() {
            let (d_f, d_r) = estimates.get(key).copied().unwrap_or((0.0, 0.0));
            *state = LinkState::new(d_f.clamp(0.0, 1.0), d_r.clamp(0.0, 1.0)).expect("clamped ratios");
        }
        topo
    }
}

/// Sum of per-link ETX along `path`; zero for a single-node path.
pub fn route_etx(topology: &Topology, path: &[NodeId]) -> Result<f64, TopologyError> {
    let mut total = 0.0;
    for (hop, pair) in path.windows(2).enumerate() {
        match topology.link(pair[0], pair[1]) {
            Some(l) if l.is_usable() => total += l.etx,
            _ => return Err(TopologyError::BrokenHop { from: pair[0], to: pair[1], hop }),
        }
    }
    Ok(total)
}

#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    path: Vec<NodeId>,
}

impl Label {
    /// Route ETX first, then hop count, then the node-id sequence.
    fn cmp_key(&self, other: &Label) -> Ordering {
        if (self.cost - other.cost).abs() > ETX_EPS {
            return self.cost.partial_cmp(&other.cost).unwrap_or(Ordering::Equal);
        }
        self.path.len().cmp(&other.path.len()).then_with(|| self.path.cmp(&other.path))
    }
}

/// Minimum-ETX path with a fully deterministic tie-break.
pub fn shortest_path(topology: &Topology, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, TopologyError> {
    for id in [src, dst] {
        if !topology.contains(id) {
            return Err(TopologyError::UnknownNode(id));
        }
    }
    let tree = shortest_path_tree(topology, src);
    tree[dst.index()].clone().ok_or(TopologyError::NoRoute { src, dst })
}

/// Best path from `src` to every node (`None` when unreachable).
fn shortest_path_tree(topology: &Topology, src: NodeId) -> Vec<Option<Vec<NodeId>>> {
    let n = topology.node_count();
    let mut best: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    best[src.index()] = Some(Label { cost: 0.0, path: vec![src] });

    loop {
        let mut pick: Option<usize> = None;
        for i in 0..n {
            if settled[i] {
                continue;
            }
            if let Some(l) = &best[i] {
                match pick {
                    Some(j) if best[j].as_ref().unwrap().cmp_key(l) != Ordering::Greater => {}
                    _ => pick = Some(i),
                }
            }
        }
        let Some(u) = pick else { break };
        settled[u] = true;
        let base = best[u].clone().unwrap();
        for &v in topology.neighbors(NodeId(u as u16)) {
            let etx = topology.link_etx(NodeId(u as u16), v);
            if !etx.is_finite() || settled[v.index()] {
                continue;
            }
            let mut path = base.path.clone();
            path.push(v);
            let cand = Label { cost: base.cost + etx, path };
            let better = match &best[v.index()] {
                None => true,
                Some(cur) => cand.cmp_key(cur) == Ordering::Less,
            };
            if better {
                best[v.index()] = Some(cand);
            }
        }
    }
    best.into_iter().map(|l| l.map(|l| l.path)).collect()
}

/// All-pairs shortest paths, computed once per topology.
#[derive(Debug, Clone)]
pub struct RouteTable {
    paths: Vec<Vec<Option<Vec<NodeId>>>>,
    costs: Vec<Vec<f64>>,
}

impl RouteTable {
    pub fn new(topology: &Topology) -> Self {
        let mut paths = Vec::with_capacity(topology.node_count());
        let mut costs = Vec::with_capacity(topology.node_count());
        for src in topology.nodes() {
            let tree = shortest_path_tree(topology, src);
            costs.push(
                tree.iter()
                    .map(|p| p.as_ref().map_or(f64::INFINITY, |p| route_etx(topology, p).unwrap_or(f64::INFINITY)))
                    .collect(),
            );
            paths.push(tree);
        }
        RouteTable { paths, costs }
    }

    pub fn path(&self, src: NodeId, dst: NodeId) -> Option<&[NodeId]> {
        self.paths.get(src.index())?.get(dst.index())?.as_deref()
    }

    /// Route ETX of the shortest path, `+inf` when unreachable.
    pub fn etx(&self, src: NodeId, dst: NodeId) -> f64 {
        self.costs
            .get(src.index())
            .and_then(|row| row.get(dst.index()))
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    pub fn next_hop(&self, src: NodeId, dst: NodeId) -> Option<NodeId> {
        self.path(src, dst).and_then(|p| p.get(1).copied())
    }
}

/// One received ETX probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReception {
    pub at: f64,
    pub sender: NodeId,
    pub receiver: NodeId,
}

/// Estimated ratios and ETX for one directed link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtxEstimate {
    pub d_f: f64,
    pub d_r: f64,
    pub etx: f64,
}

/// Counts probes received in `(now - window, now]` on each listed link,
/// assuming every node sent one probe per second. Links with no probes
/// in either direction get an infinite ETX.
pub fn estimate_etx_from_probes(
    log: &[ProbeReception],
    links: &[(NodeId, NodeId)],
    window: f64,
    now: f64,
) -> BTreeMap<(NodeId, NodeId), EtxEstimate> {
    let expected = window.floor().max(1.0);
    let mut received: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
    for rx in log.iter().filter(|rx| rx.at > now - window && rx.at <= now) {
        *received.entry((rx.sender, rx.receiver)).or_default() += 1;
    }
    let ratio = |u: NodeId, v: NodeId| (received.get(&(u, v)).copied().unwrap_or(0) as f64 / expected).min(1.0);
    links
        .iter()
        .map(|&(u, v)| {
            let (d_f, d_r) = (ratio(u, v), ratio(v, u));
            let etx = link_etx(d_f, d_r).unwrap_or(f64::INFINITY);
            ((u, v), EtxEstimate { d_f, d_r, etx })
        })
        .collect()
}

/// Runs the 1 Hz probe process for `duration` seconds: node `u`'s probe
/// reaches neighbor `v` with probability `d_f(u -> v)`.
pub fn simulate_probe_log(topology: &Topology, duration: f64, seed: u64) -> Vec<ProbeReception> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let n = topology.node_count().max(1) as f64;
    let mut tick = 0u64;
    while (tick as f64) < duration {
        for u in topology.nodes() {
            // stagger senders inside the second so probes never share an instant
            let at = tick as f64 + (u.index() as f64 + 0.5) / n;
            if at > duration {
                continue;
            }
            for &v in topology.neighbors(u) {
                let d_f = topology.link(u, v).map_or(0.0, |l| l.d_f);
                if rng.gen::<f64>() < d_f {
                    log.push(ProbeReception { at, sender: u, receiver: v });
                }
            }
        }
        tick += 1;
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(v: u16) -> NodeId {
        NodeId(v)
    }

    #[test]
    fn grid_3x3_degrees() {
        let t = build_grid(3, 3, 200.0, 1.0, 1.0).unwrap();
        assert_eq!(t.node_count(), 9);
        assert_eq!(t.neighbors(id(4)).len(), 4);
        assert_eq!(t.neighbors(id(0)).len(), 2);
        assert_eq!(t.neighbors(id(1)), &[id(0), id(2), id(4)]);
    }

    #[test]
    fn grid_wider_radio_links_diagonals() {
        let t = GridSpec::new(3, 3, 200.0, 1.0, 1.0).with_ranges(300.0, 550.0).build().unwrap();
        assert_eq!(t.neighbors(id(4)).len(), 8);
        assert!((t.distance(id(0), id(4)) - 282.842712).abs() < 1e-5);
    }

    #[test]
    fn degenerate_grids() {
        let t = build_grid(1, 1, 200.0, 1.0, 1.0).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.links().count(), 0);
        assert!(matches!(build_grid(0, 3, 200.0, 1.0, 1.0), Err(TopologyError::ZeroDimension { .. })));
        assert!(matches!(build_grid(2, 2, 0.0, 1.0, 1.0), Err(TopologyError::BadSpacing(_))));
        assert!(matches!(build_grid(2, 2, 200.0, 1.5, 1.0), Err(TopologyError::RatioOutOfRange(_))));
    }

    #[test]
    fn etx_formula() {
        assert_eq!(link_etx(1.0, 1.0).unwrap(), 1.0);
        assert!((link_etx(0.9, 0.8).unwrap() - 1.388_888_888_9).abs() < 1e-9);
        assert!(link_etx(0.5, 0.0).unwrap().is_infinite());
        assert!(link_etx(-0.1, 1.0).is_err());
        assert!(link_etx(1.0, 1.01).is_err());
    }

    #[test]
    fn route_etx_sums_and_reports_broken_hop() {
        let mut t = build_grid(1, 4, 200.0, 1.0, 1.0).unwrap();
        assert_eq!(route_etx(&t, &[id(0), id(1), id(2), id(3)]).unwrap(), 3.0);
        assert_eq!(route_etx(&t, &[id(2)]).unwrap(), 0.0);
        t.set_link(id(0), id(1), 0.9, 0.8).unwrap();
        t.set_link(id(1), id(2), 0.5, 1.0).unwrap();
        assert!((route_etx(&t, &[id(0), id(1), id(2)]).unwrap() - 3.388_888_888_9).abs() < 1e-9);
        let err = route_etx(&t, &[id(0), id(2)]).unwrap_err();
        assert_eq!(err, TopologyError::BrokenHop { from: id(0), to: id(2), hop: 0 });
    }

    #[test]
    fn link_override_is_directional() {
        let mut t = build_grid(1, 2, 200.0, 1.0, 1.0).unwrap();
        t.set_link(id(0), id(1), 0.9, 0.5).unwrap();
        assert_eq!(t.link(id(0), id(1)).unwrap().d_f, 0.9);
        assert_eq!(t.link(id(1), id(0)).unwrap().d_f, 0.5);
        assert_eq!(t.link_etx(id(0), id(1)), t.link_etx(id(1), id(0)));
    }

    #[test]
    fn shortest_path_corner_to_corner() {
        let t = build_grid(3, 3, 200.0, 1.0, 1.0).unwrap();
        let p = shortest_path(&t, id(0), id(8)).unwrap();
        assert_eq!(route_etx(&t, &p).unwrap(), 4.0);
        // lexicographically smallest of the six Manhattan paths
        assert_eq!(p, vec![id(0), id(1), id(2), id(5), id(8)]);
        assert_eq!(shortest_path(&t, id(3), id(3)).unwrap(), vec![id(3)]);
    }

    #[test]
    fn shortest_path_no_route() {
        let mut t = build_grid(1, 3, 200.0, 1.0, 1.0).unwrap();
        t.set_link(id(1), id(2), 0.0, 0.0).unwrap();
        assert_eq!(shortest_path(&t, id(0), id(2)), Err(TopologyError::NoRoute { src: id(0), dst: id(2) }));
        assert!(matches!(shortest_path(&t, id(0), id(9)), Err(TopologyError::UnknownNode(_))));
    }

    #[test]
    fn route_table_matches_single_queries() {
        let t = build_grid(3, 4, 200.0, 1.0, 1.0).unwrap();
        let table = RouteTable::new(&t);
        for s in t.nodes() {
            for d in t.nodes() {
                assert_eq!(table.path(s, d).unwrap(), shortest_path(&t, s, d).unwrap().as_slice());
            }
        }
        assert_eq!(table.etx(id(0), id(11)), 5.0);
        assert_eq!(table.next_hop(id(0), id(0)), None);
    }

    #[test]
    fn probe_estimates_by_counting() {
        let (a, b) = (id(0), id(1));
        let mut log = Vec::new();
        for t in 0..10 {
            log.push(ProbeReception { at: t as f64 + 0.5, sender: b, receiver: a });
            if t < 8 {
                log.push(ProbeReception { at: t as f64 + 0.5, sender: a, receiver: b });
            }
        }
        let est = estimate_etx_from_probes(&log, &[(a, b)], 10.0, 10.0);
        assert!((est[&(a, b)].etx - 1.25).abs() < 1e-12);

        let full: Vec<_> = (0..10)
            .flat_map(|t| {
                [
                    ProbeReception { at: t as f64, sender: a, receiver: b },
                    ProbeReception { at: t as f64, sender: b, receiver: a },
                ]
            })
            .collect();
        assert_eq!(estimate_etx_from_probes(&full, &[(a, b)], 10.0, 9.5)[&(a, b)].etx, 1.0);
        assert!(estimate_etx_from_probes(&[], &[(a, b)], 10.0, 10.0)[&(a, b)].etx.is_infinite());
    }

    #[test]
    fn lossless_probe_process_gives_unit_etx() {
        let t = build_grid(2, 2, 200.0, 1.0, 1.0).unwrap();
        let log = simulate_probe_log(&t, 20.0, 3);
        let links: Vec<_> = t.links().map(|(k, _)| *k).collect();
        for est in estimate_etx_from_probes(&log, &links, 10.0, 20.0).values() {
            assert_eq!(est.etx, 1.0);
        }
    }
}
