//! The event loop: traffic, a shared CSMA medium, node callbacks and
//! bookkeeping for metrics and invariant checks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::events::EventQueue;
use super::metrics::{compute_avg_delay, compute_avg_throughput, compute_pdr, Checkpoint, Counters, MetricsReport};
use super::traffic::{default_duration, FlowSpec};
use crate::baselines::{CopeNode, PlainNode};
use crate::frames::{frame_airtime_with_overhead, Frame, NativePacketDescriptor, PacketId, ProbeFrame, MAC_OVERHEAD_BYTES};
use crate::node::{payload_for, Effect, Heard, MeshNode, NodeCtx, NodeTimer, Outgoing, ProtocolParams};
use crate::protocol::CormenNode;
use crate::topology::{estimate_etx_from_probes, NodeId, ProbeReception, RouteTable, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProtocolKind {
    Cormen,
    Cope,
    Plain,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Cormen, ProtocolKind::Cope, ProtocolKind::Plain];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Cormen => "cormen",
            ProtocolKind::Cope => "cope",
            ProtocolKind::Plain => "plain",
        }
    }

    fn make_node(self, id: NodeId) -> Box<dyn MeshNode> {
        match self {
            ProtocolKind::Cormen => Box::new(CormenNode::new(id)),
            ProtocolKind::Cope => Box::new(CopeNode::new(id)),
            ProtocolKind::Plain => Box::new(PlainNode::new(id)),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProtocolKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown protocol `{s}` (expected one of: cormen, cope, plain)"))
    }
}

/// Where routing takes its link ETX from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtxMode {
    /// The configured delivery ratios.
    Oracle,
    /// Counting 1 Hz probes sent over the simulated medium.
    Measured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub bitrate_bps: f64,
    pub slot_s: f64,
    pub contention_window: u32,
    pub overhead_bytes: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams { bitrate_bps: 1e6, slot_s: 20e-6, contention_window: 32, overhead_bytes: MAC_OVERHEAD_BYTES }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub name: String,
    pub topology: Topology,
    pub protocol: ProtocolKind,
    pub params: ProtocolParams,
    pub mac: MacParams,
    pub flows: Vec<FlowSpec>,
    pub duration_s: f64,
    pub seed: u64,
    pub etx_mode: EtxMode,
    pub probe_interval_s: f64,
    pub etx_window_s: f64,
    pub trace: bool,
}

impl SimConfig {
    pub fn new(name: impl Into<String>, topology: Topology, protocol: ProtocolKind, flows: Vec<FlowSpec>) -> Self {
        let duration_s = default_duration(&flows);
        SimConfig {
            name: name.into(),
            topology,
            protocol,
            params: ProtocolParams::default(),
            mac: MacParams::default(),
            flows,
            duration_s,
            seed: 1,
            etx_mode: EtxMode::Oracle,
            probe_interval_s: 1.0,
            etx_window_s: 10.0,
            trace: false,
        }
    }

    /// Every problem with the configuration, not just the first. Checks are
    /// written as `!(x > 0.0)` so that NaN fails them too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.topology.node_count();
        if n < 2 {
            errs.push(format!("topology has {n} node(s); at least 2 are needed"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            errs.push(format!("duration must be positive (got {})", self.duration_s));
        }
        if !(self.mac.bitrate_bps > 0.0) {
            errs.push("bitrate must be positive".into());
        }
        if self.mac.contention_window == 0 {
            errs.push("contention window must be at least 1 slot".into());
        }
        if !(self.params.t_slot > 0.0) {
            errs.push("t_slot must be positive".into());
        }
        if !(self.params.etx_threshold >= 1.0) {
            errs.push(format!("etx_threshold must be at least 1 (got {})", self.params.etx_threshold));
        }
        if !(self.params.pool_ttl > 0.0) || !(self.params.ack_timeout > 0.0) {
            errs.push("pool_ttl and ack_timeout must be positive".into());
        }
        if self.etx_mode == EtxMode::Measured && !(self.probe_interval_s > 0.0 && self.etx_window_s >= 1.0) {
            errs.push("measured ETX needs a positive probe interval and a window of at least 1 s".into());
        }
        for (k, f) in self.flows.iter().enumerate() {
            for id in [f.src, f.dst] {
                if id.index() >= n {
                    errs.push(format!("flow {k}: node {id} does not exist"));
                }
            }
            if f.src == f.dst {
                errs.push(format!("flow {k}: source and destination are both {}", f.src));
            }
            if !(f.interval_s > 0.0) {
                errs.push(format!("flow {k}: interval must be positive"));
            }
            if f.payload_bytes == 0 {
                errs.push(format!("flow {k}: payload must be at least 1 byte"));
            }
            if !(f.start_s >= 0.0) || f.start_s >= self.duration_s {
                errs.push(format!("flow {k}: start {} is outside the run [0, {})", f.start_s, self.duration_s));
            }
        }
        errs
    }
}

/// One transmission on the medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxRecord {
    pub sender: NodeId,
    pub start: f64,
    pub end: f64,
    pub kind: &'static str,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: MetricsReport,
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<String>,
    /// Broken invariants; empty on a healthy run.
    pub violations: Vec<String>,
    pub tx_log: Vec<TxRecord>,
    pub probe_log: Vec<ProbeReception>,
}

/// Pairs of overlapping transmissions whose senders could hear each other.
pub fn check_medium_exclusivity(topology: &Topology, log: &[TxRecord]) -> Vec<String> {
    let mut sorted: Vec<&TxRecord> = log.iter().collect();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut active: Vec<&TxRecord> = Vec::new();
    let mut out = Vec::new();
    for tx in sorted {
        active.retain(|a| a.end > tx.start);
        for a in &active {
            if a.sender != tx.sender && topology.within_carrier_sense(a.sender, tx.sender) {
                out.push(format!(
                    "nodes {} and {} overlap on the medium at t={:.6}",
                    a.sender, tx.sender, tx.start
                ));
            }
        }
        active.push(tx);
    }
    out
}

pub fn run(config: &SimConfig, seed: u64) -> RunResult {
    Sim::new(config, seed).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mac {
    Idle,
    Deferring,
    Backoff(u64),
    Busy,
}

#[derive(Debug)]
enum Ev {
    Generate { flow: usize, k: u32 },
    Node { node: NodeId, timer: NodeTimer },
    BackoffDone { node: NodeId, generation: u64 },
    TxEnd { tx: u64 },
    ProbeTick,
    RouteRefresh,
    Snapshot,
    End,
}

struct Active {
    sender: NodeId,
    out: Outgoing,
    /// Receivers whose copy of this frame is destroyed.
    corrupted: BTreeSet<NodeId>,
}

struct PacketRecord {
    flow: usize,
    dst: NodeId,
    created: f64,
    bits: u64,
    delivered_at: Option<f64>,
}

enum Cause<'a> {
    Rx(&'a [PacketId]),
    Local,
    Other,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: f64,
    events: EventQueue<Ev>,
    nodes: Vec<Box<dyn MeshNode>>,
    route_topo: Topology,
    routes: RouteTable,
    cs: Vec<Vec<bool>>,
    radio: Vec<Vec<NodeId>>,
    mac: Vec<Mac>,
    burst: Vec<VecDeque<Outgoing>>,
    pending_probe: Vec<bool>,
    probe_seq: u32,
    backoff_rng: Vec<ChaCha8Rng>,
    loss_rng: ChaCha8Rng,
    next_generation: u64,
    active: BTreeMap<u64, Active>,
    next_tx: u64,
    last_rx: BTreeMap<(NodeId, PacketId), u64>,
    forwarded: BTreeSet<(PacketId, u64)>,
    counters: Counters,
    snapshots: Vec<Counters>,
    packets: Vec<PacketRecord>,
    trace: Vec<String>,
    violations: Vec<String>,
    tx_log: Vec<TxRecord>,
    probe_log: Vec<ProbeReception>,
    lossless: bool,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, seed: u64) -> Self {
        let topo = &cfg.topology;
        let n = topo.node_count();
        let cs = (0..n)
            .map(|u| (0..n).map(|v| topo.within_carrier_sense(NodeId(u as u16), NodeId(v as u16))).collect())
            .collect();
        let radio = topo
            .nodes()
            .map(|u| topo.nodes().filter(|&v| v != u && topo.within_radio_range(u, v)).collect())
            .collect();
        let backoff_rng = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1 + i as u64);
                r
            })
            .collect();
        let lossless = topo.links().all(|(_, l)| l.d_f == 1.0 && l.d_r == 1.0);
        Sim {
            cfg,
            now: 0.0,
            events: EventQueue::default(),
            nodes: topo.nodes().map(|id| cfg.protocol.make_node(id)).collect(),
            route_topo: topo.clone(),
            routes: RouteTable::new(topo),
            cs,
            radio,
            mac: vec![Mac::Idle; n],
            burst: vec![VecDeque::new(); n],
            pending_probe: vec![false; n],
            probe_seq: 0,
            backoff_rng,
            loss_rng: ChaCha8Rng::seed_from_u64(seed),
            next_generation: 0,
            active: BTreeMap::new(),
            next_tx: 0,
            last_rx: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            counters: Counters::default(),
            snapshots: Vec::new(),
            packets: Vec::new(),
            trace: Vec::new(),
            violations: Vec::new(),
            tx_log: Vec::new(),
            probe_log: Vec::new(),
            lossless,
        }
    }

    fn epochs(&self) -> Vec<f64> {
        let mut starts: Vec<f64> = self.cfg.flows.iter().map(|f| f.start_s).collect();
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        starts
    }

    fn run(mut self) -> RunResult {
        let duration = self.cfg.duration_s;
        let epochs = self.epochs();
        for &t in epochs.iter().skip(1) {
            self.events.schedule(t, Ev::Snapshot);
        }
        for (i, f) in self.cfg.flows.iter().enumerate() {
            self.events.schedule(f.start_s, Ev::Generate { flow: i, k: 0 });
        }
        if self.cfg.etx_mode == EtxMode::Measured {
            self.events.schedule(0.0, Ev::ProbeTick);
            self.events.schedule(self.cfg.etx_window_s, Ev::RouteRefresh);
        }
        self.events.schedule(duration, Ev::End);

        while let Some((at, ev)) = self.events.pop() {
            self.now = at;
            match ev {
                Ev::End => break,
                Ev::Snapshot => self.snapshots.push(self.counters),
                Ev::Generate { flow, k } => self.generate(flow, k),
                Ev::Node { node, timer } => {
                    let fx = self.with_node(node, |n, ctx| n.on_timer(ctx, timer));
                    self.apply(node, fx, Cause::Other);
                }
                Ev::BackoffDone { node, generation } => self.backoff_done(node, generation),
                Ev::TxEnd { tx } => self.tx_end(tx),
                Ev::ProbeTick => self.probe_tick(),
                Ev::RouteRefresh => self.refresh_routes(),
            }
        }
        self.snapshots.push(self.counters);
        self.violations.extend(check_medium_exclusivity(&self.cfg.topology, &self.tx_log));
        if self.lossless && self.counters.decode_failures > 0 {
            self.violations.push(format!("{} decode failure(s) on a lossless topology", self.counters.decode_failures));
        }
        self.finish(epochs)
    }

    fn finish(self, epochs: Vec<f64>) -> RunResult {
        let duration = self.cfg.duration_s;
        let flows = &self.cfg.flows;
        let report = |from: f64, to: f64, counters: Counters| {
            let in_window: Vec<&PacketRecord> =
                self.packets.iter().filter(|p| p.created >= from && p.created < to).collect();
            let delivered: Vec<(f64, f64)> =
                in_window.iter().filter_map(|p| p.delivered_at.map(|d| (p.created, d))).collect();
            let goodput: Vec<(u64, f64)> = flows
                .iter()
                .enumerate()
                .filter(|(_, f)| f.start_s < to && f.stop_at(duration) > from)
                .map(|(i, f)| {
                    let bits = in_window
                        .iter()
                        .filter(|p| p.flow == i && p.delivered_at.is_some())
                        .map(|p| p.bits)
                        .sum();
                    let active = (f.start_s + f.active_duration(duration)).min(to) - f.start_s.max(from);
                    (bits, active)
                })
                .collect();
            MetricsReport {
                generated: in_window.len() as u64,
                delivered: delivered.len() as u64,
                pdr: compute_pdr(delivered.len() as u64, in_window.len() as u64),
                avg_delay_s: compute_avg_delay(&delivered),
                avg_throughput_bps: compute_avg_throughput(&goodput),
                counters,
            }
        };

        let mut checkpoints = Vec::with_capacity(epochs.len() + 1);
        for (k, &t) in epochs.iter().enumerate() {
            let to = epochs.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let active = flows.iter().filter(|f| f.start_s <= t).count();
            checkpoints.push(Checkpoint { t_s: t, flows_active: active, report: report(t, to, self.snapshots[k]) });
        }
        let summary = report(f64::NEG_INFINITY, f64::INFINITY, self.counters);
        checkpoints.push(Checkpoint { t_s: duration, flows_active: flows.len(), report: summary.clone() });

        RunResult {
            summary,
            checkpoints,
            trace: self.trace,
            violations: self.violations,
            tx_log: self.tx_log,
            probe_log: self.probe_log,
        }
    }

    fn log(&mut self, node: NodeId, event: &str, detail: impl FnOnce() -> String) {
        if self.cfg.trace {
            let line = format!("t={:.6} node={} {} {}", self.now, node, event, detail());
            self.trace.push(line.trim_end().to_string());
        }
    }

    fn with_node<R>(
        &mut self,
        node: NodeId,
        f: impl FnOnce(&mut dyn MeshNode, &mut NodeCtx<'_>) -> R,
    ) -> (Vec<Effect>, R) {
        let mut fx = Vec::new();
        let r = {
            let mut ctx = NodeCtx {
                now: self.now,
                topology: &self.route_topo,
                routes: &self.routes,
                params: &self.cfg.params,
                effects: &mut fx,
            };
            f(self.nodes[node.index()].as_mut(), &mut ctx)
        };
        (fx, r)
    }

    fn apply(&mut self, node: NodeId, (fx, ()): (Vec<Effect>, ()), cause: Cause<'_>) {
        self.apply_effects(node, fx, cause);
    }

    fn apply_effects(&mut self, node: NodeId, fx: Vec<Effect>, cause: Cause<'_>) {
        for e in fx {
            match e {
                Effect::Timer { at, timer } => {
                    self.events.schedule(at.max(self.now), Ev::Node { node, timer });
                }
                Effect::WantMedium => self.kick(node),
                Effect::Drop { packet_id, reason } => {
                    self.counters.drops += 1;
                    self.log(node, "drop", || format!("id={packet_id} reason={}", reason.as_str()));
                }
                Effect::DecodeFailure { packet_id } => {
                    self.counters.decode_failures += 1;
                    self.log(node, "decode_fail", || format!("id={packet_id}"));
                }
                Effect::Note(text) => self.log(node, "note", || text),
                Effect::Deliver { desc, payload } => self.deliver(node, &desc, &payload, &cause),
            }
        }
    }

    fn deliver(&mut self, node: NodeId, desc: &NativePacketDescriptor, payload: &[u8], cause: &Cause<'_>) {
        let pid = desc.packet_id;
        let caused = match cause {
            Cause::Rx(ids) => ids.contains(&pid),
            Cause::Local => desc.src == node,
            Cause::Other => false,
        };
        if !caused {
            self.violations.push(format!("node {node} delivered packet {pid} without receiving it"));
        }
        let Some(rec) = pid.checked_sub(1).and_then(|i| self.packets.get(i as usize)) else {
            self.violations.push(format!("node {node} delivered unknown packet {pid}"));
            return;
        };
        if rec.dst != node {
            self.violations.push(format!("packet {pid} for {} delivered at {node}", rec.dst));
            return;
        }
        if *payload != payload_for(pid, desc.payload_len as usize)[..] {
            self.counters.decode_failures += 1;
            self.log(node, "decode_fail", || format!("id={pid} payload mismatch"));
            return;
        }
        if rec.delivered_at.is_some() {
            self.violations.push(format!("packet {pid} delivered twice"));
            return;
        }
        self.packets[pid as usize - 1].delivered_at = Some(self.now);
        self.log(node, "deliver", || format!("id={pid}"));
    }

    fn generate(&mut self, flow: usize, k: u32) {
        let f = &self.cfg.flows[flow];
        if self.now >= f.stop_at(self.cfg.duration_s) || f.count.is_some_and(|c| k >= c) {
            return;
        }
        let pid = self.packets.len() as PacketId + 1;
        let created_ms = (self.now * 1000.0).round() as u32;
        let desc = NativePacketDescriptor::new(pid, f.src, f.dst, f.payload_bytes, created_ms);
        let payload = payload_for(pid, f.payload_bytes as usize);
        self.packets.push(PacketRecord {
            flow,
            dst: f.dst,
            created: self.now,
            bits: f.payload_bytes as u64 * 8,
            delivered_at: None,
        });
        let (src, next) = (f.src, f.start_s + (k + 1) as f64 * f.interval_s);
        self.log(src, "gen", || format!("id={pid} dst={}", desc.dst));
        let fx = self.with_node(src, |n, ctx| n.originate(ctx, desc, payload));
        self.apply(src, fx, Cause::Local);
        self.events.schedule(next, Ev::Generate { flow, k: k + 1 });
    }

    // --- medium -------------------------------------------------------

    fn busy_at(&self, v: NodeId) -> bool {
        self.active.values().any(|a| self.cs[v.index()][a.sender.index()])
    }

    fn wants(&self, v: NodeId) -> bool {
        self.pending_probe[v.index()] || self.nodes[v.index()].wants_medium()
    }

    fn kick(&mut self, v: NodeId) {
        if self.mac[v.index()] != Mac::Idle || !self.wants(v) {
            return;
        }
        if self.busy_at(v) {
            self.mac[v.index()] = Mac::Deferring;
        } else {
            self.start_backoff(v);
        }
    }

    fn start_backoff(&mut self, v: NodeId) {
        let slots = self.backoff_rng[v.index()].gen_range(0..self.cfg.mac.contention_window);
        self.next_generation += 1;
        self.mac[v.index()] = Mac::Backoff(self.next_generation);
        let at = self.now + slots as f64 * self.cfg.mac.slot_s;
        self.events.schedule(at, Ev::BackoffDone { node: v, generation: self.next_generation });
    }

    fn backoff_done(&mut self, v: NodeId, generation: u64) {
        if self.mac[v.index()] != Mac::Backoff(generation) {
            return;
        }
        if self.busy_at(v) {
            self.mac[v.index()] = Mac::Deferring;
            return;
        }
        let (fx, mut frames): (Vec<Effect>, VecDeque<Outgoing>) = if self.pending_probe[v.index()] {
            self.pending_probe[v.index()] = false;
            self.probe_seq += 1;
            let probe = Frame::Probe(ProbeFrame { sender: v, seq: self.probe_seq });
            (Vec::new(), VecDeque::from([Outgoing::broadcast(probe)]))
        } else {
            let (fx, burst) = self.with_node(v, |n, ctx| n.next_burst(ctx));
            (fx, burst.into())
        };
        match frames.pop_front() {
            Some(first) => {
                self.mac[v.index()] = Mac::Busy;
                self.burst[v.index()] = frames;
                self.start_tx(v, first);
            }
            None => self.mac[v.index()] = Mac::Idle,
        }
        self.apply_effects(v, fx, Cause::Other);
    }

    fn start_tx(&mut self, sender: NodeId, out: Outgoing) {
        let airtime = frame_airtime_with_overhead(
            &out.frame,
            self.cfg.mac.bitrate_bps,
            self.cfg.mac.overhead_bytes + out.trailer_len(),
        );
        let id = self.next_tx;
        self.next_tx += 1;

        let mut corrupted = BTreeSet::new();
        for a in self.active.values_mut() {
            for r in 0..self.cs.len() {
                if self.cs[sender.index()][r] {
                    a.corrupted.insert(NodeId(r as u16));
                }
                if self.cs[a.sender.index()][r] {
                    corrupted.insert(NodeId(r as u16));
                }
            }
        }

        match &out.frame {
            Frame::Data(d) => {
                self.counters.tx_data_frames += 1;
                if d.is_coded() {
                    self.counters.tx_coded_frames += 1;
                    self.counters.coded_components_total += d.nc() as u64;
                }
                for c in &d.components {
                    if c.src == sender {
                        continue;
                    }
                    if let Some(&upstream) = self.last_rx.get(&(sender, c.packet_id)) {
                        if !self.forwarded.insert((c.packet_id, upstream)) {
                            self.counters.duplicate_forwards += 1;
                            self.log(sender, "duplicate", || format!("id={}", c.packet_id));
                        }
                    }
                }
            }
            Frame::Announce(_) => self.counters.tx_announce += 1,
            Frame::Ack(_) => self.counters.tx_ack += 1,
            Frame::Probe(_) => self.counters.tx_probe += 1,
        }
        let end = self.now + airtime;
        self.tx_log.push(TxRecord { sender, start: self.now, end, kind: out.frame.kind() });
        self.log(sender, "tx", || out.frame.summary());
        self.active.insert(id, Active { sender, out, corrupted });
        self.events.schedule(end, Ev::TxEnd { tx: id });
    }

    fn link_delivers(&mut self, from: NodeId, to: NodeId) -> Option<bool> {
        let d_f = self.cfg.topology.link(from, to)?.d_f;
        Some(if d_f >= 1.0 {
            true
        } else if d_f <= 0.0 {
            false
        } else {
            self.loss_rng.gen::<f64>() < d_f
        })
    }

    fn tx_end(&mut self, tx: u64) {
        let Active { sender, out, corrupted } = self.active.remove(&tx).expect("live transmission");
        match self.burst[sender.index()].pop_front() {
            Some(next) => self.start_tx(sender, next),
            None => self.mac[sender.index()] = Mac::Idle,
        }

        match &out.frame {
            Frame::Data(d) => {
                let ids: Vec<PacketId> = d.packet_ids().collect();
                for r in self.radio[sender.index()].clone() {
                    if corrupted.contains(&r) {
                        self.log(r, "collision", || format!("from={sender}"));
                        continue;
                    }
                    if !self.link_delivers(sender, r).unwrap_or(false) {
                        continue;
                    }
                    if d.recipients.contains(&r) {
                        for c in d.components.iter().filter(|c| c.forwarding_set.contains(&r)) {
                            self.last_rx.insert((r, c.packet_id), tx);
                        }
                    }
                    self.receive(r, sender, &out, Cause::Rx(&ids));
                }
            }
            Frame::Announce(_) | Frame::Ack(_) => {
                for r in 0..self.cs.len() {
                    let r = NodeId(r as u16);
                    if r == sender || !self.cs[sender.index()][r.index()] {
                        continue;
                    }
                    if self.link_delivers(sender, r).unwrap_or(true) {
                        self.receive(r, sender, &out, Cause::Other);
                    }
                }
            }
            Frame::Probe(_) => {
                for r in self.radio[sender.index()].clone() {
                    if self.link_delivers(sender, r).unwrap_or(false) {
                        self.probe_log.push(ProbeReception { at: self.now, sender, receiver: r });
                    }
                }
            }
        }

        for v in 0..self.cs.len() {
            let v = NodeId(v as u16);
            if !self.cs[sender.index()][v.index()] || self.busy_at(v) {
                continue;
            }
            match self.mac[v.index()] {
                Mac::Deferring if self.wants(v) => self.start_backoff(v),
                Mac::Deferring => self.mac[v.index()] = Mac::Idle,
                Mac::Idle => self.kick(v),
                _ => {}
            }
        }
    }

    fn receive(&mut self, r: NodeId, sender: NodeId, out: &Outgoing, cause: Cause<'_>) {
        self.log(r, "rx", || format!("from={sender} {}", out.frame.kind()));
        let heard = Heard { sender, frame: &out.frame, mac_dst: out.mac_dst, reception_report: &out.reception_report };
        let (fx, ()) = self.with_node(r, |n, ctx| n.on_frame(ctx, heard));
        self.apply_effects(r, fx, cause);
    }

    // --- measured ETX ---------------------------------------------------

    fn probe_tick(&mut self) {
        for v in 0..self.nodes.len() {
            self.pending_probe[v] = true;
            self.kick(NodeId(v as u16));
        }
        self.events.schedule(self.now + self.cfg.probe_interval_s, Ev::ProbeTick);
    }

    fn refresh_routes(&mut self) {
        let links: Vec<(NodeId, NodeId)> = self.cfg.topology.links().map(|(k, _)| *k).collect();
        let est = estimate_etx_from_probes(&self.probe_log, &links, self.cfg.etx_window_s, self.now);
        let ratios = est.into_iter().map(|(k, e)| (k, (e.d_f, e.d_r))).collect();
        self.route_topo = self.cfg.topology.with_measured_etx(&ratios);
        self.routes = RouteTable::new(&self.route_topo);
        self.log(NodeId(0), "note", || "routes refreshed from probes".into());
        self.events.schedule(self.now + self.cfg.etx_window_s, Ev::RouteRefresh);
    }
}
