//! CORMEN: coding-aware opportunistic forwarding.
//!
//! A sender picks an ordered set of forwarding candidates and broadcasts.
//! Each candidate that hears the packet arms a timer that is shorter the
//! better it is ranked and the more packets it could mix the packet with.
//! The first timer to fire announces the packet ids it is about to send,
//! which makes every other candidate drop its copy, and then transmits the
//! largest decodable XOR of its queue.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::coding::{build_coding_plan, xor_encode, CodingPlan};
use crate::frames::{DataFrame, Frame, NativePacketDescriptor, PacketId};
use crate::node::{
    announce, recover_components, DropReason, Effect, Heard, MeshNode, NodeCtx, NodeTimer, Outgoing, PacketPool,
    Recovered, Reliability,
};
use crate::topology::{NodeId, RouteTable, Topology};

const ETX_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("no neighbor of {sender} makes progress toward {dst}")]
    NoForwarder { sender: NodeId, dst: NodeId },
    #[error("timer rank i and coding count n must both be at least 1 (got i={i}, n={n})")]
    BadTimerInput { i: usize, n: usize },
}

/// `(i / n^2) * etx_dest * t_slot`.
pub fn forwarding_timer(i: usize, n: usize, etx_dest: f64, t_slot: f64) -> Result<f64, ProtocolError> {
    if i == 0 || n == 0 {
        return Err(ProtocolError::BadTimerInput { i, n });
    }
    Ok(i as f64 / (n * n) as f64 * etx_dest * t_slot)
}

/// Forwarding candidates for a packet at `sender`, best first.
///
/// A neighbor qualifies when its link from the sender is within
/// `etx_threshold`, it is on or next to `sp_route`, and it is strictly
/// closer to `dst` in route ETX than the sender. Linked candidate pairs
/// whose mutual ETX exceeds the threshold keep only the closer member.
/// When the destination itself qualifies it is the only candidate.
pub fn select_forwarding_nodes(
    topology: &Topology,
    routes: &RouteTable,
    sender: NodeId,
    sp_route: &[NodeId],
    dst: NodeId,
    etx_threshold: f64,
) -> Result<Vec<NodeId>, ProtocolError> {
    let own = routes.etx(sender, dst);
    let near_route = |v: NodeId| sp_route.iter().any(|&s| s == v || topology.is_linked(v, s));

    let mut cands: Vec<(f64, NodeId)> = topology
        .neighbors(sender)
        .iter()
        .copied()
        .filter(|&v| topology.link_etx(sender, v) <= etx_threshold)
        .filter(|&v| near_route(v))
        .map(|v| (routes.etx(v, dst), v))
        .filter(|&(etx, _)| etx.is_finite() && etx < own - ETX_EPS)
        .collect();

    if cands.iter().any(|&(_, v)| v == dst) {
        return Ok(vec![dst]);
    }
    cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut kept: Vec<NodeId> = Vec::with_capacity(cands.len());
    for &(_, v) in &cands {
        let clashes = kept
            .iter()
            .any(|&k| topology.link(k, v).is_some() && topology.link_etx(k, v) > etx_threshold);
        if !clashes {
            kept.push(v);
        }
    }
    if kept.is_empty() {
        return Err(ProtocolError::NoForwarder { sender, dst });
    }
    Ok(kept)
}

/// Timer state for one queued packet.
#[derive(Debug, Clone, PartialEq)]
pub struct TimerRecord {
    pub packet_id: PacketId,
    /// 1-based rank in the sender's candidate list.
    pub i: usize,
    /// Size of the coding plan this packet would lead.
    pub n: usize,
    pub etx_dest: f64,
    pub enqueued_at: f64,
    pub fire_at: f64,
    generation: u64,
}

#[derive(Debug, Clone)]
struct ForwardEntry {
    desc: NativePacketDescriptor,
    payload: Vec<u8>,
    timer: TimerRecord,
    ready: bool,
}

#[derive(Debug, Clone)]
struct OwnEntry {
    desc: NativePacketDescriptor,
    payload: Vec<u8>,
}

/// Per-node CORMEN state: a queue for locally originated packets, one for
/// packets being relayed, and the packet pool.
#[derive(Debug)]
pub struct CormenNode {
    id: NodeId,
    own_queue: VecDeque<OwnEntry>,
    forward_queue: Vec<ForwardEntry>,
    pool: PacketPool,
    reliability: Reliability,
    next_generation: u64,
    /// Nodes heard transmitting each packet, and when last heard.
    holders: BTreeMap<PacketId, (Vec<NodeId>, f64)>,
    holders_pruned_at: f64,
}

impl CormenNode {
    pub fn new(id: NodeId) -> Self {
        CormenNode {
            id,
            own_queue: VecDeque::new(),
            forward_queue: Vec::new(),
            pool: PacketPool::default(),
            reliability: Reliability::default(),
            next_generation: 0,
            holders: BTreeMap::new(),
            holders_pruned_at: 0.0,
        }
    }

    fn heard_holding(&mut self, now: f64, who: NodeId, ids: impl IntoIterator<Item = PacketId>) {
        for id in ids {
            let (nodes, at) = self.holders.entry(id).or_insert_with(|| (Vec::new(), now));
            *at = now;
            if !nodes.contains(&who) {
                nodes.push(who);
            }
        }
    }

    fn tidy(&mut self, ctx: &NodeCtx<'_>) {
        self.pool.prune(ctx.now);
        if ctx.now - self.holders_pruned_at >= 1.0 {
            self.holders_pruned_at = ctx.now;
            let horizon = ctx.now - ctx.params.pool_ttl;
            self.holders.retain(|_, (_, at)| *at >= horizon);
        }
    }

    /// `desc` with its O set cut down to nodes this node has heard
    /// transmitting the packet. Being a previous sender's candidate does not
    /// prove a node received the packet: a hidden terminal may have
    /// destroyed its copy, and coding on that guess makes it undecodable.
    fn corroborated(&self, desc: &NativePacketDescriptor) -> NativePacketDescriptor {
        let mut d = desc.clone();
        let heard = self.holders.get(&d.packet_id).map(|(n, _)| n.as_slice()).unwrap_or(&[]);
        d.overheard.retain(|v| heard.contains(v));
        d
    }

    pub fn pool(&self) -> &PacketPool {
        &self.pool
    }

    pub fn timer(&self, packet_id: PacketId) -> Option<&TimerRecord> {
        self.forward_queue.iter().find(|e| e.desc.packet_id == packet_id).map(|e| &e.timer)
    }

    pub fn forward_queue_ids(&self) -> Vec<PacketId> {
        self.forward_queue.iter().map(|e| e.desc.packet_id).collect()
    }

    pub fn own_queue_ids(&self) -> Vec<PacketId> {
        self.own_queue.iter().map(|e| e.desc.packet_id).collect()
    }

    /// Stamps SP, forwarding set and T on a fresh packet and queues it
    /// for a native send.
    pub fn source_send(&mut self, ctx: &mut NodeCtx<'_>, mut desc: NativePacketDescriptor, payload: Vec<u8>) {
        let me = self.id;
        if desc.dst == me {
            self.reliability.arrive(me, ctx, &desc, payload);
            return;
        }
        let Some(sp) = ctx.routes.path(me, desc.dst) else {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoRoute });
            return;
        };
        desc.sp_route = sp.to_vec();
        match select_forwarding_nodes(ctx.topology, ctx.routes, me, &desc.sp_route, desc.dst, ctx.params.etx_threshold)
        {
            Ok(fs) => desc.forwarding_set = fs,
            Err(_) => {
                ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoForwarder });
                return;
            }
        }
        desc.traversed = vec![me];
        desc.overheard.clear();
        if self.own_queue.len() >= ctx.params.queue_cap {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::QueueFull });
            return;
        }
        self.pool.store(desc.clone(), payload.clone(), ctx.now + ctx.params.pool_ttl);
        self.reliability.track(ctx, &desc, &payload);
        self.own_queue.push_back(OwnEntry { desc, payload });
        ctx.emit(Effect::WantMedium);
    }

    /// Fresh forward-queue packets, as the coder sees them.
    fn eligible_queue(&self, ctx: &NodeCtx<'_>) -> Vec<NativePacketDescriptor> {
        self.forward_queue.iter().filter(|e| ctx.is_fresh(&e.desc)).map(|e| self.corroborated(&e.desc)).collect()
    }

    /// Plan led by `trigger`. Components carry corroborated O sets; only
    /// ids and recipients should be taken from it.
    fn plan_for(&self, ctx: &NodeCtx<'_>, trigger: &NativePacketDescriptor, eligible: &[NativePacketDescriptor]) -> CodingPlan {
        let trigger = self.corroborated(trigger);
        if ctx.is_fresh(&trigger) {
            build_coding_plan(self.id, &trigger, eligible)
        } else {
            build_coding_plan(self.id, &trigger, &[])
        }
    }

    fn arm(&mut self, ctx: &mut NodeCtx<'_>, idx: usize) {
        self.next_generation += 1;
        let entry = &mut self.forward_queue[idx];
        entry.timer.generation = self.next_generation;
        ctx.emit(Effect::Timer {
            at: entry.timer.fire_at,
            timer: NodeTimer::Forward { packet_id: entry.desc.packet_id, generation: self.next_generation },
        });
    }

    /// Intermediate-node handling of one component addressed to this node.
    fn accept(&mut self, ctx: &mut NodeCtx<'_>, sender_fs: &[NodeId], rec: Recovered) {
        let me = self.id;
        let Recovered { mut desc, payload } = rec;
        if desc.dst == me {
            self.reliability.arrive(me, ctx, &desc, payload);
            return;
        }
        if self.forward_queue.iter().any(|e| e.desc.packet_id == desc.packet_id)
            || self.own_queue.iter().any(|e| e.desc.packet_id == desc.packet_id)
        {
            return;
        }
        let rank = sender_fs.iter().position(|&v| v == me).map_or(sender_fs.len().max(1), |p| p + 1);
        for &v in sender_fs {
            if !desc.overheard.contains(&v) {
                desc.overheard.push(v);
            }
        }
        if !desc.traversed.contains(&me) {
            desc.traversed.push(me);
        }
        let Some(sp) = ctx.routes.path(me, desc.dst) else {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoRoute });
            return;
        };
        desc.sp_route = sp.to_vec();
        match select_forwarding_nodes(ctx.topology, ctx.routes, me, &desc.sp_route, desc.dst, ctx.params.etx_threshold)
        {
            Ok(fs) => desc.forwarding_set = fs,
            Err(_) => {
                ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoForwarder });
                return;
            }
        }
        if self.forward_queue.len() >= ctx.params.queue_cap {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::QueueFull });
            return;
        }

        let etx_dest = ctx.routes.etx(me, desc.dst);
        let packet_id = desc.packet_id;
        self.forward_queue.push(ForwardEntry {
            desc,
            payload,
            timer: TimerRecord {
                packet_id,
                i: rank,
                n: 1,
                etx_dest,
                enqueued_at: ctx.now,
                fire_at: ctx.now,
                generation: 0,
            },
            ready: false,
        });

        let eligible = self.eligible_queue(ctx);
        let idx = self.forward_queue.len() - 1;
        let n = self.plan_for(ctx, &self.forward_queue[idx].desc, &eligible).len();
        {
            let t = &mut self.forward_queue[idx].timer;
            t.n = n;
            t.fire_at = ctx.now
                + forwarding_timer(t.i, t.n, t.etx_dest, ctx.params.t_slot).expect("rank and n are at least 1");
        }
        self.arm(ctx, idx);

        // earlier packets that can now be mixed with this one fire sooner
        let newcomer = self.corroborated(&self.forward_queue[idx].desc);
        for j in 0..idx {
            let e = &self.forward_queue[j];
            if e.ready
                || !ctx.is_fresh(&newcomer)
                || crate::coding::plan_recipients(&[&self.corroborated(&e.desc), &newcomer]).is_none()
            {
                continue;
            }
            let n = self.plan_for(ctx, &e.desc, &eligible).len();
            let t = &e.timer;
            if n > t.n {
                let fire = t.enqueued_at
                    + forwarding_timer(t.i, n, t.etx_dest, ctx.params.t_slot).expect("rank and n are at least 1");
                let fire = fire.max(ctx.now);
                let shorter = fire < t.fire_at;
                let t = &mut self.forward_queue[j].timer;
                t.n = n;
                if shorter {
                    t.fire_at = fire;
                    self.arm(ctx, j);
                }
            }
        }
    }

    fn on_data(&mut self, ctx: &mut NodeCtx<'_>, sender: NodeId, frame: &DataFrame) {
        self.tidy(ctx);
        self.heard_holding(ctx.now, sender, frame.packet_ids());
        let recovered = recover_components(self.id, frame, &mut self.pool, ctx);
        for rec in recovered {
            // candidates listed by the sender for this component
            let sender_fs = rec.desc.forwarding_set.clone();
            self.accept(ctx, &sender_fs, rec);
        }
    }

    /// Another candidate is about to send these packets: stand down.
    pub fn on_receive_announce(&mut self, ctx: &mut NodeCtx<'_>, ids: &[PacketId]) {
        let now = ctx.now;
        let ttl = ctx.params.pool_ttl;
        let mut i = 0;
        while i < self.forward_queue.len() {
            if ids.contains(&self.forward_queue[i].desc.packet_id) {
                let e = self.forward_queue.remove(i);
                ctx.emit(Effect::Note(format!("cancel id={}", e.desc.packet_id)));
                self.pool.store(e.desc, e.payload, now + ttl);
            } else {
                i += 1;
            }
        }
    }

    fn forward_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Option<Vec<Outgoing>> {
        let trigger_idx = self.forward_queue.iter().position(|e| e.ready)?;
        let trigger = self.forward_queue[trigger_idx].desc.clone();
        let eligible = self.eligible_queue(ctx);
        let plan = self.plan_for(ctx, &trigger, &eligible);

        let ids: Vec<PacketId> = plan.components.iter().map(|c| c.packet_id).collect();
        let mut components = Vec::with_capacity(ids.len());
        let mut payloads = Vec::with_capacity(ids.len());
        for id in &ids {
            let pos = self.forward_queue.iter().position(|e| e.desc.packet_id == *id).expect("plan drawn from queue");
            let e = self.forward_queue.remove(pos);
            payloads.push(e.payload.clone());
            components.push(e.desc.clone());
            self.pool.store(e.desc, e.payload, ctx.now + ctx.params.pool_ttl);
        }
        let recipients = plan.recipients();
        let xor_payload = xor_encode(&payloads).expect("plan is never empty");
        let data = Frame::Data(DataFrame { components, recipients, xor_payload });
        Some(vec![announce(self.id, ids), Outgoing::broadcast(data)])
    }

    fn own_burst(&mut self) -> Option<Vec<Outgoing>> {
        let OwnEntry { desc, payload } = self.own_queue.pop_front()?;
        let recipients = desc.forwarding_set.clone();
        Some(vec![Outgoing::broadcast(Frame::Data(DataFrame {
            components: vec![desc],
            recipients,
            xor_payload: payload,
        }))])
    }
}

impl MeshNode for CormenNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn originate(&mut self, ctx: &mut NodeCtx<'_>, desc: NativePacketDescriptor, payload: Vec<u8>) {
        self.tidy(ctx);
        self.source_send(ctx, desc, payload);
    }

    fn on_frame(&mut self, ctx: &mut NodeCtx<'_>, heard: Heard<'_>) {
        match heard.frame {
            Frame::Data(d) => self.on_data(ctx, heard.sender, d),
            Frame::Announce(a) => {
                self.heard_holding(ctx.now, heard.sender, a.packet_ids.iter().copied());
                self.on_receive_announce(ctx, &a.packet_ids);
            }
            Frame::Ack(ack) => {
                let addressed = heard.mac_dst == Some(self.id);
                // any ACK means the packet already arrived
                self.forward_queue.retain(|e| e.desc.packet_id != ack.packet_id);
                // the pool entry is kept until it expires: a relay may still
                // code a stale copy on the assumption that the source holds it
                if self.reliability.on_ack(self.id, ctx, ack, addressed) {
                    self.own_queue.retain(|e| e.desc.packet_id != ack.packet_id);
                }
            }
            Frame::Probe(_) => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: NodeTimer) {
        match timer {
            NodeTimer::Forward { packet_id, generation } => {
                if let Some(e) = self
                    .forward_queue
                    .iter_mut()
                    .find(|e| e.desc.packet_id == packet_id && e.timer.generation == generation && !e.ready)
                {
                    e.ready = true;
                    ctx.emit(Effect::WantMedium);
                }
            }
            NodeTimer::Retransmit { packet_id } => {
                if let Some((desc, payload)) = self.reliability.on_retransmit(ctx, packet_id) {
                    if !self.own_queue.iter().any(|e| e.desc.packet_id == packet_id) {
                        self.pool.store(desc.clone(), payload.clone(), ctx.now + ctx.params.pool_ttl);
                        self.own_queue.push_back(OwnEntry { desc, payload });
                        ctx.emit(Effect::WantMedium);
                    }
                }
            }
        }
    }

    fn wants_medium(&self) -> bool {
        self.reliability.has_ack() || !self.own_queue.is_empty() || self.forward_queue.iter().any(|e| e.ready)
    }

    fn next_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Vec<Outgoing> {
        if let Some(ack) = self.reliability.pop_ack() {
            return vec![ack];
        }
        if let Some(burst) = self.forward_burst(ctx) {
            return burst;
        }
        self.own_burst().unwrap_or_default()
    }

    fn queued_ids(&self) -> Vec<PacketId> {
        let mut ids = self.own_queue_ids();
        ids.extend(self.forward_queue_ids());
        ids
    }
}
