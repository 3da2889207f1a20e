//! The interface every routing protocol exposes to the simulator, plus the
//! machinery the protocols share: packet pool, end-to-end ACKs and source
//! retransmission.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::coding::xor_decode;
use crate::frames::{AckFrame, AnnounceFrame, DataFrame, Frame, NativePacketDescriptor, PacketId};
use crate::topology::{NodeId, RouteTable, Topology};

/// Tunables shared by all protocols. Times are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Time scale of the forwarding timer.
    pub t_slot: f64,
    pub etx_threshold: f64,
    pub pool_ttl: f64,
    pub ack_timeout: f64,
    pub max_retx: u32,
    /// Capacity of each CORMEN queue; baselines get one queue of twice this.
    pub queue_cap: usize,
    /// Packets this close to pool expiry are never mixed into coded frames.
    pub freshness_margin: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            t_slot: 0.005,
            etx_threshold: 2.0,
            pool_ttl: 5.0,
            ack_timeout: 2.0,
            max_retx: 3,
            queue_cap: 50,
            freshness_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeTimer {
    Forward { packet_id: PacketId, generation: u64 },
    Retransmit { packet_id: PacketId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    QueueFull,
    NoForwarder,
    NoRoute,
    AckNoRoute,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::QueueFull => "queue_full",
            DropReason::NoForwarder => "no_forwarder",
            DropReason::NoRoute => "no_route",
            DropReason::AckNoRoute => "ack_no_route",
        }
    }
}

/// Side effects a handler asks the simulator to carry out.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Timer { at: f64, timer: NodeTimer },
    Deliver { desc: NativePacketDescriptor, payload: Vec<u8> },
    Drop { packet_id: PacketId, reason: DropReason },
    DecodeFailure { packet_id: PacketId },
    WantMedium,
    Note(String),
}

/// Read-only environment plus an effect sink, handed to every handler.
pub struct NodeCtx<'a> {
    pub now: f64,
    pub topology: &'a Topology,
    pub routes: &'a RouteTable,
    pub params: &'a ProtocolParams,
    pub effects: &'a mut Vec<Effect>,
}

impl NodeCtx<'_> {
    pub fn emit(&mut self, e: Effect) {
        self.effects.push(e);
    }

    pub fn now_ms(&self) -> u32 {
        (self.now * 1000.0).round() as u32
    }

    /// Whether `p` is young enough that every pool copy outlives the frame.
    pub fn is_fresh(&self, p: &NativePacketDescriptor) -> bool {
        self.now - p.created_at as f64 / 1000.0 + self.params.freshness_margin < self.params.pool_ttl
    }
}

/// A frame handed to the medium. `mac_dst` is set for unicast frames;
/// `reception_report` rides along in the MAC trailer and costs airtime.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub frame: Frame,
    pub mac_dst: Option<NodeId>,
    pub reception_report: Vec<PacketId>,
}

impl Outgoing {
    pub fn broadcast(frame: Frame) -> Self {
        Outgoing { frame, mac_dst: None, reception_report: Vec::new() }
    }

    pub fn unicast(frame: Frame, to: NodeId) -> Self {
        Outgoing { frame, mac_dst: Some(to), reception_report: Vec::new() }
    }

    /// Bytes the report adds to the frame's airtime.
    pub fn trailer_len(&self) -> usize {
        if self.reception_report.is_empty() {
            0
        } else {
            1 + 4 * self.reception_report.len()
        }
    }
}

/// What the medium delivered to a node, with who sent it.
#[derive(Debug, Clone, Copy)]
pub struct Heard<'a> {
    pub sender: NodeId,
    pub frame: &'a Frame,
    pub mac_dst: Option<NodeId>,
    pub reception_report: &'a [PacketId],
}

/// A routing protocol instance bound to one node.
pub trait MeshNode: Send {
    fn id(&self) -> NodeId;

    /// A locally generated packet; `desc` carries identity and timing only.
    fn originate(&mut self, ctx: &mut NodeCtx<'_>, desc: NativePacketDescriptor, payload: Vec<u8>);

    fn on_frame(&mut self, ctx: &mut NodeCtx<'_>, heard: Heard<'_>);

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: NodeTimer);

    /// Whether the node has something to send right now.
    fn wants_medium(&self) -> bool;

    /// Called once the MAC wins the medium; the frames go out back-to-back.
    fn next_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Vec<Outgoing>;

    /// Packet ids currently waiting in the node's output queues.
    fn queued_ids(&self) -> Vec<PacketId>;
}

/// Deterministic payload bytes for a packet, so any copy can be checked.
pub fn payload_for(packet_id: PacketId, len: usize) -> Vec<u8> {
    let mut state = (packet_id as u64) ^ 0x9E37_79B9_7F4A_7C15;
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        out.extend_from_slice(&z.to_le_bytes());
    }
    out.truncate(len);
    out
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub desc: NativePacketDescriptor,
    pub payload: Vec<u8>,
    pub expires_at: f64,
}

/// Short-term store of payloads a node has sent, received or overheard.
#[derive(Debug, Clone, Default)]
pub struct PacketPool {
    entries: BTreeMap<PacketId, PoolEntry>,
    last_prune: f64,
}

impl PacketPool {
    /// Inserts or refreshes an entry; an existing expiry is never shortened.
    pub fn store(&mut self, desc: NativePacketDescriptor, payload: Vec<u8>, expires_at: f64) {
        let expires_at = self.entries.get(&desc.packet_id).map_or(expires_at, |e| e.expires_at.max(expires_at));
        self.entries.insert(desc.packet_id, PoolEntry { desc, payload, expires_at });
    }

    pub fn get(&self, id: PacketId, now: f64) -> Option<&PoolEntry> {
        self.entries.get(&id).filter(|e| e.expires_at > now)
    }

    pub fn contains(&self, id: PacketId, now: f64) -> bool {
        self.get(id, now).is_some()
    }

    pub fn remove(&mut self, id: PacketId) -> Option<PoolEntry> {
        self.entries.remove(&id)
    }

    pub fn prune(&mut self, now: f64) {
        if now - self.last_prune < 1.0 {
            return;
        }
        self.last_prune = now;
        self.entries.retain(|_, e| e.expires_at > now);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A component recovered from a DATA frame this node was addressed by.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub desc: NativePacketDescriptor,
    pub payload: Vec<u8>,
}

/// Pulls out of `frame` every component listing `me` as a forwarding
/// candidate, decoding with the pool as needed. Components that cannot be
/// decoded are reported as decode failures. Non-recipients only harvest
/// what they can into the pool.
pub fn recover_components(
    me: NodeId,
    frame: &DataFrame,
    pool: &mut PacketPool,
    ctx: &mut NodeCtx<'_>,
) -> Vec<Recovered> {
    let now = ctx.now;
    let expiry = now + ctx.params.pool_ttl;
    if !frame.recipients.contains(&me) {
        if let Some((idx, payload)) = decode_single_unknown(frame, pool, now) {
            pool.store(frame.components[idx].clone(), payload, expiry);
        }
        return Vec::new();
    }

    let mut out = Vec::new();
    for (idx, p) in frame.components.iter().enumerate() {
        if !p.forwarding_set.contains(&me) {
            continue;
        }
        let payload = if let Some(e) = pool.get(p.packet_id, now) {
            e.payload.clone()
        } else {
            let mut known = Vec::with_capacity(frame.components.len() - 1);
            let mut missing = false;
            for (j, q) in frame.components.iter().enumerate() {
                if j == idx {
                    continue;
                }
                match pool.get(q.packet_id, now) {
                    Some(e) => known.push(e.payload.as_slice()),
                    None => {
                        missing = true;
                        break;
                    }
                }
            }
            if missing {
                ctx.emit(Effect::DecodeFailure { packet_id: p.packet_id });
                continue;
            }
            xor_decode(&frame.xor_payload, &known, p.payload_len as usize)
        };
        out.push(Recovered { desc: p.clone(), payload });
    }
    for r in &out {
        pool.store(r.desc.clone(), r.payload.clone(), expiry);
    }
    // opportunistically keep anything else that became decodable
    if let Some((idx, payload)) = decode_single_unknown(frame, pool, now) {
        pool.store(frame.components[idx].clone(), payload, expiry);
    }
    out
}

fn decode_single_unknown(frame: &DataFrame, pool: &PacketPool, now: f64) -> Option<(usize, Vec<u8>)> {
    let mut unknown = None;
    let mut known = Vec::new();
    for (i, c) in frame.components.iter().enumerate() {
        match pool.get(c.packet_id, now) {
            Some(e) => known.push(e.payload.as_slice()),
            None if unknown.is_none() => unknown = Some(i),
            None => return None,
        }
    }
    let idx = unknown?;
    let len = frame.components[idx].payload_len as usize;
    Some((idx, xor_decode(&frame.xor_payload, &known, len)))
}

#[derive(Debug, Clone)]
struct SourceRecord {
    desc: NativePacketDescriptor,
    payload: Vec<u8>,
    retransmissions: u32,
}

/// End-to-end reliability shared by every protocol: destinations ACK each
/// copy they receive, ACKs travel hop by hop on the reverse shortest path,
/// and sources resend after `ack_timeout` up to `max_retx` times.
#[derive(Debug, Default)]
pub struct Reliability {
    unacked: BTreeMap<PacketId, SourceRecord>,
    acks: VecDeque<(AckFrame, NodeId)>,
    delivered: BTreeSet<PacketId>,
}

impl Reliability {
    pub fn track(&mut self, ctx: &mut NodeCtx<'_>, desc: &NativePacketDescriptor, payload: &[u8]) {
        self.unacked.insert(
            desc.packet_id,
            SourceRecord { desc: desc.clone(), payload: payload.to_vec(), retransmissions: 0 },
        );
        ctx.emit(Effect::Timer {
            at: ctx.now + ctx.params.ack_timeout,
            timer: NodeTimer::Retransmit { packet_id: desc.packet_id },
        });
    }

    /// Retransmit timer fired: returns the packet to resend, if any.
    pub fn on_retransmit(
        &mut self,
        ctx: &mut NodeCtx<'_>,
        packet_id: PacketId,
    ) -> Option<(NativePacketDescriptor, Vec<u8>)> {
        let rec = self.unacked.get_mut(&packet_id)?;
        if rec.retransmissions >= ctx.params.max_retx {
            self.unacked.remove(&packet_id);
            ctx.emit(Effect::Note(format!("retx_exhausted id={packet_id}")));
            return None;
        }
        rec.retransmissions += 1;
        ctx.emit(Effect::Timer { at: ctx.now + ctx.params.ack_timeout, timer: NodeTimer::Retransmit { packet_id } });
        Some((rec.desc.clone(), rec.payload.clone()))
    }

    /// Destination side: deliver the first copy and ACK every copy.
    pub fn arrive(&mut self, me: NodeId, ctx: &mut NodeCtx<'_>, desc: &NativePacketDescriptor, payload: Vec<u8>) {
        if self.delivered.insert(desc.packet_id) {
            ctx.emit(Effect::Deliver { desc: desc.clone(), payload });
        }
        let ack = AckFrame { packet_id: desc.packet_id, dst_reached: me, src: desc.src };
        self.push_ack(me, ctx, ack);
    }

    fn push_ack(&mut self, me: NodeId, ctx: &mut NodeCtx<'_>, ack: AckFrame) {
        match ctx.routes.next_hop(me, ack.src) {
            Some(next) => {
                self.acks.push_back((ack, next));
                ctx.emit(Effect::WantMedium);
            }
            None => ctx.emit(Effect::Drop { packet_id: ack.packet_id, reason: DropReason::AckNoRoute }),
        }
    }

    /// Returns true when this node is the ACK's final destination.
    pub fn on_ack(&mut self, me: NodeId, ctx: &mut NodeCtx<'_>, ack: &AckFrame, addressed: bool) -> bool {
        if !addressed {
            return false;
        }
        if ack.src == me {
            self.unacked.remove(&ack.packet_id);
            true
        } else {
            self.push_ack(me, ctx, *ack);
            false
        }
    }

    pub fn is_acked(&self, packet_id: PacketId) -> bool {
        !self.unacked.contains_key(&packet_id)
    }

    pub fn has_ack(&self) -> bool {
        !self.acks.is_empty()
    }

    pub fn pop_ack(&mut self) -> Option<Outgoing> {
        self.acks.pop_front().map(|(ack, next)| Outgoing::unicast(Frame::Ack(ack), next))
    }
}

/// ANNOUNCE payload helper.
pub fn announce(me: NodeId, ids: Vec<PacketId>) -> Outgoing {
    Outgoing::broadcast(Frame::Announce(AnnounceFrame { sender: me, packet_ids: ids }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::xor_encode;
    use crate::topology::build_grid;

    #[test]
    fn payloads_are_deterministic_and_distinct() {
        assert_eq!(payload_for(7, 1000), payload_for(7, 1000));
        assert_ne!(payload_for(7, 1000), payload_for(8, 1000));
        assert_eq!(payload_for(3, 5).len(), 5);
        assert_eq!(&payload_for(3, 16)[..5], payload_for(3, 5).as_slice());
    }

    #[test]
    fn pool_expiry_is_exact() {
        let mut pool = PacketPool::default();
        let d = NativePacketDescriptor::new(1, NodeId(0), NodeId(1), 4, 0);
        pool.store(d.clone(), vec![1, 2, 3, 4], 5.0);
        assert!(pool.contains(1, 4.999));
        assert!(!pool.contains(1, 5.0));
        pool.store(d, vec![1, 2, 3, 4], 3.0);
        assert!(pool.contains(1, 4.0), "refresh never shortens expiry");
    }

    #[test]
    fn recover_decodes_with_pool_and_flags_missing() {
        let topo = build_grid(1, 3, 200.0, 1.0, 1.0).unwrap();
        let routes = RouteTable::new(&topo);
        let params = ProtocolParams::default();
        let mut effects = Vec::new();
        let mut ctx = NodeCtx { now: 1.0, topology: &topo, routes: &routes, params: &params, effects: &mut effects };

        let mut p1 = NativePacketDescriptor::new(1, NodeId(0), NodeId(2), 6, 0);
        p1.forwarding_set = vec![NodeId(2)];
        let mut p2 = NativePacketDescriptor::new(2, NodeId(2), NodeId(0), 6, 0);
        p2.forwarding_set = vec![NodeId(0)];
        let (a, b) = (payload_for(1, 6), payload_for(2, 6));
        let frame = DataFrame {
            components: vec![p1.clone(), p2.clone()],
            recipients: vec![NodeId(2), NodeId(0)],
            xor_payload: xor_encode(&[&a, &b]).unwrap(),
        };

        let mut pool_c = PacketPool::default();
        pool_c.store(p2.clone(), b.clone(), 10.0);
        let got = recover_components(NodeId(2), &frame, &mut pool_c, &mut ctx);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload, a);

        let mut empty = PacketPool::default();
        assert!(recover_components(NodeId(0), &frame, &mut empty, &mut ctx).is_empty());
        assert_eq!(effects, vec![Effect::DecodeFailure { packet_id: 2 }]);
    }
}
