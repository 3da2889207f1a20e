//! Comparison protocols on fixed ETX shortest paths.
//!
//! [`CopeNode`] forwards along the source's shortest path and opportunistically
//! XORs packets headed to different next hops when it believes each next hop
//! already holds the others. Beliefs come from overheard transmissions and
//! piggybacked reception reports. [`PlainNode`] is the same machine with
//! coding switched off.

use std::collections::{BTreeMap, VecDeque};

use crate::coding::xor_encode;
use crate::frames::{DataFrame, Frame, NativePacketDescriptor, PacketId};
use crate::node::{
    recover_components, DropReason, Effect, Heard, MeshNode, NodeCtx, NodeTimer, Outgoing, PacketPool, Reliability,
};
use crate::topology::NodeId;

/// Ids carried in each reception report.
pub const REPORT_LEN: usize = 8;

#[derive(Debug, Clone)]
struct Queued {
    desc: NativePacketDescriptor,
    payload: Vec<u8>,
}

impl Queued {
    fn next_hop(&self) -> NodeId {
        self.desc.forwarding_set[0]
    }
}

#[derive(Debug)]
pub struct CopeNode {
    id: NodeId,
    coding: bool,
    queue: VecDeque<Queued>,
    pool: PacketPool,
    reliability: Reliability,
    /// neighbor -> packet -> when we learned it holds the packet
    neighbor_knowledge: BTreeMap<NodeId, BTreeMap<PacketId, f64>>,
    recent: VecDeque<PacketId>,
    knowledge_pruned_at: f64,
}

impl CopeNode {
    pub fn new(id: NodeId) -> Self {
        CopeNode {
            id,
            coding: true,
            queue: VecDeque::new(),
            pool: PacketPool::default(),
            reliability: Reliability::default(),
            neighbor_knowledge: BTreeMap::new(),
            recent: VecDeque::new(),
            knowledge_pruned_at: 0.0,
        }
    }

    pub fn queue_ids(&self) -> Vec<PacketId> {
        self.queue.iter().map(|q| q.desc.packet_id).collect()
    }

    pub fn pool(&self) -> &PacketPool {
        &self.pool
    }

    /// What this node believes `neighbor` holds.
    pub fn believes_known(&self, neighbor: NodeId, p: &NativePacketDescriptor) -> bool {
        neighbor == p.src
            || p.traversed.contains(&neighbor)
            || self.neighbor_knowledge.get(&neighbor).is_some_and(|s| s.contains_key(&p.packet_id))
    }

    fn learn(&mut self, now: f64, neighbor: NodeId, ids: impl IntoIterator<Item = PacketId>) {
        let known = self.neighbor_knowledge.entry(neighbor).or_default();
        for id in ids {
            known.entry(id).or_insert(now);
        }
    }

    /// Beliefs older than a pool lifetime cannot matter to a fresh packet.
    fn tidy(&mut self, ctx: &NodeCtx<'_>) {
        self.pool.prune(ctx.now);
        if ctx.now - self.knowledge_pruned_at < 1.0 {
            return;
        }
        self.knowledge_pruned_at = ctx.now;
        let horizon = ctx.now - ctx.params.pool_ttl;
        for known in self.neighbor_knowledge.values_mut() {
            known.retain(|_, at| *at >= horizon);
        }
    }

    fn note_received(&mut self, id: PacketId) {
        if self.recent.contains(&id) {
            return;
        }
        if self.recent.len() == REPORT_LEN {
            self.recent.pop_front();
        }
        self.recent.push_back(id);
    }

    fn enqueue(&mut self, ctx: &mut NodeCtx<'_>, desc: NativePacketDescriptor, payload: Vec<u8>) {
        if self.queue.iter().any(|q| q.desc.packet_id == desc.packet_id) {
            return;
        }
        if self.queue.len() >= 2 * ctx.params.queue_cap {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::QueueFull });
            return;
        }
        self.queue.push_back(Queued { desc, payload });
        ctx.emit(Effect::WantMedium);
    }

    /// Point `desc` at the hop after this node on its fixed route.
    fn advance(&self, desc: &mut NativePacketDescriptor) -> Option<NodeId> {
        let pos = desc.sp_route.iter().position(|&v| v == self.id)?;
        let nh = *desc.sp_route.get(pos + 1)?;
        desc.forwarding_set = vec![nh];
        if !desc.traversed.contains(&self.id) {
            desc.traversed.push(self.id);
        }
        Some(nh)
    }

    fn on_data(&mut self, ctx: &mut NodeCtx<'_>, sender: NodeId, frame: &DataFrame, report: &[PacketId]) {
        self.tidy(ctx);
        self.learn(ctx.now, sender, frame.packet_ids());
        self.learn(ctx.now, sender, report.iter().copied());

        let before: Vec<bool> = frame.components.iter().map(|c| self.pool.contains(c.packet_id, ctx.now)).collect();
        let recovered = recover_components(self.id, frame, &mut self.pool, ctx);
        for (c, had) in frame.components.iter().zip(before) {
            if !had && self.pool.contains(c.packet_id, ctx.now) {
                self.note_received(c.packet_id);
            }
        }

        for rec in recovered {
            let mut desc = rec.desc;
            if desc.dst == self.id {
                self.reliability.arrive(self.id, ctx, &desc, rec.payload);
                continue;
            }
            if self.advance(&mut desc).is_none() {
                ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoRoute });
                continue;
            }
            self.enqueue(ctx, desc, rec.payload);
        }
    }

    /// Head of the queue plus, in queue order, every fresh packet for a new
    /// next hop such that each chosen next hop is believed to hold all the
    /// other chosen packets.
    fn pick(&mut self, ctx: &NodeCtx<'_>) -> Vec<Queued> {
        let Some(head) = self.queue.pop_front() else { return Vec::new() };
        let mut chosen = vec![head];
        if !self.coding || !ctx.is_fresh(&chosen[0].desc) {
            return chosen;
        }
        let mut i = 0;
        while i < self.queue.len() {
            let q = &self.queue[i];
            let nh = q.next_hop();
            let ok = ctx.is_fresh(&q.desc)
                && chosen.iter().all(|c| c.next_hop() != nh)
                && chosen.iter().all(|c| self.believes_known(nh, &c.desc) && self.believes_known(c.next_hop(), &q.desc));
            if ok {
                chosen.push(self.queue.remove(i).expect("index in range"));
            } else {
                i += 1;
            }
        }
        chosen
    }

    fn data_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Option<Outgoing> {
        let chosen = self.pick(ctx);
        if chosen.is_empty() {
            return None;
        }
        let payloads: Vec<&[u8]> = chosen.iter().map(|q| q.payload.as_slice()).collect();
        let xor_payload = xor_encode(&payloads).expect("at least one packet");
        let mut recipients = Vec::with_capacity(chosen.len());
        for q in &chosen {
            if !recipients.contains(&q.next_hop()) {
                recipients.push(q.next_hop());
            }
            self.pool.store(q.desc.clone(), q.payload.clone(), ctx.now + ctx.params.pool_ttl);
        }
        let single = (chosen.len() == 1).then(|| chosen[0].next_hop());
        let frame = Frame::Data(DataFrame {
            components: chosen.into_iter().map(|q| q.desc).collect(),
            recipients,
            xor_payload,
        });
        let mut out = match single {
            Some(nh) => Outgoing::unicast(frame, nh),
            None => Outgoing::broadcast(frame),
        };
        if self.coding {
            out.reception_report = self.recent.iter().copied().collect();
        }
        Some(out)
    }
}

impl MeshNode for CopeNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn originate(&mut self, ctx: &mut NodeCtx<'_>, mut desc: NativePacketDescriptor, payload: Vec<u8>) {
        self.tidy(ctx);
        if desc.dst == self.id {
            self.reliability.arrive(self.id, ctx, &desc, payload);
            return;
        }
        let Some(sp) = ctx.routes.path(self.id, desc.dst) else {
            ctx.emit(Effect::Drop { packet_id: desc.packet_id, reason: DropReason::NoRoute });
            return;
        };
        desc.sp_route = sp.to_vec();
        desc.traversed.clear();
        desc.overheard.clear();
        self.advance(&mut desc).expect("route has at least two nodes");
        self.pool.store(desc.clone(), payload.clone(), ctx.now + ctx.params.pool_ttl);
        self.note_received(desc.packet_id);
        self.reliability.track(ctx, &desc, &payload);
        self.enqueue(ctx, desc, payload);
    }

    fn on_frame(&mut self, ctx: &mut NodeCtx<'_>, heard: Heard<'_>) {
        match heard.frame {
            Frame::Data(d) => self.on_data(ctx, heard.sender, d, heard.reception_report),
            Frame::Ack(ack) => {
                self.queue.retain(|q| q.desc.packet_id != ack.packet_id);
                let addressed = heard.mac_dst == Some(self.id);
                self.reliability.on_ack(self.id, ctx, ack, addressed);
            }
            Frame::Announce(_) | Frame::Probe(_) => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: NodeTimer) {
        if let NodeTimer::Retransmit { packet_id } = timer {
            if let Some((desc, payload)) = self.reliability.on_retransmit(ctx, packet_id) {
                self.pool.store(desc.clone(), payload.clone(), ctx.now + ctx.params.pool_ttl);
                self.enqueue(ctx, desc, payload);
            }
        }
    }

    fn wants_medium(&self) -> bool {
        self.reliability.has_ack() || !self.queue.is_empty()
    }

    fn next_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Vec<Outgoing> {
        if let Some(ack) = self.reliability.pop_ack() {
            return vec![ack];
        }
        self.data_burst(ctx).into_iter().collect()
    }

    fn queued_ids(&self) -> Vec<PacketId> {
        self.queue_ids()
    }
}

/// Store-and-forward on the ETX shortest path, one native packet per frame.
#[derive(Debug)]
pub struct PlainNode(CopeNode);

impl PlainNode {
    pub fn new(id: NodeId) -> Self {
        let mut inner = CopeNode::new(id);
        inner.coding = false;
        PlainNode(inner)
    }

    pub fn queue_ids(&self) -> Vec<PacketId> {
        self.0.queue_ids()
    }
}

impl MeshNode for PlainNode {
    fn id(&self) -> NodeId {
        self.0.id
    }
    fn originate(&mut self, ctx: &mut NodeCtx<'_>, desc: NativePacketDescriptor, payload: Vec<u8>) {
        self.0.originate(ctx, desc, payload)
    }
    fn on_frame(&mut self, ctx: &mut NodeCtx<'_>, heard: Heard<'_>) {
        self.0.on_frame(ctx, heard)
    }
    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, timer: NodeTimer) {
        self.0.on_timer(ctx, timer)
    }
    fn wants_medium(&self) -> bool {
        self.0.wants_medium()
    }
    fn next_burst(&mut self, ctx: &mut NodeCtx<'_>) -> Vec<Outgoing> {
        self.0.next_burst(ctx)
    }
    fn queued_ids(&self) -> Vec<PacketId> {
        self.0.queued_ids()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{payload_for, ProtocolParams};
    use crate::topology::{build_grid, RouteTable, Topology};

    fn n(v: u16) -> NodeId {
        NodeId(v)
    }

    struct Harness {
        topo: Topology,
        routes: RouteTable,
        params: ProtocolParams,
    }

    impl Harness {
        fn new(rows: usize, cols: usize) -> Self {
            let topo = build_grid(rows, cols, 200.0, 1.0, 1.0).unwrap();
            let routes = RouteTable::new(&topo);
            Harness { topo, routes, params: ProtocolParams::default() }
        }
        fn ctx<'a>(&'a self, now: f64, effects: &'a mut Vec<Effect>) -> NodeCtx<'a> {
            NodeCtx { now, topology: &self.topo, routes: &self.routes, params: &self.params, effects }
        }
    }

    fn originate(h: &Harness, node: &mut impl MeshNode, id: u32, dst: u16) {
        let desc = NativePacketDescriptor::new(id, node.id(), n(dst), 16, 0);
        node.originate(&mut h.ctx(0.0, &mut Vec::new()), desc, payload_for(id, 16));
    }

    fn hear(h: &Harness, node: &mut impl MeshNode, now: f64, from: NodeId, out: &Outgoing) -> Vec<Effect> {
        let mut fx = Vec::new();
        let heard = Heard { sender: from, frame: &out.frame, mac_dst: out.mac_dst, reception_report: &out.reception_report };
        node.on_frame(&mut h.ctx(now, &mut fx), heard);
        fx
    }

    fn burst(h: &Harness, node: &mut impl MeshNode, now: f64) -> Outgoing {
        let mut b = node.next_burst(&mut h.ctx(now, &mut Vec::new()));
        assert_eq!(b.len(), 1);
        b.remove(0)
    }

    fn nc(o: &Outgoing) -> usize {
        match &o.frame {
            Frame::Data(d) => d.nc(),
            _ => 0,
        }
    }

    #[test]
    fn cope_codes_reverse_pair_at_relay() {
        let h = Harness::new(1, 3);
        let (mut a, mut b, mut c) = (CopeNode::new(n(0)), CopeNode::new(n(1)), CopeNode::new(n(2)));
        originate(&h, &mut a, 1, 2);
        originate(&h, &mut c, 2, 0);
        let fa = burst(&h, &mut a, 0.0);
        assert_eq!(fa.mac_dst, Some(n(1)));
        hear(&h, &mut b, 0.01, n(0), &fa);
        let fc = burst(&h, &mut c, 0.02);
        hear(&h, &mut b, 0.03, n(2), &fc);
        assert_eq!(b.queue_ids(), vec![1, 2]);

        let fb = burst(&h, &mut b, 0.04);
        assert_eq!(nc(&fb), 2);
        assert_eq!(fb.mac_dst, None);
        let fx_c = hear(&h, &mut c, 0.05, n(1), &fb);
        let fx_a = hear(&h, &mut a, 0.05, n(1), &fb);
        assert!(matches!(&fx_c[0], Effect::Deliver { desc, payload } if desc.packet_id == 1 && *payload == payload_for(1, 16)));
        assert!(matches!(&fx_a[0], Effect::Deliver { desc, payload } if desc.packet_id == 2 && *payload == payload_for(2, 16)));
    }

    #[test]
    fn plain_never_codes() {
        let h = Harness::new(1, 3);
        let (mut a, mut b, mut c) = (PlainNode::new(n(0)), PlainNode::new(n(1)), PlainNode::new(n(2)));
        originate(&h, &mut a, 1, 2);
        originate(&h, &mut c, 2, 0);
        let fa = burst(&h, &mut a, 0.0);
        hear(&h, &mut b, 0.01, n(0), &fa);
        let fc = burst(&h, &mut c, 0.02);
        hear(&h, &mut b, 0.03, n(2), &fc);
        assert_eq!(nc(&burst(&h, &mut b, 0.04)), 1);
        assert_eq!(nc(&burst(&h, &mut b, 0.05)), 1);
        assert!(fa.reception_report.is_empty());
    }

    #[test]
    fn cope_follows_the_source_route() {
        let h = Harness::new(3, 3);
        let mut src = CopeNode::new(n(0));
        originate(&h, &mut src, 7, 8);
        let out = burst(&h, &mut src, 0.0);
        let Frame::Data(d) = &out.frame else { panic!() };
        assert_eq!(d.components[0].sp_route, h.routes.path(n(0), n(8)).unwrap());
        assert_eq!(d.recipients, vec![n(1)]);

        let mut relay = CopeNode::new(n(1));
        hear(&h, &mut relay, 0.01, n(0), &out);
        let fwd = burst(&h, &mut relay, 0.02);
        assert_eq!(fwd.mac_dst, Some(n(2)));
        let Frame::Data(d) = &fwd.frame else { panic!() };
        assert_eq!(d.components[0].traversed, vec![n(0), n(1)]);
    }

    #[test]
    fn no_coding_without_knowledge() {
        // two packets at the centre of a 3x3 grid bound for different next
        // hops, but neither next hop holds the other packet
        let h = Harness::new(3, 3);
        let mut centre = CopeNode::new(n(4));
        for (id, src, dst) in [(1u32, 3u16, 5u16), (2, 1, 7)] {
            let mut s = CopeNode::new(n(src));
            originate(&h, &mut s, id, dst);
            let out = burst(&h, &mut s, 0.0);
            hear(&h, &mut centre, 0.01, n(src), &out);
        }
        assert_eq!(nc(&burst(&h, &mut centre, 0.02)), 1);
    }

    #[test]
    fn reception_reports_feed_beliefs() {
        let h = Harness::new(1, 3);
        let mut b = CopeNode::new(n(1));
        let p = NativePacketDescriptor::new(9, n(5), n(6), 4, 0);
        assert!(!b.believes_known(n(2), &p));
        let report = Outgoing {
            frame: Frame::Data(DataFrame { components: vec![], recipients: vec![], xor_payload: vec![] }),
            mac_dst: None,
            reception_report: vec![9],
        };
        hear(&h, &mut b, 0.0, n(2), &report);
        assert!(b.believes_known(n(2), &p));
    }

    #[test]
    fn report_is_bounded() {
        let mut a = CopeNode::new(n(0));
        for id in 0..20 {
            a.note_received(id);
        }
        assert_eq!(a.recent.len(), REPORT_LEN);
        assert_eq!(a.recent.front(), Some(&12));
    }
}
