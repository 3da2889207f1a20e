//! XOR coding and the node-local decision of which queued packets to mix.

use thiserror::Error;

use crate::frames::NativePacketDescriptor;
use crate::topology::NodeId;

/// Past this many search steps the plan search returns its best so far.
const PLAN_SEARCH_BUDGET: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodingError {
    #[error("cannot XOR an empty list of payloads")]
    Empty,
}

/// Byte-wise XOR of all payloads, each zero-padded to the longest.
pub fn xor_encode<P: AsRef<[u8]>>(payloads: &[P]) -> Result<Vec<u8>, CodingError> {
    let len = payloads.iter().map(|p| p.as_ref().len()).max().ok_or(CodingError::Empty)?;
    let mut out = vec![0u8; len];
    for p in payloads {
        xor_into(&mut out, p.as_ref());
    }
    Ok(out)
}

fn xor_into(acc: &mut [u8], p: &[u8]) {
    for (a, b) in acc.iter_mut().zip(p) {
        *a ^= b;
    }
}

/// Strips every known payload out of `coded` and truncates to `target_len`.
/// Garbage in, garbage out: nothing here can tell a wrong `known` set.
pub fn xor_decode<P: AsRef<[u8]>>(coded: &[u8], known: &[P], target_len: usize) -> Vec<u8> {
    let mut out = coded.to_vec();
    for k in known {
        xor_into(&mut out, k.as_ref());
    }
    out.truncate(target_len);
    out.resize(target_len, 0);
    out
}

/// Whether `node` can be assumed to hold `p`, judged from header state only:
/// it is the source, has carried the packet, or was a candidate of an
/// earlier sender.
pub fn knows(node: NodeId, p: &NativePacketDescriptor) -> bool {
    node == p.src || p.traversed.contains(&node) || p.overheard.contains(&node)
}

fn intersects(a: &[NodeId], b: &[NodeId]) -> bool {
    a.iter().any(|x| b.contains(x))
}

/// The three pairwise coding conditions, evaluated at the current holder:
///
/// 1. some `T(p1)` node is in `F(p2)` and some `T(p2)` node is in `F(p1)`;
/// 2. some `O(p1)` node is in `F(p2)` and some `O(p2)` node is in `F(p1)`;
/// 3. some `O(p1)` node is in `T(p2)` and some `O(p2)` node is in `T(p1)`.
pub fn can_code_pair(_c: NodeId, p1: &NativePacketDescriptor, p2: &NativePacketDescriptor) -> bool {
    let (t1, f1, o1) = (&p1.traversed, &p1.forwarding_set, &p1.overheard);
    let (t2, f2, o2) = (&p2.traversed, &p2.forwarding_set, &p2.overheard);
    let cond1 = intersects(t1, f2) && intersects(t2, f1);
    let cond2 = intersects(o1, f2) && intersects(o2, f1);
    let cond3 = intersects(o1, t2) && intersects(o2, t1);
    cond1 || cond2 || cond3
}

/// A set of packets to send as one XOR frame, with the nodes that can
/// decode each one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingPlan {
    pub components: Vec<NativePacketDescriptor>,
    pub recipients_per_component: Vec<Vec<NodeId>>,
}

impl CodingPlan {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Union of the per-component recipients, in first-seen order.
    pub fn recipients(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for r in self.recipients_per_component.iter().flatten() {
            if !out.contains(r) {
                out.push(*r);
            }
        }
        out
    }
}

/// For each component, the forwarding candidates that know every other
/// component. `None` if some component would have no such candidate.
pub fn plan_recipients(set: &[&NativePacketDescriptor]) -> Option<Vec<Vec<NodeId>>> {
    let mut all = Vec::with_capacity(set.len());
    for (i, p) in set.iter().enumerate() {
        let rcpt: Vec<NodeId> = p
            .forwarding_set
            .iter()
            .copied()
            .filter(|&r| set.iter().enumerate().all(|(j, q)| i == j || knows(r, q)))
            .collect();
        if rcpt.is_empty() {
            return None;
        }
        all.push(rcpt);
    }
    Some(all)
}

/// Largest decodable set containing `trigger`, drawn from `queue`.
///
/// Feasible sets are closed under removal, so the search only considers
/// packets that are decodable as a pair with the trigger. A greedy pass in
/// queue order seeds the best set; a bounded depth-first search then looks
/// for anything larger. Among equal sizes the earliest-arriving packets win.
pub fn build_coding_plan(c: NodeId, trigger: &NativePacketDescriptor, queue: &[NativePacketDescriptor]) -> CodingPlan {
    let _ = c;
    if trigger.forwarding_set.is_empty() {
        // nobody could decode a mix; send it alone
        return CodingPlan { components: vec![trigger.clone()], recipients_per_component: vec![Vec::new()] };
    }
    let candidates: Vec<&NativePacketDescriptor> = queue
        .iter()
        .filter(|q| q.packet_id != trigger.packet_id)
        .filter(|q| plan_recipients(&[trigger, q]).is_some())
        .collect();

    let mut best: Vec<usize> = Vec::new();
    {
        let mut chosen: Vec<&NativePacketDescriptor> = vec![trigger];
        for (i, q) in candidates.iter().enumerate() {
            chosen.push(q);
            if plan_recipients(&chosen).is_some() {
                best.push(i);
            } else {
                chosen.pop();
            }
        }
    }

    let mut search = Search { trigger, candidates: &candidates, best, budget: PLAN_SEARCH_BUDGET };
    let mut current = Vec::new();
    search.dfs(0, &mut current);

    let mut components = vec![trigger.clone()];
    components.extend(search.best.iter().map(|&i| candidates[i].clone()));
    let refs: Vec<&NativePacketDescriptor> = components.iter().collect();
    let recipients_per_component = plan_recipients(&refs).expect("plan is feasible by construction");
    CodingPlan { components, recipients_per_component }
}

struct Search<'a> {
    trigger: &'a NativePacketDescriptor,
    candidates: &'a [&'a NativePacketDescriptor],
    best: Vec<usize>,
    budget: usize,
}

impl Search<'_> {
    fn dfs(&mut self, start: usize, current: &mut Vec<usize>) {
        if current.len() > self.best.len() {
            self.best = current.clone();
        }
        for i in start..self.candidates.len() {
            if self.budget == 0 || current.len() + (self.candidates.len() - i) <= self.best.len() {
                return;
            }
            self.budget -= 1;
            current.push(i);
            let mut set: Vec<&NativePacketDescriptor> = vec![self.trigger];
            set.extend(current.iter().map(|&j| self.candidates[j]));
            if plan_recipients(&set).is_some() {
                self.dfs(i + 1, current);
            }
            current.pop();
        }
    }
}

/// Size of the plan `trigger` would lead, i.e. the `n` of the forwarding timer.
pub fn coding_opportunity(c: NodeId, trigger: &NativePacketDescriptor, queue: &[NativePacketDescriptor]) -> usize {
    build_coding_plan(c, trigger, queue).len()
}
