//! When can a relay XOR two packets? Each next hop must already hold the
//! other packet, judged only from the header's T (traversed), F (forwarding
//! candidates) and O (overheard) lists.

use cormen::coding::{build_coding_plan, can_code_pair, xor_decode, xor_encode};
use cormen::frames::NativePacketDescriptor;
use cormen::topology::NodeId;

fn packet(id: u32, src: u16, dst: u16, t: &[u16], f: &[u16], o: &[u16]) -> NativePacketDescriptor {
    let ids = |v: &[u16]| v.iter().copied().map(NodeId).collect();
    let mut p = NativePacketDescriptor::new(id, NodeId(src), NodeId(dst), 6, 0);
    p.traversed = ids(t);
    p.forwarding_set = ids(f);
    p.overheard = ids(o);
    p
}

fn main() {
    let relay = NodeId(1);

    // the classic exchange: each side sent the packet the other one wants
    let a_to_b = packet(1, 0, 2, &[0], &[2], &[]);
    let b_to_a = packet(2, 2, 0, &[2], &[0], &[]);
    println!("reverse pair codable: {}", can_code_pair(relay, &a_to_b, &b_to_a));

    // same flows, but the next hops have never seen the other packet
    let fresh = packet(3, 5, 2, &[5], &[2], &[]);
    println!("unrelated pair codable: {}", can_code_pair(relay, &a_to_b, &fresh));

    // overhearing makes it work: node 2 was a candidate for packet 4 earlier
    let overheard = packet(4, 5, 0, &[5], &[0], &[2]);
    let reverse = packet(5, 6, 2, &[6], &[2], &[0]);
    println!("pair via overhearing codable: {}", can_code_pair(relay, &overheard, &reverse));

    let queue = vec![b_to_a.clone(), fresh, reverse];
    let plan = build_coding_plan(relay, &a_to_b, &queue);
    let ids: Vec<u32> = plan.components.iter().map(|c| c.packet_id).collect();
    println!("plan for packet 1: {ids:?}, recipients {:?}", plan.recipients());

    let pa = b"hello!".to_vec();
    let pb = b"world".to_vec();
    let coded = xor_encode(&[&pa, &pb]).unwrap();
    println!("bob recovers {:?}", String::from_utf8(xor_decode(&coded, &[&pb], pa.len())).unwrap());
    println!("alice recovers {:?}", String::from_utf8(xor_decode(&coded, &[&pa], pb.len())).unwrap());
}
