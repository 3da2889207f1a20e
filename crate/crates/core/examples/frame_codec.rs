//! Encode each frame type, dump the bytes, and decode them back.

use cormen::coding::xor_encode;
use cormen::frames::{
    decode_frame, encode_frame, frame_airtime, AckFrame, AnnounceFrame, DataFrame, Frame, NativePacketDescriptor,
    ProbeFrame,
};
use cormen::topology::NodeId;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn main() {
    let mut p1 = NativePacketDescriptor::new(7, NodeId(0), NodeId(2), 4, 1500);
    p1.sp_route = vec![NodeId(1), NodeId(2)];
    p1.forwarding_set = vec![NodeId(2)];
    p1.traversed = vec![NodeId(0), NodeId(1)];
    let mut p2 = NativePacketDescriptor::new(9, NodeId(2), NodeId(0), 3, 1510);
    p2.forwarding_set = vec![NodeId(0)];
    p2.traversed = vec![NodeId(2), NodeId(1)];

    let frames = [
        Frame::Data(DataFrame {
            xor_payload: xor_encode(&[&b"ping"[..], &b"pon"[..]]).unwrap(),
            components: vec![p1, p2],
            recipients: vec![NodeId(2), NodeId(0)],
        }),
        Frame::Announce(AnnounceFrame { sender: NodeId(1), packet_ids: vec![7, 9] }),
        Frame::Ack(AckFrame { packet_id: 7, dst_reached: NodeId(2), src: NodeId(0) }),
        Frame::Probe(ProbeFrame { sender: NodeId(3), seq: 42 }),
    ];

    for frame in &frames {
        let bytes = encode_frame(frame).unwrap();
        assert_eq!(&decode_frame(&bytes).unwrap(), frame);
        println!(
            "{:<9} {:>3} bytes  {:>7.1} us at 1 Mbps  {}",
            frame.kind(),
            bytes.len(),
            frame_airtime(frame, 1e6) * 1e6,
            hex(&bytes)
        );
    }

    let mut truncated = encode_frame(&frames[0]).unwrap();
    truncated.pop();
    println!("truncated DATA: {}", decode_frame(&truncated).unwrap_err());
}
