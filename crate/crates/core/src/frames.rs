//! On-air frame types and their byte layout.
//!
//! All integers are big-endian. Every frame starts with a one-byte type:
//!
//! ```text
//! DATA      01 | nc u8 | rcpt_count u8 | rcpt u16* | component* | xor_payload
//!           component = packet_id u32 | src u16 | dst u16 | created_at u32
//!                     | payload_len u16 | sp | fn | t | o      (each: u8 count, u16*)
//! ANNOUNCE  02 | sender u16 | count u8 | packet_id u32*
//! ACK       03 | packet_id u32 | dst_reached u16 | src u16
//! PROBE     04 | sender u16 | seq u32
//! ```
//!
//! Component headers travel in clear; only payloads are XORed. The
//! `xor_payload` length equals the longest component `payload_len`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::topology::NodeId;

/// Bytes of MAC/PHY framing charged to every frame's airtime.
pub const MAC_OVERHEAD_BYTES: usize = 34;

const TYPE_DATA: u8 = 1;
const TYPE_ANNOUNCE: u8 = 2;
const TYPE_ACK: u8 = 3;
const TYPE_PROBE: u8 = 4;

pub type PacketId = u32;

/// A data packet's identity plus the routing state carried in its header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativePacketDescriptor {
    pub packet_id: PacketId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Default shortest path from the current holder (the SP field).
    pub sp_route: Vec<NodeId>,
    /// Ordered forwarding candidates chosen by the current sender (the FN field).
    pub forwarding_set: Vec<NodeId>,
    pub traversed: Vec<NodeId>,
    pub overheard: Vec<NodeId>,
    pub payload_len: u16,
    /// Milliseconds since simulation start.
    pub created_at: u32,
}

impl NativePacketDescriptor {
    pub fn new(packet_id: PacketId, src: NodeId, dst: NodeId, payload_len: u16, created_at: u32) -> Self {
        NativePacketDescriptor {
            packet_id,
            src,
            dst,
            sp_route: Vec::new(),
            forwarding_set: Vec::new(),
            traversed: Vec::new(),
            overheard: Vec::new(),
            payload_len,
            created_at,
        }
    }

    fn header_len(&self) -> usize {
        4 + 2 + 2 + 4 + 2
            + 1 + 2 * self.sp_route.len()
            + 1 + 2 * self.forwarding_set.len()
            + 1 + 2 * self.traversed.len()
            + 1 + 2 * self.overheard.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFrame {
    pub components: Vec<NativePacketDescriptor>,
    pub recipients: Vec<NodeId>,
    pub xor_payload: Vec<u8>,
}

impl DataFrame {
    /// The NC header value; 1 means native.
    pub fn nc(&self) -> usize {
        self.components.len()
    }

    pub fn is_coded(&self) -> bool {
        self.components.len() >= 2
    }

    pub fn packet_ids(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.components.iter().map(|c| c.packet_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnounceFrame {
    pub sender: NodeId,
    pub packet_ids: Vec<PacketId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckFrame {
    pub packet_id: PacketId,
    pub dst_reached: NodeId,
    /// The packet's source, i.e. where the ACK is headed.
    pub src: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeFrame {
    pub sender: NodeId,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Data(DataFrame),
    Announce(AnnounceFrame),
    Ack(AckFrame),
    Probe(ProbeFrame),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("{field} has {len} entries, at most 255 fit the count byte")]
    ListTooLong { field: &'static str, len: usize },
    #[error("DATA frame must carry at least one component")]
    NoComponents,
    #[error("xor payload is {actual} bytes, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("truncated frame: {missing} more byte(s) needed")]
    Truncated { missing: usize },
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("{extra} trailing byte(s) after frame end")]
    TrailingBytes { extra: usize },
    #[error("empty input")]
    Empty,
}

impl Frame {
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Data(_) => "DATA",
            Frame::Announce(_) => "ANNOUNCE",
            Frame::Ack(_) => "ACK",
            Frame::Probe(_) => "ETX_PROBE",
        }
    }

    /// Encoded size, computed from field counts alone.
    pub fn encoded_len(&self) -> usize {
        match self {
            Frame::Data(d) => {
                3 + 2 * d.recipients.len()
                    + d.components.iter().map(NativePacketDescriptor::header_len).sum::<usize>()
                    + d.xor_payload.len()
            }
            Frame::Announce(a) => 1 + 2 + 1 + 4 * a.packet_ids.len(),
            Frame::Ack(_) => 1 + 4 + 2 + 2,
            Frame::Probe(_) => 1 + 2 + 4,
        }
    }

    /// One-line description for trace logs.
    pub fn summary(&self) -> String {
        match self {
            Frame::Data(d) => {
                let ids: Vec<String> = d.packet_ids().map(|i| i.to_string()).collect();
                let rc: Vec<String> = d.recipients.iter().map(|r| r.to_string()).collect();
                let header_len = self.encoded_len() - d.xor_payload.len();
                let bytes = encode_frame(self).unwrap_or_default();
                format!(
                    "DATA nc={} ids=[{}] rcpt=[{}] len={} hdr={}",
                    d.nc(),
                    ids.join(","),
                    rc.join(","),
                    bytes.len(),
                    hex(&bytes[..header_len.min(bytes.len())])
                )
            }
            Frame::Announce(a) => {
                let ids: Vec<String> = a.packet_ids.iter().map(|i| i.to_string()).collect();
                format!("ANNOUNCE ids=[{}] hex={}", ids.join(","), hex(&encode_frame(self).unwrap_or_default()))
            }
            Frame::Ack(a) => format!(
                "ACK id={} dst={} src={} hex={}",
                a.packet_id,
                a.dst_reached,
                a.src,
                hex(&encode_frame(self).unwrap_or_default())
            ),
            Frame::Probe(p) => format!("ETX_PROBE seq={} hex={}", p.seq, hex(&encode_frame(self).unwrap_or_default())),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn count_u8(field: &'static str, len: usize) -> Result<u8, FrameError> {
    u8::try_from(len).map_err(|_| FrameError::ListTooLong { field, len })
}

fn put_nodes(out: &mut Vec<u8>, field: &'static str, nodes: &[NodeId]) -> Result<(), FrameError> {
    out.push(count_u8(field, nodes.len())?);
    for n in nodes {
        out.extend_from_slice(&n.0.to_be_bytes());
    }
    Ok(())
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    match frame {
        Frame::Data(d) => {
            if d.components.is_empty() {
                return Err(FrameError::NoComponents);
            }
            let expected = d.components.iter().map(|c| c.payload_len as usize).max().unwrap_or(0);
            if d.xor_payload.len() != expected {
                return Err(FrameError::PayloadLength { expected, actual: d.xor_payload.len() });
            }
            out.push(TYPE_DATA);
            out.push(count_u8("components", d.components.len())?);
            put_nodes(&mut out, "recipients", &d.recipients)?;
            for c in &d.components {
                out.extend_from_slice(&c.packet_id.to_be_bytes());
                out.extend_from_slice(&c.src.0.to_be_bytes());
                out.extend_from_slice(&c.dst.0.to_be_bytes());
                out.extend_from_slice(&c.created_at.to_be_bytes());
                out.extend_from_slice(&c.payload_len.to_be_bytes());
                put_nodes(&mut out, "sp_route", &c.sp_route)?;
                put_nodes(&mut out, "forwarding_set", &c.forwarding_set)?;
                put_nodes(&mut out, "traversed", &c.traversed)?;
                put_nodes(&mut out, "overheard", &c.overheard)?;
            }
            out.extend_from_slice(&d.xor_payload);
        }
        Frame::Announce(a) => {
            out.push(TYPE_ANNOUNCE);
            out.extend_from_slice(&a.sender.0.to_be_bytes());
            out.push(count_u8("packet_ids", a.packet_ids.len())?);
            for id in &a.packet_ids {
                out.extend_from_slice(&id.to_be_bytes());
            }
        }
        Frame::Ack(a) => {
            out.push(TYPE_ACK);
            out.extend_from_slice(&a.packet_id.to_be_bytes());
            out.extend_from_slice(&a.dst_reached.0.to_be_bytes());
            out.extend_from_slice(&a.src.0.to_be_bytes());
        }
        Frame::Probe(p) => {
            out.push(TYPE_PROBE);
            out.extend_from_slice(&p.sender.0.to_be_bytes());
            out.extend_from_slice(&p.seq.to_be_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(FrameError::Truncated { missing: n - left });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn nodes(&mut self) -> Result<Vec<NodeId>, FrameError> {
        let n = self.u8()? as usize;
        (0..n).map(|_| self.u16().map(NodeId)).collect()
    }

    fn finish(&self) -> Result<(), FrameError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(FrameError::TrailingBytes { extra }),
        }
    }
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let kind = r.take(1).map_err(|_| FrameError::Empty)?[0];
    let frame = match kind {
        TYPE_DATA => {
            // NC of 0 or 1 both mean native
            let nc = (r.u8()? as usize).max(1);
            let recipients = r.nodes()?;
            let mut components = Vec::with_capacity(nc);
            for _ in 0..nc {
                let packet_id = r.u32()?;
                let src = NodeId(r.u16()?);
                let dst = NodeId(r.u16()?);
                let created_at = r.u32()?;
                let payload_len = r.u16()?;
                components.push(NativePacketDescriptor {
                    packet_id,
                    src,
                    dst,
                    created_at,
                    payload_len,
                    sp_route: r.nodes()?,
                    forwarding_set: r.nodes()?,
                    traversed: r.nodes()?,
                    overheard: r.nodes()?,
                });
            }
            let len = components.iter().map(|c| c.payload_len as usize).max().unwrap_or(0);
            let xor_payload = r.take(len)?.to_vec();
            Frame::Data(DataFrame { components, recipients, xor_payload })
        }
        TYPE_ANNOUNCE => {
            let sender = NodeId(r.u16()?);
            let n = r.u8()? as usize;
            let packet_ids = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
            Frame::Announce(AnnounceFrame { sender, packet_ids })
        }
        TYPE_ACK => Frame::Ack(AckFrame {
            packet_id: r.u32()?,
            dst_reached: NodeId(r.u16()?),
            src: NodeId(r.u16()?),
        }),
        TYPE_PROBE => Frame::Probe(ProbeFrame { sender: NodeId(r.u16()?), seq: r.u32()? }),
        other => return Err(FrameError::UnknownType(other)),
    };
    r.finish()?;
    Ok(frame)
}

/// Seconds on air at `bitrate` bits/s, including the MAC overhead.
pub fn frame_airtime(frame: &Frame, bitrate: f64) -> f64 {
    frame_airtime_with_overhead(frame, bitrate, MAC_OVERHEAD_BYTES)
}

pub fn frame_airtime_with_overhead(frame: &Frame, bitrate: f64, overhead: usize) -> f64 {
    ((frame.encoded_len() + overhead) * 8) as f64 / bitrate
}
