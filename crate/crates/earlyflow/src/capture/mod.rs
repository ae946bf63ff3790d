//! Packet acquisition: savefile reading, frame decoding, and the
//! attack-relevance filter.
//!
//! Only Ethernet/IPv4/TCP is decoded in full; anything else surfaces as
//! [`Protocol::Other`] with empty transport/payload spans so callers can
//! count and drop it. VLAN tags and IPv4 options are handled by adjusting
//! the header spans. IPv4 fragments are not reassembled; the reader counts
//! and skips them.

mod savefile;

pub use savefile::{Record, SavefileReader, SavefileWriter, MICROS_MAGIC, MICROS_MAGIC_SWAPPED};

use std::fmt;
use std::net::Ipv4Addr;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capture timestamp: seconds plus microseconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub secs: u64,
    pub micros: u32,
}

impl Timestamp {
    pub fn new(secs: u64, micros: u32) -> Self {
        Self {
            secs: secs + (micros / 1_000_000) as u64,
            micros: micros % 1_000_000,
        }
    }

    pub fn from_micros(total: u64) -> Self {
        Self {
            secs: total / 1_000_000,
            micros: (total % 1_000_000) as u32,
        }
    }

    pub fn as_micros(&self) -> u64 {
        self.secs * 1_000_000 + self.micros as u64
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.secs as f64 + self.micros as f64 * 1e-6
    }

    /// Microseconds elapsed since `earlier`, zero if `earlier` is later.
    pub fn micros_since(&self, earlier: Timestamp) -> u64 {
        self.as_micros().saturating_sub(earlier.as_micros())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.secs, self.micros)
    }
}

/// Transport protocol of a decoded frame. Only TCP packets can join flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Other,
}

/// TCP flag bits as found in byte 13 of the TCP header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;

    pub fn fin(&self) -> bool {
        self.0 & Self::FIN != 0
    }
    pub fn syn(&self) -> bool {
        self.0 & Self::SYN != 0
    }
    pub fn rst(&self) -> bool {
        self.0 & Self::RST != 0
    }
    pub fn psh(&self) -> bool {
        self.0 & Self::PSH != 0
    }
    pub fn ack(&self) -> bool {
        self.0 & Self::ACK != 0
    }
    pub fn urg(&self) -> bool {
        self.0 & Self::URG != 0
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (Self::SYN, "SYN"),
            (Self::FIN, "FIN"),
            (Self::RST, "RST"),
            (Self::PSH, "PSH"),
            (Self::ACK, "ACK"),
            (Self::URG, "URG"),
        ];
        let mut first = true;
        for (bit, name) in names {
            if self.0 & bit != 0 {
                if !first {
                    write!(f, "|")?;
                }
                write!(f, "{name}")?;
                first = false;
            }
        }
        if first {
            write!(f, "-")?;
        }
        Ok(())
    }
}

/// Link layer of the frames handed to [`parse_packet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    Other(u32),
}

/// A decoded frame: the raw bytes plus spans locating each layer.
///
/// Spans are disjoint and ordered link < net < transport < payload.
/// Non-IPv4 or non-TCP frames carry `protocol == Other` with empty
/// transport and payload spans. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub timestamp: Timestamp,
    frame: Vec<u8>,
    link_span: Range<usize>,
    net_span: Range<usize>,
    transport_span: Range<usize>,
    payload_span: Range<usize>,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub tcp_flags: TcpFlags,
    /// IPv4 fragment (offset > 0 or more-fragments set); skipped by readers.
    pub is_fragment: bool,
}

impl ParsedPacket {
    pub fn link_header(&self) -> &[u8] {
        &self.frame[self.link_span.clone()]
    }

    pub fn net_header(&self) -> &[u8] {
        &self.frame[self.net_span.clone()]
    }

    pub fn transport_header(&self) -> &[u8] {
        &self.frame[self.transport_span.clone()]
    }

    pub fn payload(&self) -> &[u8] {
        &self.frame[self.payload_span.clone()]
    }

    pub fn frame_len(&self) -> usize {
        self.frame.len()
    }
}

/// Frame that could not be decoded against its declared lengths.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed frame: {0}")]
pub struct MalformedFrame(pub String);

/// Operation that requires a TCP packet was given `protocol == Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("packet is not part of a TCP flow")]
pub struct NonFlowablePacket;

/// Errors from capture-file access.
#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("unsupported capture format: {0}")]
    UnsupportedCaptureFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;
const IPPROTO_TCP: u8 = 6;

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

/// Decodes one captured frame into spans and addressing fields.
///
/// Frames that are well formed but not Ethernet/IPv4/TCP come back with
/// `protocol == Other` and empty transport/payload spans; frames whose
/// declared lengths exceed the captured bytes are [`MalformedFrame`] and
/// the caller is expected to count and skip them. Never reads beyond the
/// supplied slice.
pub fn parse_packet(
    raw_frame: &[u8],
    link_type: LinkType,
    timestamp: Timestamp,
) -> Result<ParsedPacket, MalformedFrame> {
    if link_type != LinkType::Ethernet {
        return Err(MalformedFrame("only Ethernet link type is decoded".into()));
    }
    if raw_frame.len() < 14 {
        return Err(MalformedFrame(format!(
            "frame of {} bytes is shorter than an Ethernet header",
            raw_frame.len()
        )));
    }

    let mut ethertype = be16(raw_frame, 12);
    let mut link_end = 14;
    // 802.1Q / 802.1ad tags sit between the MAC addresses and the ethertype.
    while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
        if raw_frame.len() < link_end + 4 {
            return Err(MalformedFrame("truncated VLAN tag".into()));
        }
        ethertype = be16(raw_frame, link_end + 2);
        link_end += 4;
    }

    let other = |frame: &[u8]| ParsedPacket {
        timestamp,
        frame: frame.to_vec(),
        link_span: 0..link_end,
        net_span: link_end..link_end,
        transport_span: link_end..link_end,
        payload_span: link_end..link_end,
        src_ip: Ipv4Addr::UNSPECIFIED,
        dst_ip: Ipv4Addr::UNSPECIFIED,
        src_port: 0,
        dst_port: 0,
        protocol: Protocol::Other,
        tcp_flags: TcpFlags::default(),
        is_fragment: false,
    };

    if ethertype != ETHERTYPE_IPV4 {
        return Ok(other(raw_frame));
    }

    let ip_start = link_end;
    if raw_frame.len() < ip_start + 20 {
        return Err(MalformedFrame("truncated IPv4 header".into()));
    }
    let vihl = raw_frame[ip_start];
    if vihl >> 4 != 4 {
        return Ok(other(raw_frame));
    }
    let ihl = (vihl & 0x0f) as usize;
    if ihl < 5 {
        return Err(MalformedFrame(format!("IHL {ihl} below minimum 5")));
    }
    let ip_header_len = ihl * 4;
    let total_len = be16(raw_frame, ip_start + 2) as usize;
    if total_len < ip_header_len {
        return Err(MalformedFrame(format!(
            "IPv4 total length {total_len} shorter than header {ip_header_len}"
        )));
    }
    // Ethernet pads short frames, so the frame may run past the IP datagram,
    // but the datagram itself must fit in the captured bytes.
    if ip_start + total_len > raw_frame.len() {
        return Err(MalformedFrame(format!(
            "IPv4 total length {total_len} exceeds captured frame"
        )));
    }
    let ip_end = ip_start + ip_header_len;
    if ip_end > ip_start + total_len {
        return Err(MalformedFrame("IPv4 options exceed total length".into()));
    }

    let flags_frag = be16(raw_frame, ip_start + 6);
    let more_fragments = flags_frag & 0x2000 != 0;
    let frag_offset = flags_frag & 0x1fff;
    let is_fragment = more_fragments || frag_offset != 0;

    let ip_proto = raw_frame[ip_start + 9];
    let src_ip = Ipv4Addr::new(
        raw_frame[ip_start + 12],
        raw_frame[ip_start + 13],
        raw_frame[ip_start + 14],
        raw_frame[ip_start + 15],
    );
    let dst_ip = Ipv4Addr::new(
        raw_frame[ip_start + 16],
        raw_frame[ip_start + 17],
        raw_frame[ip_start + 18],
        raw_frame[ip_start + 19],
    );

    if ip_proto != IPPROTO_TCP || is_fragment {
        let mut pkt = other(raw_frame);
        pkt.net_span = ip_start..ip_end;
        pkt.src_ip = src_ip;
        pkt.dst_ip = dst_ip;
        pkt.is_fragment = is_fragment;
        return Ok(pkt);
    }

    let tcp_start = ip_end;
    let datagram_end = ip_start + total_len;
    if datagram_end < tcp_start + 20 {
        return Err(MalformedFrame("truncated TCP header".into()));
    }
    let data_offset = (raw_frame[tcp_start + 12] >> 4) as usize;
    if data_offset < 5 {
        return Err(MalformedFrame(format!(
            "TCP data offset {data_offset} below minimum 5"
        )));
    }
    let tcp_header_len = data_offset * 4;
    let tcp_end = tcp_start + tcp_header_len;
    if tcp_end > datagram_end {
        return Err(MalformedFrame(
            "TCP header runs past the IPv4 datagram".into(),
        ));
    }

    Ok(ParsedPacket {
        timestamp,
        frame: raw_frame.to_vec(),
        link_span: 0..link_end,
        net_span: ip_start..ip_end,
        transport_span: tcp_start..tcp_end,
        payload_span: tcp_end..datagram_end,
        src_ip,
        dst_ip,
        src_port: be16(raw_frame, tcp_start),
        dst_port: be16(raw_frame, tcp_start + 2),
        protocol: Protocol::Tcp,
        tcp_flags: TcpFlags(raw_frame[tcp_start + 13] & 0x3f),
        is_fragment: false,
    })
}

/// Which packets are relevant to the attacks being watched for.
///
/// An empty set accepts everything for that dimension. Port matching is
/// satisfied by either endpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterSpec {
    pub ports: Vec<u16>,
    pub protocols: Vec<Protocol>,
}

impl FilterSpec {
    /// Accept-all filter.
    pub fn any() -> Self {
        Self::default()
    }

    /// TCP traffic touching the given ports.
    pub fn tcp_ports(ports: &[u16]) -> Self {
        Self {
            ports: ports.to_vec(),
            protocols: vec![Protocol::Tcp],
        }
    }
}

/// True iff the packet passes `spec` (protocol and either-endpoint port).
pub fn matches_filter(pkt: &ParsedPacket, spec: &FilterSpec) -> bool {
    let proto_ok = spec.protocols.is_empty() || spec.protocols.contains(&pkt.protocol);
    let port_ok = spec.ports.is_empty()
        || spec.ports.contains(&pkt.src_port)
        || spec.ports.contains(&pkt.dst_port);
    proto_ok && port_ok
}

/// Per-stream bookkeeping: `read` covers every record seen, and
/// `read = yielded + malformed + filtered_out + fragmented`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureCounts {
    pub read: u64,
    pub malformed: u64,
    pub filtered_out: u64,
    pub fragmented: u64,
}

/// Anything that hands decoded packets to the pipeline, one consumer at a
/// time: the savefile reader, the replay source, or a platform sniffer
/// plugged in behind this trait.
pub trait PacketSource {
    /// Next packet passing the source's filter, or `None` at end of stream.
    fn next_packet(&mut self) -> Option<Result<ParsedPacket, CaptureError>>;

    /// Counters accumulated so far.
    fn counts(&self) -> CaptureCounts;
}

/// Opens a capture savefile and yields its packets in file order, filtered
/// by `spec`. Malformed frames and IPv4 fragments are counted and skipped.
pub fn read_capture(
    path: impl AsRef<Path>,
    spec: FilterSpec,
) -> Result<CaptureStream, CaptureError> {
    let reader = SavefileReader::open(path)?;
    Ok(CaptureStream {
        reader,
        spec,
        counts: CaptureCounts::default(),
    })
}

/// Iterator over the filtered packets of one savefile.
pub struct CaptureStream {
    reader: SavefileReader,
    spec: FilterSpec,
    counts: CaptureCounts,
}

impl CaptureStream {
    pub fn counts(&self) -> CaptureCounts {
        self.counts
    }

    pub fn link_type(&self) -> LinkType {
        self.reader.link_type()
    }

    /// Drains the stream, returning all packets plus final counters.
    pub fn collect_packets(mut self) -> Result<(Vec<ParsedPacket>, CaptureCounts), CaptureError> {
        let mut packets = Vec::new();
        while let Some(pkt) = self.next_packet() {
            packets.push(pkt?);
        }
        Ok((packets, self.counts))
    }
}

impl PacketSource for CaptureStream {
    fn next_packet(&mut self) -> Option<Result<ParsedPacket, CaptureError>> {
        loop {
            let record = match self.reader.next_record() {
                Some(Ok(r)) => r,
                Some(Err(e)) => return Some(Err(e)),
                None => return None,
            };
            self.counts.read += 1;
            match parse_packet(&record.data, self.reader.link_type(), record.timestamp) {
                Ok(pkt) => {
                    if pkt.is_fragment {
                        self.counts.fragmented += 1;
                    } else if matches_filter(&pkt, &self.spec) {
                        return Some(Ok(pkt));
                    } else {
                        self.counts.filtered_out += 1;
                    }
                }
                Err(_) => {
                    self.counts.malformed += 1;
                }
            }
        }
    }

    fn counts(&self) -> CaptureCounts {
        self.counts
    }
}

impl Iterator for CaptureStream {
    type Item = Result<ParsedPacket, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet()
    }
}
