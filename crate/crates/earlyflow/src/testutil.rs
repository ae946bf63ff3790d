//! Test fixtures: a scripted Ethernet/IPv4/TCP frame builder that writes
//! every field at its documented byte offset, independent of the synth
//! generator and the parser it checks.

use crate::capture::{Timestamp, TcpFlags};

#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub src_ip: [u8; 4],
    pub dst_ip: [u8; 4],
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: u8,
    pub payload: Vec<u8>,
    /// Extra IPv4 option bytes (padded to a multiple of 4).
    pub ip_options: usize,
    /// Extra TCP option bytes (padded to a multiple of 4).
    pub tcp_options: usize,
    /// Number of 802.1Q tags between the MACs and the ethertype.
    pub vlan_tags: usize,
    pub frag_offset: u16,
    pub more_fragments: bool,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            src_ip: [10, 0, 0, 1],
            dst_ip: [10, 0, 0, 2],
            src_port: 40_000,
            dst_port: 80,
            flags: TcpFlags::ACK,
            payload: Vec::new(),
            ip_options: 0,
            tcp_options: 0,
            vlan_tags: 0,
            frag_offset: 0,
            more_fragments: false,
        }
    }
}

impl FrameSpec {
    pub fn syn(src_port: u16, dst_port: u16) -> Self {
        Self {
            src_port,
            dst_port,
            flags: TcpFlags::SYN,
            ..Self::default()
        }
    }

    pub fn with_payload(mut self, payload: &[u8]) -> Self {
        self.payload = payload.to_vec();
        self
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.flags = flags;
        self
    }

    pub fn reversed(mut self) -> Self {
        std::mem::swap(&mut self.src_ip, &mut self.dst_ip);
        std::mem::swap(&mut self.src_port, &mut self.dst_port);
        self
    }

    /// Lay the frame out byte by byte.
    pub fn build(&self) -> Vec<u8> {
        let ip_opt = self.ip_options.next_multiple_of(4);
        let tcp_opt = self.tcp_options.next_multiple_of(4);
        let ip_header_len = 20 + ip_opt;
        let tcp_header_len = 20 + tcp_opt;
        let total_len = ip_header_len + tcp_header_len + self.payload.len();
        let link_len = 14 + 4 * self.vlan_tags;

        let mut f = Vec::with_capacity(link_len + total_len);
        // Ethernet: dst MAC, src MAC.
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
        for tag in 0..self.vlan_tags {
            f.extend_from_slice(&0x8100u16.to_be_bytes());
            f.extend_from_slice(&(100 + tag as u16).to_be_bytes());
        }
        f.extend_from_slice(&0x0800u16.to_be_bytes());

        // IPv4 header.
        f.push(0x40 | (ip_header_len / 4) as u8); // version + IHL
        f.push(0); // DSCP/ECN
        f.extend_from_slice(&(total_len as u16).to_be_bytes());
        f.extend_from_slice(&0x1234u16.to_be_bytes()); // identification
        let mut flags_frag = self.frag_offset & 0x1fff;
        if self.more_fragments {
            flags_frag |= 0x2000;
        }
        f.extend_from_slice(&flags_frag.to_be_bytes());
        f.push(64); // TTL
        f.push(6); // protocol TCP
        f.extend_from_slice(&[0, 0]); // checksum left zero
        f.extend_from_slice(&self.src_ip);
        f.extend_from_slice(&self.dst_ip);
        f.extend(std::iter::repeat_n(0u8, ip_opt));

        // TCP header.
        f.extend_from_slice(&self.src_port.to_be_bytes());
        f.extend_from_slice(&self.dst_port.to_be_bytes());
        f.extend_from_slice(&1000u32.to_be_bytes()); // seq
        f.extend_from_slice(&2000u32.to_be_bytes()); // ack
        f.push(((tcp_header_len / 4) as u8) << 4);
        f.push(self.flags);
        f.extend_from_slice(&8192u16.to_be_bytes()); // window
        f.extend_from_slice(&[0, 0, 0, 0]); // checksum + urgent ptr
        f.extend(std::iter::repeat_n(0u8, tcp_opt));

        f.extend_from_slice(&self.payload);
        f
    }
}

pub fn ts(secs: u64, micros: u32) -> Timestamp {
    Timestamp::new(secs, micros)
}
