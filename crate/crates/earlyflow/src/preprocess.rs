//! Truncation and transformation: strip link/network headers, then crop or
//! zero-pad the transport header and payload into a fixed-length vector of
//! bytes scaled to [0, 1].
//!
//! Link and network headers never reach the classifier — MAC and IP
//! addressing is spoofable and environment-specific, so the model sees
//! only transport header bytes and payload bytes.

use serde::{Deserialize, Serialize};

use crate::capture::{NonFlowablePacket, ParsedPacket, Protocol};

/// Byte budgets for the two retained regions of each packet.
///
/// The vector dimension is `header_budget + payload_budget`; the defaults
/// give d = 448.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorizerConfig {
    pub header_budget: usize,
    pub payload_budget: usize,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self {
            header_budget: 48,
            payload_budget: 400,
        }
    }
}

impl VectorizerConfig {
    pub fn dim(&self) -> usize {
        self.header_budget + self.payload_budget
    }
}

/// One packet as the classifier sees it: transport header bytes followed by
/// payload bytes, each region cropped or zero-padded to its budget and every
/// byte divided by 255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketVector {
    pub values: Vec<f32>,
    pub header_len_kept: usize,
    pub payload_len_kept: usize,
}

impl PacketVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Returns only the transport-header and payload spans of a TCP packet.
pub fn strip_headers(pkt: &ParsedPacket) -> Result<(&[u8], &[u8]), NonFlowablePacket> {
    if pkt.protocol != Protocol::Tcp {
        return Err(NonFlowablePacket);
    }
    Ok((pkt.transport_header(), pkt.payload()))
}

/// Crops or zero-pads both regions to their budgets and scales bytes by 255.
///
/// Cropping keeps the leading bytes; padding appends zeros, so every slot
/// beyond the kept lengths is exactly 0.
pub fn vectorize(
    transport_bytes: &[u8],
    payload_bytes: &[u8],
    cfg: &VectorizerConfig,
) -> PacketVector {
    let mut values = vec![0.0f32; cfg.dim()];
    let header_len_kept = transport_bytes.len().min(cfg.header_budget);
    let payload_len_kept = payload_bytes.len().min(cfg.payload_budget);
    for (slot, &byte) in values.iter_mut().zip(&transport_bytes[..header_len_kept]) {
        *slot = byte as f32 / 255.0;
    }
    for (slot, &byte) in values[cfg.header_budget..]
        .iter_mut()
        .zip(&payload_bytes[..payload_len_kept])
    {
        *slot = byte as f32 / 255.0;
    }
    PacketVector {
        values,
        header_len_kept,
        payload_len_kept,
    }
}

/// [`strip_headers`] followed by [`vectorize`].
pub fn vectorize_packet(
    pkt: &ParsedPacket,
    cfg: &VectorizerConfig,
) -> Result<PacketVector, NonFlowablePacket> {
    let (transport, payload) = strip_headers(pkt)?;
    Ok(vectorize(transport, payload, cfg))
}
