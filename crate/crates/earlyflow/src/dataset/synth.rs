//! Synthetic traffic generator: a desk-scale stand-in for a labeled IDS
//! corpus. Emits a capture file plus a matching label file, deterministic
//! in the seed, with classes separable by their payload patterns.

use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{CaptureError, SavefileWriter, TcpFlags, Timestamp};

/// How a class fills its data-packet payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadPattern {
    /// Printable ASCII noise (0x20..=0x7E) — benign traffic.
    RandomAscii,
    /// ASCII noise with a fixed marker spliced in at the front of a data
    /// packet: in every data packet when `at_packet` is `None`, otherwise
    /// only in the 1-based `at_packet`-th data packet.
    Marker {
        bytes: Vec<u8>,
        at_packet: Option<usize>,
    },
}

/// One traffic class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSynth {
    pub name: String,
    pub flows: usize,
    pub pattern: PayloadPattern,
    /// Uniform inclusive range of data packets per flow.
    pub data_packets: (usize, usize),
    /// Uniform inclusive range of payload bytes per data packet.
    pub payload_len: (usize, usize),
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<ClassSynth>,
    /// Emit SYN / SYN-ACK / ACK before the data packets.
    pub handshake: bool,
    /// Emit a FIN-ACK in each direction after the data packets.
    pub teardown: bool,
    /// Gap between consecutive flow starts, microseconds.
    pub flow_spacing_micros: u64,
    /// Uniform inclusive range of intra-flow packet gaps, microseconds.
    pub packet_gap_micros: (u64, u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub flows_per_class: Vec<usize>,
    pub packets_written: usize,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generator needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0:?}: {1}")]
    BadClass(String, String),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

struct PendingFrame {
    ts: Timestamp,
    frame: Vec<u8>,
}

/// Builds one Ethernet/IPv4/TCP frame. Checksums are left zero — the
/// parser does not verify them, and real capture replays often carry
/// offloaded (wrong) checksums anyway.
fn build_frame(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    seq: u32,
    flags: u8,
    payload: &[u8],
) -> Vec<u8> {
    let total_len = 20 + 20 + payload.len();
    let mut f = Vec::with_capacity(14 + total_len);
    // Ethernet: synthetic locally-administered MACs.
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&0x0800u16.to_be_bytes());
    // IPv4, no options.
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&(total_len as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0]); // identification
    f.extend_from_slice(&[0x40, 0]); // DF, fragment offset 0
    f.push(64); // TTL
    f.push(6); // TCP
    f.extend_from_slice(&[0, 0]); // header checksum (unverified)
    f.extend_from_slice(&src_ip.octets());
    f.extend_from_slice(&dst_ip.octets());
    // TCP, no options.
    f.extend_from_slice(&src_port.to_be_bytes());
    f.extend_from_slice(&dst_port.to_be_bytes());
    f.extend_from_slice(&seq.to_be_bytes());
    f.extend_from_slice(&0u32.to_be_bytes()); // ack number
    f.push(5 << 4); // data offset 5 words
    f.push(flags);
    f.extend_from_slice(&1024u16.to_be_bytes()); // window
    f.extend_from_slice(&[0, 0, 0, 0]); // checksum + urgent
    f.extend_from_slice(payload);
    f
}

/// Generates the capture and label files. Deterministic: the same spec
/// and seed produce byte-identical outputs.
pub fn synth_generate(
    spec: &SynthSpec,
    seed: u64,
    capture_path: &Path,
    labels_path: &Path,
) -> Result<SynthSummary, SynthError> {
    if spec.classes.len() < 2 {
        return Err(SynthError::TooFewClasses(spec.classes.len()));
    }
    for class in &spec.classes {
        if class.flows == 0 {
            return Err(SynthError::BadClass(class.name.clone(), "zero flows".into()));
        }
        if class.data_packets.0 > class.data_packets.1 || class.data_packets.0 == 0 {
            return Err(SynthError::BadClass(
                class.name.clone(),
                format!("bad data-packet range {:?}", class.data_packets),
            ));
        }
        if class.payload_len.0 > class.payload_len.1 {
            return Err(SynthError::BadClass(
                class.name.clone(),
                format!("bad payload-length range {:?}", class.payload_len),
            ));
        }
        if let PayloadPattern::Marker { bytes, .. } = &class.pattern {
            if bytes.is_empty() {
                return Err(SynthError::BadClass(class.name.clone(), "empty marker".into()));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames: Vec<PendingFrame> = Vec::new();
    let mut label_rows: Vec<String> = Vec::new();
    let server_ip = Ipv4Addr::new(192, 168, 0, 1);
    let server_port = 80u16;
    let mut flow_index = 0u64;

    for (class_id, class) in spec.classes.iter().enumerate() {
        for i in 0..class.flows {
            // Unique client endpoint per flow: walk the 10.class.x.y space
            // and the ephemeral port range.
            let client_ip = Ipv4Addr::new(
                10,
                class_id as u8,
                (i / 200) as u8,
                (i % 200) as u8 + 1,
            );
            let client_port = 40_000 + (i % 20_000) as u16;
            let start = flow_index * spec.flow_spacing_micros;
            flow_index += 1;

            let mut t = start;
            let gap = |rng: &mut ChaCha8Rng| {
                rng.gen_range(spec.packet_gap_micros.0..=spec.packet_gap_micros.1)
            };
            let push = |t: u64, from_client: bool, flags: u8, payload: &[u8]| {
                let frame = if from_client {
                    build_frame(client_ip, server_ip, client_port, server_port, 1, flags, payload)
                } else {
                    build_frame(server_ip, client_ip, server_port, client_port, 1, flags, payload)
                };
                PendingFrame {
                    ts: Timestamp::from_micros(t),
                    frame,
                }
            };

            let mut flow_frames = Vec::new();
            if spec.handshake {
                flow_frames.push(push(t, true, TcpFlags::SYN, &[]));
                t += gap(&mut rng);
                flow_frames.push(push(t, false, TcpFlags::SYN | TcpFlags::ACK, &[]));
                t += gap(&mut rng);
                flow_frames.push(push(t, true, TcpFlags::ACK, &[]));
                t += gap(&mut rng);
            }
            let data_packets = rng.gen_range(class.data_packets.0..=class.data_packets.1);
            for p in 0..data_packets {
                let len = rng.gen_range(class.payload_len.0..=class.payload_len.1);
                let mut payload: Vec<u8> =
                    (0..len).map(|_| rng.gen_range(0x20..=0x7Eu8)).collect();
                if let PayloadPattern::Marker { bytes, at_packet } = &class.pattern {
                    let here = match at_packet {
                        Some(k) => p + 1 == *k,
                        None => true,
                    };
                    if here {
                        let n = bytes.len().min(payload.len());
                        payload[..n].copy_from_slice(&bytes[..n]);
                        if payload.len() < bytes.len() {
                            payload.extend_from_slice(&bytes[payload.len()..]);
                        }
                    }
                }
                // Alternate directions so both sides carry data.
                let from_client = p % 2 == 0;
                flow_frames.push(push(t, from_client, TcpFlags::PSH | TcpFlags::ACK, &payload));
                t += gap(&mut rng);
            }
            if spec.teardown {
                flow_frames.push(push(t, true, TcpFlags::FIN | TcpFlags::ACK, &[]));
                t += gap(&mut rng);
                flow_frames.push(push(t, false, TcpFlags::FIN | TcpFlags::ACK, &[]));
            }

            let first = flow_frames.first().map(|f| f.ts.as_secs_f64()).unwrap_or(0.0);
            let last = flow_frames.last().map(|f| f.ts.as_secs_f64()).unwrap_or(0.0);
            label_rows.push(format!(
                "{client_ip},{client_port},{server_ip},{server_port},tcp,{:.6},{:.6},{}",
                first - 1e-6,
                last + 1e-6,
                class.name
            ));
            frames.extend(flow_frames);
        }
    }

    // Interleave flows into one capture ordered by time. The sort must be
    // stable so equal timestamps keep generation order.
    frames.sort_by_key(|f| f.ts);
    let mut writer = SavefileWriter::create(capture_path)?;
    for f in &frames {
        writer.write_frame(f.ts, &f.frame)?;
    }
    writer.finish()?;

    let mut labels = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
    writeln!(
        labels,
        "src_ip,src_port,dst_ip,dst_port,protocol,start_ts,end_ts,label"
    )?;
    for row in &label_rows {
        writeln!(labels, "{row}")?;
    }
    labels.flush()?;

    Ok(SynthSummary {
        flows_per_class: spec.classes.iter().map(|c| c.flows).collect(),
        packets_written: frames.len(),
    })
}
