//! Bidirectional TCP flow assembly.
//!
//! Packets from both directions of a connection land in one [`Flow`] keyed
//! by the canonical (unordered) endpoint pair. Flows leave the table when
//! the TCP teardown completes (FIN seen in both directions, or any RST),
//! when they sit idle longer than the configured timeout, or when an
//! optional capacity bound evicts the least-recently-updated flow.
//!
//! Iteration and expiry order is deterministic: the table is a `BTreeMap`
//! over canonical keys.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::capture::{NonFlowablePacket, ParsedPacket, Protocol, Timestamp};
use crate::preprocess::{vectorize_packet, PacketVector, VectorizerConfig};

/// One side of a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Canonical bidirectional key: `endpoint_a` is the lexicographically
/// smaller (ip, port) pair, so both directions of a connection map to the
/// same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<->{}", self.endpoint_a, self.endpoint_b)
    }
}

/// Direction of a packet relative to its flow's canonical key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    AToB,
    BToA,
}

/// Why a flow stopped accumulating packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowState {
    Active,
    /// FIN observed in both directions, or RST in either.
    TerminatedFin,
    /// Idle longer than the table timeout.
    TerminatedTimeout,
}

/// Computes the canonical key for a parsed packet.
pub fn flow_key_of(pkt: &ParsedPacket) -> Result<FlowKey, NonFlowablePacket> {
    if pkt.protocol != Protocol::Tcp {
        return Err(NonFlowablePacket);
    }
    let src = Endpoint {
        ip: pkt.src_ip,
        port: pkt.src_port,
    };
    let dst = Endpoint {
        ip: pkt.dst_ip,
        port: pkt.dst_port,
    };
    let (endpoint_a, endpoint_b) = if src <= dst { (src, dst) } else { (dst, src) };
    Ok(FlowKey {
        endpoint_a,
        endpoint_b,
    })
}

/// An assembled bidirectional flow: vectorized packets in arrival order
/// plus the bookkeeping needed for termination and labeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flow {
    pub key: FlowKey,
    /// Vectorized packets from both directions, in arrival order.
    pub packets: Vec<PacketVector>,
    /// Arrival direction of each packet, parallel to `packets`.
    pub directions: Vec<Direction>,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    pub state: FlowState,
    /// Direction of the first packet seen; identifies the initiator when
    /// the capture includes the connection start.
    pub initiator: Direction,
    /// Class index assigned by labeling; `None` until labeled.
    pub label: Option<usize>,
    fin_a: bool,
    fin_b: bool,
}

impl Flow {
    fn new(key: FlowKey, ts: Timestamp, initiator: Direction) -> Self {
        Self {
            key,
            packets: Vec::new(),
            directions: Vec::new(),
            first_ts: ts,
            last_ts: ts,
            state: FlowState::Active,
            initiator,
            label: None,
            fin_a: false,
            fin_b: false,
        }
    }

    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    pub fn duration_secs(&self) -> f64 {
        (self.last_ts.micros_since(self.first_ts)) as f64 / 1e6
    }
}

/// Direction of `pkt` relative to `key`. Packets between identical
/// endpoints report `AToB`.
pub fn direction_of(pkt: &ParsedPacket, key: &FlowKey) -> Direction {
    let src = Endpoint {
        ip: pkt.src_ip,
        port: pkt.src_port,
    };
    if src == key.endpoint_a {
        Direction::AToB
    } else {
        Direction::BToA
    }
}

/// Applies a packet's TCP flags to the flow's termination bookkeeping.
///
/// Returns the new state when the packet terminates the flow: RST ends it
/// immediately; FIN ends it once both directions have sent one.
pub fn on_packet_flags(flow: &mut Flow, pkt: &ParsedPacket) -> Option<FlowState> {
    if flow.state != FlowState::Active {
        return None;
    }
    if pkt.tcp_flags.rst() {
        flow.state = FlowState::TerminatedFin;
        return Some(flow.state);
    }
    if pkt.tcp_flags.fin() {
        match direction_of(pkt, &flow.key) {
            Direction::AToB => flow.fin_a = true,
            Direction::BToA => flow.fin_b = true,
        }
        if flow.fin_a && flow.fin_b {
            flow.state = FlowState::TerminatedFin;
            return Some(flow.state);
        }
    }
    None
}

/// Flow-table tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTableConfig {
    /// Idle flows strictly older than this are expired.
    pub timeout_secs: f64,
    /// When set, inserting beyond this many active flows evicts the
    /// least-recently-updated one.
    pub max_flows: Option<usize>,
    pub vectorizer: VectorizerConfig,
}

impl Default for FlowTableConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 120.0,
            max_flows: None,
            vectorizer: VectorizerConfig::default(),
        }
    }
}

/// What happened when a packet was ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IngestEvent {
    Created,
    Appended,
}

/// Result of [`FlowTable::upsert_packet`].
#[derive(Debug, Default)]
pub struct Ingest {
    pub event: Option<IngestEvent>,
    /// Flow that idled out and was replaced by a new flow under the same key.
    pub timed_out: Option<Flow>,
    /// Flow completed by this packet (FIN both ways or RST).
    pub terminated: Option<Flow>,
    /// Flow evicted to honor `max_flows`.
    pub evicted: Option<Flow>,
}

/// The active-flow table.
#[derive(Debug, Default)]
pub struct FlowTable {
    cfg: FlowTableConfig,
    flows: BTreeMap<FlowKey, Flow>,
}

impl FlowTable {
    pub fn new(cfg: FlowTableConfig) -> Self {
        Self {
            cfg,
            flows: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn get(&self, key: &FlowKey) -> Option<&Flow> {
        self.flows.get(key)
    }

    fn idle_exceeded(&self, flow: &Flow, now: Timestamp) -> bool {
        now.micros_since(flow.last_ts) as f64 / 1e6 > self.cfg.timeout_secs
    }

    /// Routes one packet into its flow, creating the flow if needed.
    ///
    /// A packet arriving for a key whose current flow has been idle past
    /// the timeout closes that flow as [`FlowState::TerminatedTimeout`] and
    /// starts a fresh one; the packet joins the new flow only.
    pub fn upsert_packet(
        &mut self,
        pkt: &ParsedPacket,
        ts: Timestamp,
    ) -> Result<Ingest, NonFlowablePacket> {
        let key = flow_key_of(pkt)?;
        let vector = vectorize_packet(pkt, &self.cfg.vectorizer)?;
        let mut out = Ingest::default();

        if let Some(existing) = self.flows.get(&key) {
            if self.idle_exceeded(existing, ts) {
                let mut old = self.flows.remove(&key).unwrap();
                old.state = FlowState::TerminatedTimeout;
                out.timed_out = Some(old);
            }
        }

        let dir_seed = direction_of(pkt, &key);
        let flow = self.flows.entry(key).or_insert_with(|| {
            out.event = Some(IngestEvent::Created);
            Flow::new(key, ts, dir_seed)
        });
        if out.event.is_none() {
            out.event = Some(IngestEvent::Appended);
        }

        flow.packets.push(vector);
        flow.directions.push(direction_of(pkt, &key));
        flow.last_ts = ts;
        if on_packet_flags(flow, pkt).is_some() {
            out.terminated = self.flows.remove(&key);
        }

        if let Some(cap) = self.cfg.max_flows {
            if self.flows.len() > cap {
                out.evicted = self.evict_lru();
            }
        }
        Ok(out)
    }

    /// Removes the least-recently-updated flow (ties broken by key order).
    fn evict_lru(&mut self) -> Option<Flow> {
        let key = self
            .flows
            .iter()
            .min_by(|(ka, fa), (kb, fb)| fa.last_ts.cmp(&fb.last_ts).then(ka.cmp(kb)))
            .map(|(k, _)| *k)?;
        let mut flow = self.flows.remove(&key)?;
        flow.state = FlowState::TerminatedTimeout;
        Some(flow)
    }

    /// Removes and returns every flow idle strictly longer than the
    /// timeout at `now`, in key order.
    pub fn expire_flows(&mut self, now: Timestamp) -> Vec<Flow> {
        let stale: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, f)| self.idle_exceeded(f, now))
            .map(|(k, _)| *k)
            .collect();
        stale
            .into_iter()
            .map(|k| {
                let mut f = self.flows.remove(&k).unwrap();
                f.state = FlowState::TerminatedTimeout;
                f
            })
            .collect()
    }

    /// Removes and returns all remaining flows in key order, marking the
    /// still-active ones as timed out. Call at end of capture.
    pub fn drain(&mut self) -> Vec<Flow> {
        let flows = std::mem::take(&mut self.flows);
        flows
            .into_values()
            .map(|mut f| {
                if f.state == FlowState::Active {
                    f.state = FlowState::TerminatedTimeout;
                }
                f
            })
            .collect()
    }
}

/// Runs a whole packet sequence through a fresh table and returns every
/// flow in emission order: terminated/timed-out flows as they complete,
/// then the end-of-capture drain in key order.
pub fn assemble_flows<'a, I>(packets: I, cfg: FlowTableConfig) -> Vec<Flow>
where
    I: IntoIterator<Item = &'a ParsedPacket>,
{
    let mut table = FlowTable::new(cfg);
    let mut out = Vec::new();
    for pkt in packets {
        let ts = pkt.timestamp;
        let Ok(ingest) = table.upsert_packet(pkt, ts) else {
            continue;
        };
        if let Some(f) = ingest.timed_out {
            out.push(f);
        }
        if let Some(f) = ingest.terminated {
            out.push(f);
        }
        if let Some(f) = ingest.evicted {
            out.push(f);
        }
    }
    out.extend(table.drain());
    out
}
