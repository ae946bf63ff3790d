//! Paced replay of a capture through the live pipeline.
//!
//! A reader thread re-produces packets on the original schedule (scaled)
//! and hands them over a bounded queue to the flow-table/classifier
//! stage, which is the single writer of all shared state. Inter-arrival
//! is measured in wall-clock time at the producer's hand-off, prediction
//! latency as wall-clock time around `update_prediction` alone, so at
//! time_scale 0 the decision log stays byte-identical across runs (it
//! carries capture timestamps, never wall time).

use std::collections::HashMap;
use std::io::Write;
use std::net::UdpSocket;
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{
    matches_filter, parse_packet, read_capture, CaptureError, CaptureStream, FilterSpec, LinkType,
    PacketSource, ParsedPacket, SavefileReader, Timestamp,
};
use crate::classifier::{
    update_prediction, write_decision_record, DecisionRecord, DomainError, FlowPredictionState,
    PredictError, PredictionMode,
};
use crate::flowtable::{flow_key_of, Flow, FlowKey, FlowTable, FlowTableConfig};
use crate::nn::Model;

/// Hand-off depth between the pacing reader and the pipeline; a full
/// queue blocks the reader (no drops in file replay).
const QUEUE_DEPTH: usize = 256;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("replay i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("time scale {0} must be finite and >= 0")]
    BadTimeScale(f64),
}

impl From<DomainError> for ReplayError {
    fn from(e: DomainError) -> Self {
        ReplayError::Predict(e.into())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub threshold: f64,
    /// 1.0 replays at original pacing, 0.0 as fast as possible.
    pub time_scale: f64,
    pub filter: FilterSpec,
    pub flow: FlowTableConfig,
    pub mode: PredictionMode,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            time_scale: 1.0,
            filter: FilterSpec::any(),
            flow: FlowTableConfig::default(),
            mode: PredictionMode::Incremental,
        }
    }
}

/// Mean and nearest-rank percentiles of one latency/gap population, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(samples: &mut [f64]) -> Option<StatSummary> {
    if samples.is_empty() {
        return None;
    }
    samples.sort_by(f64::total_cmp);
    Some(StatSummary {
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        p50_ms: percentile(samples, 50.0),
        p95_ms: percentile(samples, 95.0),
        p99_ms: percentile(samples, 99.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    /// Well-formed packets taken from the source.
    pub packets_replayed: u64,
    /// Packets that passed the filter into the pipeline.
    pub packets_filtered: u64,
    /// Datagrams that would not parse (socket mode only).
    pub malformed_dropped: u64,
    pub interarrival_all: Option<StatSummary>,
    pub interarrival_filtered: Option<StatSummary>,
    pub prediction_latency: Option<StatSummary>,
    pub decisions_emitted: u64,
    pub flows_completed: u64,
    pub session_duration_secs: f64,
}

/// Pass iff the pipeline predicts faster than filtered traffic arrives
/// (strictly; a tie fails). Replays that measured nothing fail.
pub fn throughput_check(stats: &ReplayStats) -> bool {
    match (&stats.prediction_latency, &stats.interarrival_filtered) {
        (Some(lat), Some(gap)) => lat.mean_ms < gap.mean_ms,
        _ => false,
    }
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub stats: ReplayStats,
    /// Terminated flows in emission order plus the end-of-session drain,
    /// matching offline assembly over the same packets.
    pub flows: Vec<Flow>,
}

/// The single-writer stage: flow table, per-flow prediction state, stats.
struct LivePipeline<'a, W: Write> {
    model: &'a Model,
    cfg: &'a ReplayConfig,
    log: &'a mut W,
    table: FlowTable,
    states: HashMap<FlowKey, FlowPredictionState>,
    flows: Vec<Flow>,
    gaps_all_ms: Vec<f64>,
    gaps_filtered_ms: Vec<f64>,
    latencies_ms: Vec<f64>,
    prev_all: Option<Instant>,
    prev_filtered: Option<Instant>,
    packets_replayed: u64,
    packets_filtered: u64,
    malformed_dropped: u64,
    decisions_emitted: u64,
}

impl<'a, W: Write> LivePipeline<'a, W> {
    fn new(model: &'a Model, cfg: &'a ReplayConfig, log: &'a mut W) -> Self {
        Self {
            model,
            cfg,
            log,
            table: FlowTable::new(cfg.flow.clone()),
            states: HashMap::new(),
            flows: Vec::new(),
            gaps_all_ms: Vec::new(),
            gaps_filtered_ms: Vec::new(),
            latencies_ms: Vec::new(),
            prev_all: None,
            prev_filtered: None,
            packets_replayed: 0,
            packets_filtered: 0,
            malformed_dropped: 0,
            decisions_emitted: 0,
        }
    }

    fn forget(&mut self, flow: Flow) {
        self.states.remove(&flow.key);
        self.flows.push(flow);
    }

    fn ingest(&mut self, pkt: &ParsedPacket, arrived: Instant) -> Result<(), ReplayError> {
        self.packets_replayed += 1;
        if let Some(prev) = self.prev_all.replace(arrived) {
            self.gaps_all_ms.push((arrived - prev).as_secs_f64() * 1e3);
        }
        if !matches_filter(pkt, &self.cfg.filter) {
            return Ok(());
        }
        self.packets_filtered += 1;
        if let Some(prev) = self.prev_filtered.replace(arrived) {
            self.gaps_filtered_ms.push((arrived - prev).as_secs_f64() * 1e3);
        }
        let Ok(key) = flow_key_of(pkt) else {
            return Ok(());
        };
        let ingest = self
            .table
            .upsert_packet(pkt, pkt.timestamp)
            .expect("keyable packets vectorize");
        if let Some(old) = ingest.timed_out {
            self.forget(old);
        }
        let vector = match &ingest.terminated {
            Some(flow) => flow.packets.last().cloned(),
            None => self.table.get(&key).and_then(|f| f.packets.last().cloned()),
        };
        let Some(vector) = vector else {
            return Ok(());
        };
        let state = self
            .states
            .entry(key)
            .or_insert_with(|| FlowPredictionState::new(key, self.cfg.mode, false));
        let begun = Instant::now();
        let decision = update_prediction(state, self.model, &vector, self.cfg.threshold)?;
        self.latencies_ms.push(begun.elapsed().as_secs_f64() * 1e3);
        self.decisions_emitted += 1;
        write_decision_record(self.log, &DecisionRecord::new(&key, &decision, pkt.timestamp))?;
        if let Some(flow) = ingest.terminated {
            self.forget(flow);
        }
        if let Some(flow) = ingest.evicted {
            self.forget(flow);
        }
        Ok(())
    }

    fn finish(mut self, started: Instant) -> ReplayOutcome {
        self.flows.extend(self.table.drain());
        let stats = ReplayStats {
            packets_replayed: self.packets_replayed,
            packets_filtered: self.packets_filtered,
            malformed_dropped: self.malformed_dropped,
            interarrival_all: summarize(&mut self.gaps_all_ms),
            interarrival_filtered: summarize(&mut self.gaps_filtered_ms),
            prediction_latency: summarize(&mut self.latencies_ms),
            decisions_emitted: self.decisions_emitted,
            flows_completed: self.flows.len() as u64,
            session_duration_secs: started.elapsed().as_secs_f64(),
        };
        ReplayOutcome {
            stats,
            flows: self.flows,
        }
    }
}

fn check_scale(time_scale: f64) -> Result<(), ReplayError> {
    if !time_scale.is_finite() || time_scale < 0.0 {
        return Err(ReplayError::BadTimeScale(time_scale));
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<(), ReplayError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(DomainError(threshold).into());
    }
    Ok(())
}

/// Sleeps out each scaled inter-arrival gap, then hands the packet over
/// with its production instant. Stops when the consumer hangs up.
fn pace_and_send(
    mut stream: CaptureStream,
    scale: f64,
    tx: mpsc::SyncSender<Result<(ParsedPacket, Instant), CaptureError>>,
) {
    let mut prev: Option<Timestamp> = None;
    while let Some(item) = stream.next_packet() {
        match item {
            Ok(pkt) => {
                if scale > 0.0 {
                    if let Some(earlier) = prev {
                        let gap = (pkt.timestamp.as_secs_f64() - earlier.as_secs_f64()).max(0.0);
                        if gap > 0.0 {
                            thread::sleep(Duration::from_secs_f64(gap * scale));
                        }
                    }
                }
                prev = Some(pkt.timestamp);
                if tx.send(Ok((pkt, Instant::now()))).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

/// Replays a capture through the pipeline at `time_scale` of the original
/// pacing, writing one NDJSON decision per delivered packet.
pub fn replay<W: Write>(
    capture_path: &Path,
    model: &Model,
    cfg: &ReplayConfig,
    decision_log: &mut W,
) -> Result<ReplayOutcome, ReplayError> {
    check_scale(cfg.time_scale)?;
    check_threshold(cfg.threshold)?;
    let stream = read_capture(capture_path, FilterSpec::any())?;
    let started = Instant::now();
    let scale = cfg.time_scale;
    let (tx, rx) = mpsc::sync_channel(QUEUE_DEPTH);
    thread::scope(|scope| {
        scope.spawn(move || pace_and_send(stream, scale, tx));
        let mut pipeline = LivePipeline::new(model, cfg, decision_log);
        for item in rx {
            let (pkt, arrived) = item?;
            pipeline.ingest(&pkt, arrived)?;
        }
        Ok(pipeline.finish(started))
    })
}

/// Re-transmits every frame of the capture as one UDP datagram, paced by
/// the original timestamps at `time_scale`. Returns frames sent.
pub fn udp_send(capture_path: &Path, target: &str, time_scale: f64) -> Result<u64, ReplayError> {
    check_scale(time_scale)?;
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    socket.connect(target)?;
    let mut reader = SavefileReader::open(capture_path)?;
    let mut prev: Option<Timestamp> = None;
    let mut sent = 0;
    while let Some(record) = reader.next_record() {
        let record = record?;
        if time_scale > 0.0 {
            if let Some(earlier) = prev {
                let gap = (record.timestamp.as_secs_f64() - earlier.as_secs_f64()).max(0.0);
                if gap > 0.0 {
                    thread::sleep(Duration::from_secs_f64(gap * time_scale));
                }
            }
        }
        prev = Some(record.timestamp);
        socket.send(&record.data)?;
        sent += 1;
    }
    Ok(sent)
}

/// Runs the live pipeline over frames received as UDP datagrams on an
/// already-bound socket, stamping each with its wall-clock arrival time.
/// Returns once `idle` elapses with no traffic.
pub fn udp_serve<W: Write>(
    socket: &UdpSocket,
    model: &Model,
    cfg: &ReplayConfig,
    idle: Duration,
    decision_log: &mut W,
) -> Result<ReplayOutcome, ReplayError> {
    check_threshold(cfg.threshold)?;
    socket.set_read_timeout(Some(idle))?;
    let started = Instant::now();
    let mut pipeline = LivePipeline::new(model, cfg, decision_log);
    let mut buf = vec![0u8; 65_600];
    loop {
        match socket.recv(&mut buf) {
            Ok(n) => {
                let arrived = Instant::now();
                let unix = SystemTime::now()
                    .duration_since(SystemTime::UNIX_EPOCH)
                    .unwrap_or_default();
                let ts = Timestamp::from_micros(unix.as_micros() as u64);
                match parse_packet(&buf[..n], LinkType::Ethernet, ts) {
                    Ok(pkt) => pipeline.ingest(&pkt, arrived)?,
                    Err(_) => pipeline.malformed_dropped += 1,
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(pipeline.finish(started))
}
