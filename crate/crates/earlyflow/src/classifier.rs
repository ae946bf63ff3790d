//! Early flow classification: a per-flow prediction state that is updated
//! on every packet and a thresholded decision that can answer Unknown.
//!
//! A class is decided only when it strictly beats every other class and
//! its probability exceeds the threshold; ties and low-confidence
//! distributions stay Unknown, leaving the call to the operator.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::Timestamp;
use crate::flowtable::FlowKey;
use crate::nn::{Model, ShapeMismatch};
use crate::preprocess::PacketVector;

/// Threshold outside the half-open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("classification threshold {0} outside [0, 1)")]
pub struct DomainError(pub f64);

/// Outcome of a thresholded decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decided {
    Class(usize),
    Unknown,
}

impl Decided {
    pub fn class(self) -> Option<usize> {
        match self {
            Decided::Class(c) => Some(c),
            Decided::Unknown => None,
        }
    }
}

/// One prediction over a flow prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub probabilities: Vec<f64>,
    pub decided: Decided,
    /// Packets seen when this decision was made.
    pub prefix_len: usize,
    pub threshold: f64,
}

/// Thresholded argmax with an Unknown fallback. Decided iff the maximum
/// probability strictly exceeds every other class and the threshold; a
/// tie at the maximum yields Unknown.
pub fn decide(probabilities: &[f64], threshold: f64) -> Result<Decided, DomainError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(DomainError(threshold));
    }
    let mut best = 0usize;
    let mut best_p = f64::NEG_INFINITY;
    let mut tied = false;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > best_p {
            best = i;
            best_p = p;
            tied = false;
        } else if p == best_p {
            tied = true;
        }
    }
    if !tied && best_p > threshold {
        Ok(Decided::Class(best))
    } else {
        Ok(Decided::Unknown)
    }
}

/// How `update_prediction` computes probabilities.
///
/// The reference path re-runs the forward pass over the whole prefix each
/// packet. The incremental path exploits kernel size 1: per-packet
/// embeddings (conv → ReLU → layer norm) never change once computed, so
/// only the pooled sums and the dense head are re-evaluated. Both paths
/// must agree within 1e-6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionMode {
    Reference,
    Incremental,
}

/// Per-flow classification state.
#[derive(Debug, Clone)]
pub struct FlowPredictionState {
    pub key: FlowKey,
    pub latest: Option<Decision>,
    /// One decision per prefix, strictly increasing in prefix length.
    /// Populated only when history keeping is on.
    pub history: Vec<Decision>,
    mode: PredictionMode,
    keep_history: bool,
    // Reference path: the prefix itself.
    prefix: Vec<PacketVector>,
    // Incremental path: packets seen, sum of completed pair means, and the
    // unpaired trailing embedding.
    t: usize,
    pooled_sum: Vec<f64>,
    pending: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error(transparent)]
    Threshold(#[from] DomainError),
}

impl FlowPredictionState {
    pub fn new(key: FlowKey, mode: PredictionMode, keep_history: bool) -> Self {
        Self {
            key,
            latest: None,
            history: Vec::new(),
            mode,
            keep_history,
            prefix: Vec::new(),
            t: 0,
            pooled_sum: Vec::new(),
            pending: None,
        }
    }

    pub fn packets_seen(&self) -> usize {
        self.t.max(self.prefix.len())
    }
}

/// Feeds one more packet into the flow's state and returns the fresh
/// decision over the extended prefix.
pub fn update_prediction(
    state: &mut FlowPredictionState,
    model: &Model,
    new_vec: &PacketVector,
    threshold: f64,
) -> Result<Decision, PredictError> {
    let probabilities = match state.mode {
        PredictionMode::Reference => {
            state.prefix.push(new_vec.clone());
            state.t = state.prefix.len();
            model.probabilities(&state.prefix)?
        }
        PredictionMode::Incremental => {
            let e = model.embed_packet(new_vec)?;
            if state.pooled_sum.is_empty() {
                state.pooled_sum = vec![0.0; model.cfg.channels];
            }
            state.t += 1;
            match state.pending.take() {
                Some(prev) => {
                    for (s, (a, b)) in state.pooled_sum.iter_mut().zip(prev.iter().zip(&e)) {
                        *s += (a + b) / 2.0;
                    }
                }
                None => state.pending = Some(e),
            }
            let p_len = state.t.div_ceil(2) as f64;
            let g: Vec<f64> = match &state.pending {
                Some(tail) => state
                    .pooled_sum
                    .iter()
                    .zip(tail)
                    .map(|(s, e)| (s + e) / p_len)
                    .collect(),
                None => state.pooled_sum.iter().map(|s| s / p_len).collect(),
            };
            model.head_probabilities(&g)
        }
    };
    let decided = decide(&probabilities, threshold)?;
    let decision = Decision {
        probabilities,
        decided,
        prefix_len: state.t,
        threshold,
    };
    if state.keep_history {
        state.history.push(decision.clone());
    }
    state.latest = Some(decision.clone());
    Ok(decision)
}

/// One line of the newline-delimited JSON decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub flow_key: String,
    pub t: usize,
    pub probs: Vec<f64>,
    /// Class index, or `null` for Unknown.
    pub decided: Option<usize>,
    /// Packet timestamp, seconds.
    pub ts: f64,
}

impl DecisionRecord {
    pub fn new(key: &FlowKey, decision: &Decision, ts: Timestamp) -> Self {
        Self {
            flow_key: key.to_string(),
            t: decision.prefix_len,
            probs: decision.probabilities.clone(),
            decided: decision.decided.class(),
            ts: ts.as_secs_f64(),
        }
    }
}

pub fn write_decision_record<W: Write>(w: &mut W, record: &DecisionRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}
