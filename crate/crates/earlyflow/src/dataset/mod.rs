//! Labeled flow datasets: ingestion from captures + label files, prefix
//! augmentation, stratified splitting, class-frequency weights, a binary
//! container format, and a synthetic traffic generator.

mod container;
mod labels;
mod synth;

pub use container::{load_dataset, save_dataset, DatasetFormatError};
pub use labels::{
    load_labeled_dataset, read_label_records, LabelMatchOptions, LabelRecord, LabelSchemaError,
    LoadSummary,
};
pub use synth::{synth_generate, ClassSynth, PayloadPattern, SynthError, SynthSpec, SynthSummary};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::PacketVector;

/// A parameter outside its documented domain.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{what} = {value} outside {domain}")]
pub struct DomainError {
    pub what: &'static str,
    pub value: f64,
    pub domain: &'static str,
}

/// A class with no flows where at least one is required.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("class {0:?} has no flows")]
pub struct EmptyClass(pub String);

/// One labeled flow: its vectorized packets and the class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub packets: Vec<PacketVector>,
    pub label: usize,
}

impl FlowSample {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// The labeled dataset D = {(F_T, y)}: flows, ordered class names, and
/// the packet-vector dimension shared by every flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDataset {
    pub classes: Vec<String>,
    pub dim: usize,
    pub flows: Vec<FlowSample>,
}

impl FlowDataset {
    pub fn new(classes: Vec<String>, dim: usize) -> Self {
        Self {
            classes,
            dim,
            flows: Vec::new(),
        }
    }

    /// N — the number of flows.
    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// K — the number of classes.
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Flows per class, index-aligned with `classes`.
    pub fn counts_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for f in &self.flows {
            counts[f.label] += 1;
        }
        counts
    }

    /// Panics on the structural invariants; used by tests and loaders.
    pub fn validate(&self) -> Result<(), String> {
        for (i, f) in self.flows.iter().enumerate() {
            if f.label >= self.classes.len() {
                return Err(format!("flow {i}: label {} out of range", f.label));
            }
            if f.packets.is_empty() {
                return Err(format!("flow {i}: empty flow"));
            }
            for p in &f.packets {
                if p.dim() != self.dim {
                    return Err(format!("flow {i}: dim {} ≠ {}", p.dim(), self.dim));
                }
            }
        }
        Ok(())
    }
}

/// Prefix-augmentation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub segmentation_rate: f64,
}

/// Split fraction and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

fn check_rate(s_r: f64) -> Result<(), DomainError> {
    if !(s_r > 0.0 && s_r < 1.0) {
        return Err(DomainError {
            what: "segmentation rate",
            value: s_r,
            domain: "(0, 1)",
        });
    }
    Ok(())
}

/// Segment size s_z = ⌈s_r · T⌉.
///
/// The product is snapped to the nearest integer when it is within 1e-9 of
/// one before taking the ceiling, so decimal rates behave like exact
/// arithmetic (0.1 · 70 must give 7, not ceil(7.000000000000001) = 8).
pub fn segment_size(t: usize, s_r: f64) -> Result<usize, DomainError> {
    check_rate(s_r)?;
    let v = s_r * t as f64;
    let nearest = v.round();
    let sz = if (v - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        v.ceil() as usize
    };
    Ok(sz.max(1))
}

/// Cumulative prefixes of lengths k·s_z for k = 1..⌊(T−1)/s_z⌋, each with
/// the parent's label. Never includes the full flow; a single-packet flow
/// yields nothing.
pub fn segments_of(flow: &FlowSample, s_r: f64) -> Result<Vec<FlowSample>, DomainError> {
    let t = flow.len();
    if t == 0 {
        return Ok(Vec::new());
    }
    let s_z = segment_size(t, s_r)?;
    let k_max = (t - 1) / s_z;
    Ok((1..=k_max)
        .map(|k| FlowSample {
            packets: flow.packets[..k * s_z].to_vec(),
            label: flow.label,
        })
        .collect())
}

/// Extends the dataset with every flow's segments. Originals come first,
/// unmodified and in order; segments follow in parent order.
pub fn augment(ds: &FlowDataset, cfg: &AugmentConfig) -> Result<FlowDataset, DomainError> {
    check_rate(cfg.segmentation_rate)?;
    let mut out = ds.clone();
    for flow in &ds.flows {
        out.flows.extend(segments_of(flow, cfg.segmentation_rate)?);
    }
    Ok(out)
}

/// Inverse-frequency sample weights w_c = N / (K · n_c), so balanced data
/// gives unit weights and Σ_c w_c·n_c = N.
pub fn class_weights(ds: &FlowDataset) -> Result<Vec<f64>, EmptyClass> {
    let counts = ds.counts_per_class();
    let n = ds.len() as f64;
    let k = ds.class_count() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &n_c)| {
            if n_c == 0 {
                Err(EmptyClass(ds.classes[c].clone()))
            } else {
                Ok(n / (k * n_c as f64))
            }
        })
        .collect()
}

/// Shuffles, then splits each class separately so train/test keep the
/// class proportions. Per-class train count is floor(fraction·n_c + 0.5),
/// clamped to [1, n_c−1] when the class has at least two flows; a
/// single-flow class lands in train.
pub fn stratified_split(
    ds: &FlowDataset,
    cfg: &SplitConfig,
) -> Result<(FlowDataset, FlowDataset), DomainError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(DomainError {
            what: "train fraction",
            value: cfg.train_fraction,
            domain: "(0, 1)",
        });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count()];
    for &idx in &order {
        by_class[ds.flows[idx].label].push(idx);
    }

    let mut train = FlowDataset::new(ds.classes.clone(), ds.dim);
    let mut test = FlowDataset::new(ds.classes.clone(), ds.dim);
    for ids in &by_class {
        let n_c = ids.len();
        if n_c == 0 {
            continue;
        }
        let mut take = (cfg.train_fraction * n_c as f64 + 0.5).floor() as usize;
        if n_c >= 2 {
            take = take.clamp(1, n_c - 1);
        } else {
            take = 1;
        }
        for (i, &idx) in ids.iter().enumerate() {
            let sample = ds.flows[idx].clone();
            if i < take {
                train.flows.push(sample);
            } else {
                test.flows.push(sample);
            }
        }
    }
    Ok((train, test))
}
