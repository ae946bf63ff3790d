//! Early classification of network flows from raw packet bytes.
//!
//! The pipeline reads packets from capture savefiles (or a live packet
//! source), groups them into bidirectional TCP flows, turns each packet
//! into a fixed-length normalized byte vector, and feeds the growing
//! packet sequence of every flow to a small 1-D convolutional classifier
//! after each packet. A thresholded decision rule maps the class
//! probabilities to a class label or `Unknown`, so an in-progress flow
//! can be flagged after its first few packets instead of at teardown.
//!
//! Modules mirror the pipeline stages:
//!
//! * [`capture`] — savefile reading, frame decoding, port/protocol filter
//! * [`flowtable`] — bidirectional flow assembly, FIN/RST teardown, idle timeout
//! * [`preprocess`] — header stripping and byte-vector normalization
//! * [`dataset`] — labeled datasets, prefix augmentation, splits, synthetic traffic
//! * [`nn`] — the convolutional classifier, training, model files
//! * [`classifier`] — per-flow prediction state and the threshold decision
//! * [`evaluate`] — per-class metrics, earliness, minimum packets to predict
//! * [`monitor`] — paced replay with latency measurement

pub mod capture;
pub mod classifier;
pub mod dataset;
pub mod evaluate;
pub mod flowtable;
pub mod monitor;
pub mod nn;
pub mod preprocess;

#[cfg(test)]
pub(crate) mod testutil;
