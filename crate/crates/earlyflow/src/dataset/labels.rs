//! Flow labeling: joins assembled flows against a CSV label file on the
//! canonical 5-tuple and a time window.
//!
//! Schema: UTF-8 CSV with header
//! `src_ip,src_port,dst_ip,dst_port,protocol,start_ts,end_ts,label`,
//! timestamps in decimal seconds, label values drawn from the declared
//! class list.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{read_capture, CaptureCounts, CaptureError, FilterSpec};
use crate::flowtable::{assemble_flows, Endpoint, Flow, FlowKey, FlowTableConfig};
use crate::preprocess::VectorizerConfig;

use super::{FlowDataset, FlowSample};

pub const LABEL_HEADER: [&str; 8] = [
    "src_ip", "src_port", "dst_ip", "dst_port", "protocol", "start_ts", "end_ts", "label",
];

#[derive(Debug, Error)]
pub enum LabelSchemaError {
    #[error("label file header must be `{}`", LABEL_HEADER.join(","))]
    BadHeader,
    #[error("label row {row}: {problem}")]
    BadRow { row: usize, problem: String },
    #[error("label row {row}: class {class:?} not in declared class list")]
    UnknownClass { row: usize, class: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

/// One parsed label row, with the endpoint pair already canonicalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub key: FlowKey,
    pub start_ts: f64,
    pub end_ts: f64,
    pub label: usize,
}

/// Reads and validates a label file against the declared classes.
pub fn read_label_records(
    path: &Path,
    classes: &[String],
) -> Result<Vec<LabelRecord>, LabelSchemaError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    {
        let headers = reader.headers()?;
        if headers.len() != LABEL_HEADER.len()
            || headers.iter().zip(LABEL_HEADER).any(|(a, b)| a != b)
        {
            return Err(LabelSchemaError::BadHeader);
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let rownum = i + 2; // header is line 1
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let bad = |problem: String| LabelSchemaError::BadRow {
            row: rownum,
            problem,
        };
        let src_ip: Ipv4Addr = field(0)
            .parse()
            .map_err(|_| bad(format!("bad src_ip {:?}", field(0))))?;
        let src_port: u16 = field(1)
            .parse()
            .map_err(|_| bad(format!("bad src_port {:?}", field(1))))?;
        let dst_ip: Ipv4Addr = field(2)
            .parse()
            .map_err(|_| bad(format!("bad dst_ip {:?}", field(2))))?;
        let dst_port: u16 = field(3)
            .parse()
            .map_err(|_| bad(format!("bad dst_port {:?}", field(3))))?;
        if !field(4).eq_ignore_ascii_case("tcp") {
            return Err(bad(format!("unsupported protocol {:?}", field(4))));
        }
        let start_ts: f64 = field(5)
            .parse()
            .map_err(|_| bad(format!("bad start_ts {:?}", field(5))))?;
        let end_ts: f64 = field(6)
            .parse()
            .map_err(|_| bad(format!("bad end_ts {:?}", field(6))))?;
        if end_ts < start_ts {
            return Err(bad(format!("window ends ({end_ts}) before it starts ({start_ts})")));
        }
        let label = classes
            .iter()
            .position(|c| c == field(7))
            .ok_or_else(|| LabelSchemaError::UnknownClass {
                row: rownum,
                class: field(7).to_string(),
            })?;
        let src = Endpoint {
            ip: src_ip,
            port: src_port,
        };
        let dst = Endpoint {
            ip: dst_ip,
            port: dst_port,
        };
        let (endpoint_a, endpoint_b) = if src <= dst { (src, dst) } else { (dst, src) };
        records.push(LabelRecord {
            key: FlowKey {
                endpoint_a,
                endpoint_b,
            },
            start_ts,
            end_ts,
            label,
        });
    }
    Ok(records)
}

/// How flows are matched to label rows and what happens to the leftovers.
#[derive(Debug, Clone, Default)]
pub struct LabelMatchOptions {
    /// Match on the canonical key alone, ignoring time windows.
    pub exact_key_only: bool,
    /// Class for flows no label row matches; `None` drops them.
    pub default_class: Option<String>,
}

/// What `load_labeled_dataset` did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub capture: CaptureCounts,
    pub flows_assembled: usize,
    pub matched: usize,
    /// Flows no label row matched (each was defaulted or dropped).
    pub unmatched: usize,
    pub dropped: usize,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Labels(#[from] LabelSchemaError),
    #[error("default class {0:?} not in declared class list")]
    BadDefaultClass(String),
}

fn matches_label(flow: &Flow, rec: &LabelRecord, exact_key_only: bool) -> bool {
    if flow.key != rec.key {
        return false;
    }
    if exact_key_only {
        return true;
    }
    let first = flow.first_ts.as_secs_f64();
    let last = flow.last_ts.as_secs_f64();
    first <= rec.end_ts && rec.start_ts <= last
}

/// Full ingestion path: capture → flow assembly → vectorization → label
/// join. Flows match the first label row (in file order) whose canonical
/// key equals theirs and whose time window overlaps [first_ts, last_ts].
pub fn load_labeled_dataset(
    capture_path: &Path,
    labels_path: &Path,
    classes: &[String],
    filter: &FilterSpec,
    vectorizer: &VectorizerConfig,
    flow_cfg: FlowTableConfig,
    opts: &LabelMatchOptions,
) -> Result<(FlowDataset, LoadSummary), LoadError> {
    let default_label = match &opts.default_class {
        Some(name) => Some(
            classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| LoadError::BadDefaultClass(name.clone()))?,
        ),
        None => None,
    };
    let records = read_label_records(labels_path, classes)?;

    let stream = read_capture(capture_path, filter.clone())?;
    let mut cfg = flow_cfg;
    cfg.vectorizer = *vectorizer;
    let (packets, summary_counts) = stream.collect_packets()?;
    let flows = assemble_flows(packets.iter(), cfg);

    let mut ds = FlowDataset::new(classes.to_vec(), vectorizer.dim());
    let mut summary = LoadSummary {
        capture: summary_counts,
        flows_assembled: flows.len(),
        ..LoadSummary::default()
    };
    for flow in flows {
        let hit = records
            .iter()
            .find(|rec| matches_label(&flow, rec, opts.exact_key_only));
        let label = match hit {
            Some(rec) => {
                summary.matched += 1;
                rec.label
            }
            None => {
                summary.unmatched += 1;
                match default_label {
                    Some(l) => l,
                    None => {
                        summary.dropped += 1;
                        continue;
                    }
                }
            }
        };
        if flow.packets.is_empty() {
            continue;
        }
        ds.flows.push(FlowSample {
            packets: flow.packets,
            label,
        });
    }
    Ok((ds, summary))
}
