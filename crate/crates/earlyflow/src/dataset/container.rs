//! Binary dataset container.
//!
//! Layout: magic `EFDS`, one version byte, little-endian u64 flow count;
//! then per flow a u32 class id, a u32 packet count T, and T×dim
//! little-endian f32 values. The vector dimension and class names live in
//! a JSON sidecar at `<path>.json`. Round-trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FlowDataset, FlowSample};
use crate::preprocess::PacketVector;

const MAGIC: [u8; 4] = *b"EFDS";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum DatasetFormatError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    BadVersion(u8),
    #[error("dataset file truncated")]
    Truncated,
    #[error("dataset file has trailing bytes")]
    TrailingBytes,
    #[error("sidecar {path}: {problem}")]
    Sidecar { path: PathBuf, problem: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("i/o error")]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    classes: Vec<String>,
    dim: usize,
    flow_count: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_dataset(ds: &FlowDataset, path: &Path) -> Result<(), DatasetFormatError> {
    ds.validate().map_err(DatasetFormatError::Inconsistent)?;
    let side = Sidecar {
        classes: ds.classes.clone(),
        dim: ds.dim,
        flow_count: ds.len(),
    };
    let side_path = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&side).map_err(|e| DatasetFormatError::Sidecar {
        path: side_path.clone(),
        problem: e.to_string(),
    })?;
    std::fs::write(&side_path, json)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for flow in &ds.flows {
        w.write_all(&(flow.label as u32).to_le_bytes())?;
        w.write_all(&(flow.len() as u32).to_le_bytes())?;
        for pkt in &flow.packets {
            for &v in &pkt.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<FlowDataset, DatasetFormatError> {
    let side_path = sidecar_path(path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| DatasetFormatError::Sidecar {
        path: side_path.clone(),
        problem: e.to_string(),
    })?;
    let side: Sidecar =
        serde_json::from_slice(&side_bytes).map_err(|e| DatasetFormatError::Sidecar {
            path: side_path.clone(),
            problem: e.to_string(),
        })?;

    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(DatasetFormatError::BadMagic);
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version)?;
    if version[0] != VERSION {
        return Err(DatasetFormatError::BadVersion(version[0]));
    }
    let mut count_bytes = [0u8; 8];
    read_exact(&mut r, &mut count_bytes)?;
    let count = u64::from_le_bytes(count_bytes) as usize;
    if count != side.flow_count {
        return Err(DatasetFormatError::Inconsistent(format!(
            "file has {count} flows, sidecar says {}",
            side.flow_count
        )));
    }

    let mut ds = FlowDataset::new(side.classes, side.dim);
    let mut u32_buf = [0u8; 4];
    for _ in 0..count {
        read_exact(&mut r, &mut u32_buf)?;
        let label = u32::from_le_bytes(u32_buf) as usize;
        if label >= ds.classes.len() {
            return Err(DatasetFormatError::Inconsistent(format!(
                "label {label} out of range"
            )));
        }
        read_exact(&mut r, &mut u32_buf)?;
        let t = u32::from_le_bytes(u32_buf) as usize;
        if t == 0 {
            return Err(DatasetFormatError::Inconsistent("empty flow".into()));
        }
        let mut packets = Vec::with_capacity(t);
        for _ in 0..t {
            let mut values = vec![0.0f32; side.dim];
            for v in &mut values {
                read_exact(&mut r, &mut u32_buf)?;
                *v = f32::from_le_bytes(u32_buf);
            }
            // Kept lengths are not stored; they are a vectorizer detail and
            // zero slots are unambiguous for inference.
            packets.push(PacketVector {
                values,
                header_len_kept: 0,
                payload_len_kept: 0,
            });
        }
        ds.flows.push(FlowSample { packets, label });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(DatasetFormatError::TrailingBytes);
    }
    Ok(ds)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DatasetFormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DatasetFormatError::Truncated
        } else {
            DatasetFormatError::Io(e)
        }
    })
}
