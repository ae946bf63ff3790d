//! Model serialization.
//!
//! Layout: magic `EFNN`, one version byte, a little-endian u32 header
//! length, a JSON header (architecture and class names), then the eight
//! parameter blocks as little-endian f64 in fixed order: conv kernels,
//! conv bias, ln gain, ln shift, dense1 weights, dense1 bias, output
//! weights, output bias. Round-trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, Params};

const MAGIC: [u8; 4] = *b"EFNN";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    BadVersion(u8),
    #[error("malformed model header: {0}")]
    Header(String),
    #[error("model file truncated")]
    Truncated,
    #[error("model file has trailing bytes")]
    TrailingBytes,
    #[error("i/o error")]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    class_count: usize,
    channels: usize,
    hidden: usize,
    ln_epsilon: f64,
    classes: Vec<String>,
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelFormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    let header = Header {
        input_dim: model.cfg.input_dim,
        class_count: model.cfg.class_count,
        channels: model.cfg.channels,
        hidden: model.cfg.hidden,
        ln_epsilon: model.cfg.ln_epsilon,
        classes: model.cfg.classes.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelFormatError::Header(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for block in model.params.blocks() {
        for v in block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, ModelFormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(ModelFormatError::BadMagic);
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version)?;
    if version[0] != VERSION {
        return Err(ModelFormatError::BadVersion(version[0]));
    }
    let mut len_bytes = [0u8; 4];
    read_exact(&mut r, &mut len_bytes)?;
    let mut json = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    read_exact(&mut r, &mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| ModelFormatError::Header(e.to_string()))?;
    if header.classes.len() != header.class_count {
        return Err(ModelFormatError::Header(format!(
            "{} class names for class_count {}",
            header.classes.len(),
            header.class_count
        )));
    }
    if header.class_count < 2 || header.input_dim < 1 || header.channels < 1 || header.hidden < 1 {
        return Err(ModelFormatError::Header("degenerate architecture".into()));
    }
    let cfg = ModelConfig {
        input_dim: header.input_dim,
        class_count: header.class_count,
        channels: header.channels,
        hidden: header.hidden,
        ln_epsilon: header.ln_epsilon,
        classes: header.classes,
    };
    let mut params = Params::zeros(&cfg);
    let mut buf = [0u8; 8];
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            read_exact(&mut r, &mut buf)?;
            *v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(ModelFormatError::Header("non-finite parameter".into()));
            }
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(ModelFormatError::TrailingBytes);
    }
    Ok(Model { cfg, params })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ModelFormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ModelFormatError::Truncated
        } else {
            ModelFormatError::Io(e)
        }
    })
}
