//! Classic packet-capture savefile format.
//!
//! 24-byte global header (magic, version, thiszone, sigfigs, snaplen,
//! linktype) followed by 16-byte per-record headers and frame bytes.
//! Both byte orders are read; files are written in little-endian with
//! microsecond timestamps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CaptureError, LinkType, Timestamp};

/// Microsecond-resolution magic in the writer's byte order.
pub const MICROS_MAGIC: u32 = 0xa1b2_c3d4;
/// The same magic read from a file of the opposite byte order.
pub const MICROS_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;

const LINKTYPE_ETHERNET: u32 = 1;
const DEFAULT_SNAPLEN: u32 = 65_535;

/// One raw record: capture timestamp plus the captured frame bytes.
#[derive(Debug, Clone)]
pub struct Record {
    pub timestamp: Timestamp,
    pub data: Vec<u8>,
    pub orig_len: u32,
}

/// Streaming reader for one savefile.
pub struct SavefileReader {
    input: BufReader<File>,
    swapped: bool,
    snaplen: u32,
    link_type: LinkType,
}

impl SavefileReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        let file = File::open(path.as_ref())?;
        let mut input = BufReader::new(file);

        let mut header = [0u8; 24];
        input.read_exact(&mut header).map_err(|_| {
            CaptureError::UnsupportedCaptureFormat("file shorter than the global header".into())
        })?;

        let magic = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
        let swapped = match magic {
            MICROS_MAGIC => false,
            MICROS_MAGIC_SWAPPED => true,
            other => {
                return Err(CaptureError::UnsupportedCaptureFormat(format!(
                    "unrecognized magic number {other:#010x}"
                )))
            }
        };

        let u32_at = |buf: &[u8; 24], off: usize| {
            let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
            if swapped {
                u32::from_be_bytes(b)
            } else {
                u32::from_le_bytes(b)
            }
        };
        let snaplen = u32_at(&header, 16);
        let network = u32_at(&header, 20);
        let link_type = if network == LINKTYPE_ETHERNET {
            LinkType::Ethernet
        } else {
            LinkType::Other(network)
        };

        Ok(Self {
            input,
            swapped,
            snaplen,
            link_type,
        })
    }

    pub fn link_type(&self) -> LinkType {
        self.link_type
    }

    pub fn snaplen(&self) -> u32 {
        self.snaplen
    }

    /// Next record in file order, `None` at a clean end of file.
    pub fn next_record(&mut self) -> Option<Result<Record, CaptureError>> {
        let mut rec_header = [0u8; 16];
        match self.input.read_exact(&mut rec_header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                // Distinguish a clean boundary from a torn record header.
                // read_exact may have consumed partial bytes; a subsequent
                // read returning 0 means we were exactly at the end.
                let mut probe = [0u8; 1];
                return match self.input.read(&mut probe) {
                    Ok(0) => None,
                    _ => Some(Err(CaptureError::UnsupportedCaptureFormat(
                        "truncated record header".into(),
                    ))),
                };
            }
            Err(e) => return Some(Err(e.into())),
        }

        let u32_at = |buf: &[u8; 16], off: usize| {
            let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
            if self.swapped {
                u32::from_be_bytes(b)
            } else {
                u32::from_le_bytes(b)
            }
        };
        let ts_sec = u32_at(&rec_header, 0);
        let ts_usec = u32_at(&rec_header, 4);
        let incl_len = u32_at(&rec_header, 8);
        let orig_len = u32_at(&rec_header, 12);

        if incl_len > self.snaplen {
            return Some(Err(CaptureError::UnsupportedCaptureFormat(format!(
                "record length {incl_len} exceeds snaplen {}",
                self.snaplen
            ))));
        }

        let mut data = vec![0u8; incl_len as usize];
        if let Err(e) = self.input.read_exact(&mut data) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Some(Err(CaptureError::UnsupportedCaptureFormat(
                    "truncated record body".into(),
                )));
            }
            return Some(Err(e.into()));
        }

        Some(Ok(Record {
            timestamp: Timestamp::new(ts_sec as u64, ts_usec),
            data,
            orig_len,
        }))
    }
}

/// Writes Ethernet frames into a little-endian, microsecond savefile.
pub struct SavefileWriter {
    output: BufWriter<File>,
    snaplen: u32,
}

impl SavefileWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        Self::with_snaplen(path, DEFAULT_SNAPLEN)
    }

    pub fn with_snaplen(path: impl AsRef<Path>, snaplen: u32) -> Result<Self, CaptureError> {
        let file = File::create(path.as_ref())?;
        let mut output = BufWriter::new(file);
        output.write_all(&MICROS_MAGIC.to_le_bytes())?;
        output.write_all(&2u16.to_le_bytes())?; // version major
        output.write_all(&4u16.to_le_bytes())?; // version minor
        output.write_all(&0i32.to_le_bytes())?; // thiszone
        output.write_all(&0u32.to_le_bytes())?; // sigfigs
        output.write_all(&snaplen.to_le_bytes())?;
        output.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(Self { output, snaplen })
    }

    /// Appends one frame, truncating the stored bytes to the snaplen.
    pub fn write_frame(&mut self, timestamp: Timestamp, frame: &[u8]) -> Result<(), CaptureError> {
        let orig_len = frame.len() as u32;
        let incl_len = orig_len.min(self.snaplen);
        self.output
            .write_all(&(timestamp.secs as u32).to_le_bytes())?;
        self.output.write_all(&timestamp.micros.to_le_bytes())?;
        self.output.write_all(&incl_len.to_le_bytes())?;
        self.output.write_all(&orig_len.to_le_bytes())?;
        self.output.write_all(&frame[..incl_len as usize])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CaptureError> {
        self.output.flush()?;
        Ok(())
    }
}
