//! RNDT: little-endian binary container for tensor datasets.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "RNDT"
//! 4       1           version (1)
//! 5       1           dtype (1 = f32)
//! 6       1           ndim (2..=4)
//! 7       1           reserved (0)
//! 8       4·ndim      extents, u32 each; extent 0 is the example count
//! …       4·N         payload, f32 row-major
//! ```

use std::fs;
use std::path::Path;

use super::TensorDataset;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RNDT";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;
const HEADER: usize = 8;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_rndt(dataset: &TensorDataset) -> Result<Vec<u8>> {
    let shape = dataset.shape();
    if !(2..=4).contains(&shape.len()) {
        return Err(Error::Data(format!(
            "RNDT stores 2 to 4 dimensions, dataset has shape {shape:?}"
        )));
    }
    let mut out = Vec::with_capacity(HEADER + 4 * shape.len() + 4 * dataset.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, shape.len() as u8, 0]);
    for &d in &shape {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in dataset.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rndt(bytes: &[u8]) -> Result<TensorDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"RNDT\""));
    }
    if bytes.len() < HEADER {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(format_err(5, format!("unsupported dtype {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if !(2..=4).contains(&ndim) {
        return Err(format_err(6, format!("ndim must be 2..=4, got {ndim}")));
    }
    if bytes[7] != 0 {
        return Err(format_err(7, "reserved byte must be 0"));
    }
    let payload_start = HEADER + 4 * ndim;
    if bytes.len() < payload_start {
        return Err(format_err(bytes.len(), "truncated extents"));
    }
    let mut extents = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for i in 0..ndim {
        let off = HEADER + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        if d == 0 {
            return Err(format_err(off, "zero extent"));
        }
        total = total
            .checked_mul(d)
            .filter(|t| t.checked_mul(4).is_some())
            .ok_or_else(|| format_err(off, "extent product overflows"))?;
        extents.push(d);
    }
    let payload = &bytes[payload_start..];
    let expected = total * 4;
    if payload.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: header declares {total} floats, found {} bytes",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(payload_start + expected, "trailing bytes after payload"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(format_err(payload_start + 4 * pos, "non-finite value"));
    }
    TensorDataset::new(extents[1..].to_vec(), values)
}

pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<TensorDataset> {
    decode_rndt(&fs::read(path)?)
}

pub fn save_tensor_file(path: impl AsRef<Path>, dataset: &TensorDataset) -> Result<()> {
    fs::write(path, encode_rndt(dataset)?)?;
    Ok(())
}
