//! Bit-exact tensor container.
//!
//! Layout: magic `CMHR`, u32 LE version (= 1), u32 LE ndim, ndim u32 LE
//! dims, then `product(dims)` f32 LE payload values. Values are widened to
//! f64 on load; writers narrow to f32.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diffcore::Tensor;

pub const MAGIC: [u8; 4] = *b"CMHR";
pub const VERSION: u32 = 1;
const MAX_NDIM: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {found:?}, expected \"CMHR\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {found}, expected {VERSION}")]
    BadVersion { found: u32 },

    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("dim overflow: dims {dims:?} exceed the supported element count")]
    DimOverflow { dims: Vec<u64> },

    #[error("container io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path, source: io::Error) -> ContainerError {
    ContainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes a tensor to the container byte layout.
pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let dims = tensor.dims();
    let mut out = Vec::with_capacity(12 + dims.len() * 4 + tensor.numel() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses container bytes into a tensor (f32 payload widened to f64).
pub fn decode(bytes: &[u8]) -> Result<Tensor, ContainerError> {
    let need = |expected: usize| -> Result<(), ContainerError> {
        if bytes.len() < expected {
            Err(ContainerError::Truncated {
                expected,
                got: bytes.len(),
            })
        } else {
            Ok(())
        }
    };

    need(12)?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if magic != MAGIC {
        return Err(ContainerError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::BadVersion { found: version });
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if ndim > MAX_NDIM {
        return Err(ContainerError::DimOverflow {
            dims: vec![ndim as u64],
        });
    }
    let header = 12 + ndim as usize * 4;
    need(header)?;

    let mut dims = Vec::with_capacity(ndim as usize);
    let mut count: u64 = 1;
    for i in 0..ndim as usize {
        let d = u32::from_le_bytes(bytes[12 + i * 4..16 + i * 4].try_into().unwrap()) as u64;
        count = count.saturating_mul(d.max(1)).min(u64::MAX);
        dims.push(d);
    }
    if count > MAX_ELEMENTS || dims.iter().any(|&d| d == 0) {
        return Err(ContainerError::DimOverflow { dims });
    }

    let expected = header + count as usize * 4;
    need(expected)?;

    let mut data = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let at = header + i * 4;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        data.push(v as f64);
    }
    let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    Ok(Tensor::new(dims, data).expect("validated element count"))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), ContainerError> {
    let bytes = encode(tensor);
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor, ContainerError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    decode(&bytes)
}
