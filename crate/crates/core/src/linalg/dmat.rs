//! DMAT dense-matrix file format.
//!
//! ```text
//! "DMAT" | version u16 = 1 | rows u32 | cols u32 | dtype u8 | payload
//! ```
//! dtype 0 is f32 and 1 is f64; the payload is row-major little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Result, SalrError};

pub const DMAT_MAGIC: &[u8; 4] = b"DMAT";
pub const DMAT_VERSION: u16 = 1;
pub const DMAT_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmatDtype {
    F32 = 0,
    F64 = 1,
}

impl DmatDtype {
    pub fn width(self) -> usize {
        match self {
            DmatDtype::F32 => 4,
            DmatDtype::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DmatDtype::F32),
            1 => Ok(DmatDtype::F64),
            other => Err(SalrError::format("dmat header", format!("unknown dtype {other}"))),
        }
    }
}

/// Serializes `m`; with `F32` the values are rounded to single precision.
pub fn encode_dmat(m: &DenseMatrix, dtype: DmatDtype) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| SalrError::Domain("too many rows for DMAT".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| SalrError::Domain("too many cols for DMAT".into()))?;
    let mut out = Vec::with_capacity(DMAT_HEADER_LEN + m.as_slice().len() * dtype.width());
    out.extend_from_slice(DMAT_MAGIC);
    out.extend_from_slice(&DMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.push(dtype as u8);
    match dtype {
        DmatDtype::F32 => {
            for &v in m.as_slice() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(SalrError::Domain(format!("value {v} overflows f32")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        DmatDtype::F64 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_dmat(bytes: &[u8]) -> Result<(DenseMatrix, DmatDtype)> {
    if bytes.len() < DMAT_HEADER_LEN {
        return Err(SalrError::format("dmat header", format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != DMAT_MAGIC {
        return Err(SalrError::format("dmat header", "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DMAT_VERSION {
        return Err(SalrError::format("dmat header", format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let dtype = DmatDtype::from_code(bytes[14])?;
    let payload = &bytes[DMAT_HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| SalrError::format("dmat header", "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(SalrError::format("dmat payload", format!("expected {expected} bytes, found {}", payload.len())));
    }
    let data: Vec<f64> = match dtype {
        DmatDtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DmatDtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SalrError::format("dmat payload", "non-finite value"));
    }
    Ok((DenseMatrix::new(rows, cols, data)?, dtype))
}

pub fn write_dmat(path: impl AsRef<Path>, m: &DenseMatrix, dtype: DmatDtype) -> Result<()> {
    let bytes = encode_dmat(m, dtype)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dmat(path: impl AsRef<Path>) -> Result<(DenseMatrix, DmatDtype)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dmat(&bytes)
}
