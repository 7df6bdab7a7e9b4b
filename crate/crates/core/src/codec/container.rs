//! SALR container: a pruned weight plus its adapters in one file.
//!
//! ```text
//! "SALR" | version u16 | d_in u32 | d_out u32 | dtype u8 | n_adapters u16
//! n × (rank u32, scale f32)
//! offsets u64 × 3 (bitmap, values, adapters)
//! bitmap: d_in · ⌈d_out/8⌉ bytes
//! values: nnz × f32
//! adapters: for each, A (d_in × r) then B (r × d_out), f32 row-major
//! ```
//! Everything is little-endian.

use std::fs;
use std::path::Path;

use super::bitmap::{bytes_per_row, BitmapSparseMatrix, ValueDtype};
use crate::error::{Result, SalrError};
use crate::linalg::DenseMatrix;
use crate::prune::kept_count_for;
use crate::residual::AdapterPair;

pub const CONTAINER_MAGIC: &[u8; 4] = b"SALR";
pub const CONTAINER_VERSION: u16 = 1;
/// Header bytes before the per-adapter records and offsets are added.
const FIXED_HEADER: usize = 4 + 2 + 4 + 4 + 1 + 2;
/// Header bytes of a container with no adapters.
pub const BASE_HEADER_LEN: usize = FIXED_HEADER + 3 * 8;
const ADAPTER_RECORD: usize = 4 + 4;

/// Byte sizes of each container section.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerLayout {
    pub header: usize,
    pub bitmap: usize,
    pub values: usize,
    pub adapters: usize,
}

impl ContainerLayout {
    /// `adapter_ranks` lists the rank of each adapter; all share `d_in × d_out`.
    pub fn new(d_in: usize, d_out: usize, nnz: usize, adapter_ranks: &[usize]) -> Self {
        Self {
            header: BASE_HEADER_LEN + ADAPTER_RECORD * adapter_ranks.len(),
            bitmap: d_in * bytes_per_row(d_out),
            values: 4 * nnz,
            adapters: 4 * adapter_ranks.iter().map(|r| r * (d_in + d_out)).sum::<usize>(),
        }
    }

    pub fn bitmap_offset(&self) -> usize {
        self.header
    }

    pub fn values_offset(&self) -> usize {
        self.header + self.bitmap
    }

    pub fn adapters_offset(&self) -> usize {
        self.values_offset() + self.values
    }

    pub fn total(&self) -> usize {
        self.adapters_offset() + self.adapters
    }
}

/// Dense size over SALR size for a `d × k` weight pruned to sparsity `p`,
/// with `adapter_params` adapter entries sharing `bytes_per_value`.
pub fn compression_ratio(d: usize, k: usize, p: f64, bytes_per_value: usize, adapter_params: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(SalrError::Domain(format!("sparsity {p} outside [0, 1)")));
    }
    Ok(ratio_from_counts(d, k, kept_count_for(p, d * k), bytes_per_value, adapter_params))
}

/// [`compression_ratio`] for a known nonzero count.
pub fn ratio_from_counts(d: usize, k: usize, nnz: usize, bytes_per_value: usize, adapter_params: usize) -> f64 {
    let dense = (d * k * bytes_per_value) as f64;
    let packed = nnz * bytes_per_value + d * bytes_per_row(k) + adapter_params * bytes_per_value + BASE_HEADER_LEN;
    dense / packed as f64
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| SalrError::Domain(format!("{what} {v} does not fit in u32")))
}

fn push_f32(out: &mut Vec<u8>, v: f64) -> Result<()> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(SalrError::Domain(format!("adapter value {v} overflows f32")));
    }
    out.extend_from_slice(&f.to_le_bytes());
    Ok(())
}

pub fn container_to_bytes(s: &BitmapSparseMatrix, adapters: &[AdapterPair]) -> Result<Vec<u8>> {
    let (d_in, d_out) = (s.rows(), s.cols());
    for (i, ad) in adapters.iter().enumerate() {
        if ad.d_in() != d_in || ad.d_out() != d_out {
            return Err(SalrError::shape(
                "container",
                format!("adapter {i} is {}x{}, weight is {d_in}x{d_out}", ad.d_in(), ad.d_out()),
            ));
        }
    }
    let n = u16::try_from(adapters.len()).map_err(|_| SalrError::Domain("too many adapters".into()))?;
    let ranks: Vec<usize> = adapters.iter().map(AdapterPair::rank).collect();
    let layout = ContainerLayout::new(d_in, d_out, s.nnz(), &ranks);
    let mut out = Vec::with_capacity(layout.total());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(d_in, "d_in")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d_out, "d_out")?.to_le_bytes());
    out.push(s.dtype().code());
    out.extend_from_slice(&n.to_le_bytes());
    for ad in adapters {
        out.extend_from_slice(&to_u32(ad.rank(), "rank")?.to_le_bytes());
        push_f32(&mut out, ad.scale())?;
    }
    for off in [layout.bitmap_offset(), layout.values_offset(), layout.adapters_offset()] {
        out.extend_from_slice(&(off as u64).to_le_bytes());
    }
    out.extend_from_slice(s.bitmap());
    for v in s.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for ad in adapters {
        for m in [ad.a(), ad.b()] {
            for &v in m.as_slice() {
                push_f32(&mut out, v)?;
            }
        }
    }
    debug_assert_eq!(out.len(), layout.total());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SalrError::format(section, format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}

fn read_f32_matrix(cur: &mut Cursor, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let raw = cur.take(4 * rows * cols, "adapters")?;
    let data: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SalrError::format("adapters", "non-finite value"));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn container_from_bytes(bytes: &[u8]) -> Result<(BitmapSparseMatrix, Vec<AdapterPair>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "header")? != CONTAINER_MAGIC {
        return Err(SalrError::format("header", "bad magic"));
    }
    let version = cur.u16("header")?;
    if version != CONTAINER_VERSION {
        return Err(SalrError::format("header", format!("unsupported version {version}")));
    }
    let d_in = cur.u32("header")? as usize;
    let d_out = cur.u32("header")? as usize;
    let code = cur.take(1, "header")?[0];
    let dtype =
        ValueDtype::from_code(code).ok_or_else(|| SalrError::format("header", format!("unknown dtype {code}")))?;
    let n = cur.u16("header")? as usize;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = cur.u32("adapter table")? as usize;
        let scale = cur.f32("adapter table")?;
        if rank == 0 || rank > d_in.min(d_out) || !scale.is_finite() {
            return Err(SalrError::format("adapter table", format!("invalid record rank={rank} scale={scale}")));
        }
        records.push((rank, scale));
    }
    let offsets = [cur.u64("offsets")?, cur.u64("offsets")?, cur.u64("offsets")?];

    let bitmap_len =
        d_in.checked_mul(bytes_per_row(d_out)).ok_or_else(|| SalrError::format("header", "dimensions overflow"))?;
    if offsets[0] != cur.pos as u64 {
        return Err(SalrError::format("offsets", format!("bitmap offset {} != {}", offsets[0], cur.pos)));
    }
    let bitmap = cur.take(bitmap_len, "bitmap")?.to_vec();
    if offsets[1] != cur.pos as u64 {
        return Err(SalrError::format("offsets", format!("values offset {} != {}", offsets[1], cur.pos)));
    }
    let nnz: usize = bitmap.iter().map(|b| b.count_ones() as usize).sum();
    let values: Vec<f32> =
        cur.take(4 * nnz, "values")?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if offsets[2] != cur.pos as u64 {
        return Err(SalrError::format("offsets", format!("adapters offset {} != {}", offsets[2], cur.pos)));
    }
    let s = BitmapSparseMatrix::from_parts(d_in, d_out, bitmap, values, dtype)
        .map_err(|e| SalrError::format("bitmap", e.to_string()))?;
    let mut adapters = Vec::with_capacity(n);
    for (rank, scale) in records {
        let a = read_f32_matrix(&mut cur, d_in, rank)?;
        let b = read_f32_matrix(&mut cur, rank, d_out)?;
        adapters.push(AdapterPair::new(a, b, scale as f64)?);
    }
    if cur.pos != bytes.len() {
        return Err(SalrError::format("adapters", format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok((s, adapters))
}

pub fn write_container(path: impl AsRef<Path>, s: &BitmapSparseMatrix, adapters: &[AdapterPair]) -> Result<()> {
    fs::write(path, container_to_bytes(s, adapters)?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(BitmapSparseMatrix, Vec<AdapterPair>)> {
    container_from_bytes(&fs::read(path)?)
}
