use std::ops::Range;

use half::f16;

use crate::error::{Result, SalrError};
use crate::linalg::DenseMatrix;

/// Set bits in a byte mask.
#[inline]
pub fn popcount8(m: u8) -> u32 {
    m.count_ones()
}

/// For each byte mask, the within-block value index of every set bit
/// (`-1` for cleared bits).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeLut {
    table: [[i8; 8]; 256],
}

impl DecodeLut {
    #[inline]
    pub fn entry(&self, mask: u8) -> &[i8; 8] {
        &self.table[mask as usize]
    }
}

pub const fn build_lut() -> DecodeLut {
    let mut table = [[-1i8; 8]; 256];
    let mut m = 0;
    while m < 256 {
        let mut next = 0i8;
        let mut t = 0;
        while t < 8 {
            if (m >> t) & 1 == 1 {
                table[m][t] = next;
                next += 1;
            }
            t += 1;
        }
        m += 1;
    }
    DecodeLut { table }
}

pub static LUT: DecodeLut = build_lut();

/// Precision of the stored value array. Both are held as f32; `F16`
/// values are additionally rounded to half precision at encode time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueDtype {
    F32 = 0,
    F16 = 1,
}

impl ValueDtype {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ValueDtype::F32),
            1 => Some(ValueDtype::F16),
            _ => None,
        }
    }

    /// Bytes per value in the analytic size model.
    pub fn nominal_width(self) -> usize {
        match self {
            ValueDtype::F32 => 4,
            ValueDtype::F16 => 2,
        }
    }

    fn round(self, v: f64) -> f32 {
        match self {
            ValueDtype::F32 => v as f32,
            ValueDtype::F16 => f16::from_f64(v).to_f32(),
        }
    }
}

pub(crate) fn bytes_per_row(cols: usize) -> usize {
    cols.div_ceil(8)
}

/// Pruned matrix as a row-major bitmap plus the compact array of kept values.
#[derive(Clone, Debug)]
pub struct BitmapSparseMatrix {
    rows: usize,
    cols: usize,
    bitmap: Vec<u8>,
    values: Vec<f32>,
    dtype: ValueDtype,
    /// Offset of each row's first value in `values` (length `rows + 1`).
    row_start: Vec<usize>,
    /// Values preceding each byte block within its row.
    block_prefix: Vec<u32>,
}

impl PartialEq for BitmapSparseMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.dtype == other.dtype
            && self.bitmap == other.bitmap
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl BitmapSparseMatrix {
    /// Validates raw parts and builds the in-memory prefix index.
    pub fn from_parts(rows: usize, cols: usize, bitmap: Vec<u8>, values: Vec<f32>, dtype: ValueDtype) -> Result<Self> {
        let bpr = bytes_per_row(cols);
        if bitmap.len() != rows * bpr {
            return Err(SalrError::Corruption(format!("bitmap has {} bytes, expected {}", bitmap.len(), rows * bpr)));
        }
        let pad = (bpr * 8 - cols) as u32;
        if pad > 0 {
            let keep = 0xFFu8 >> pad;
            if let Some(i) = (0..rows).find(|i| bitmap[i * bpr + bpr - 1] & !keep != 0) {
                return Err(SalrError::Corruption(format!("padding bits set in row {i}")));
            }
        }
        let mut row_start = Vec::with_capacity(rows + 1);
        let mut block_prefix = Vec::with_capacity(rows * bpr);
        let mut total = 0usize;
        for row in bitmap.chunks_exact(bpr.max(1)).take(rows) {
            row_start.push(total);
            let mut within = 0u32;
            for &mask in row.iter().take(bpr) {
                block_prefix.push(within);
                within += popcount8(mask);
            }
            total += within as usize;
        }
        // chunks_exact yields nothing when bpr == 0
        row_start.resize(rows, 0);
        row_start.push(total);
        if total != values.len() {
            return Err(SalrError::Corruption(format!("bitmap marks {total} values, array holds {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v == 0.0) {
            return Err(SalrError::Corruption(format!("invalid stored value {v}")));
        }
        Ok(Self { rows, cols, bitmap, values, dtype, row_start, block_prefix })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bytes_per_row(&self) -> usize {
        bytes_per_row(self.cols)
    }

    pub fn bitmap(&self) -> &[u8] {
        &self.bitmap
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dtype(&self) -> ValueDtype {
        self.dtype
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn sparsity(&self) -> f64 {
        let n = self.rows * self.cols;
        if n == 0 {
            0.0
        } else {
            1.0 - self.nnz() as f64 / n as f64
        }
    }

    #[inline]
    fn block_offset(&self, row: usize, block: usize) -> usize {
        self.row_start[row] + self.block_prefix[row * self.bytes_per_row() + block] as usize
    }

    /// Decodes rows `row_range`, byte blocks `block_range` into `out`
    /// (cleared and resized, row-major); returns the tile shape.
    pub fn decode_tile_into(
        &self,
        row_range: Range<usize>,
        block_range: Range<usize>,
        out: &mut Vec<f64>,
    ) -> Result<(usize, usize)> {
        let bpr = self.bytes_per_row();
        if row_range.start > row_range.end
            || row_range.end > self.rows
            || block_range.start > block_range.end
            || block_range.end > bpr
        {
            return Err(SalrError::Bounds(format!(
                "tile rows {row_range:?} blocks {block_range:?} outside {}x{bpr}",
                self.rows
            )));
        }
        let c0 = block_range.start * 8;
        let c1 = (block_range.end * 8).min(self.cols);
        let width = c1.saturating_sub(c0);
        let height = row_range.len();
        out.clear();
        out.resize(height * width, 0.0);
        for (ti, i) in row_range.enumerate() {
            let out_row = &mut out[ti * width..(ti + 1) * width];
            let masks = &self.bitmap[i * bpr + block_range.start..i * bpr + block_range.end];
            let mut base = if block_range.is_empty() { 0 } else { self.block_offset(i, block_range.start) };
            for (bi, &mask) in masks.iter().enumerate() {
                if mask != 0 {
                    let lut = LUT.entry(mask);
                    let dst = &mut out_row[bi * 8..];
                    for (t, &l) in lut.iter().enumerate() {
                        if l >= 0 {
                            dst[t] = self.values[base + l as usize] as f64;
                        }
                    }
                    base += popcount8(mask) as usize;
                }
            }
        }
        Ok((height, width))
    }
}

/// Builds the bitmap and value array of `m`. An entry is stored iff its
/// value rounded to `dtype` is nonzero, so `-0.0` and underflowing values
/// are cleared.
pub fn encode(m: &DenseMatrix, dtype: ValueDtype) -> Result<BitmapSparseMatrix> {
    let (rows, cols) = m.shape();
    let bpr = bytes_per_row(cols);
    let mut bitmap = vec![0u8; rows * bpr];
    let mut values = Vec::new();
    for i in 0..rows {
        for (j, &v) in m.row(i).iter().enumerate() {
            let f = dtype.round(v);
            if f == 0.0 {
                continue;
            }
            if !f.is_finite() {
                return Err(SalrError::Domain(format!("value {v} at ({i},{j}) overflows {dtype:?}")));
            }
            bitmap[i * bpr + j / 8] |= 1 << (j % 8);
            values.push(f);
        }
    }
    BitmapSparseMatrix::from_parts(rows, cols, bitmap, values, dtype)
}

pub fn decode(s: &BitmapSparseMatrix) -> DenseMatrix {
    let mut buf = Vec::new();
    s.decode_tile_into(0..s.rows(), 0..s.bytes_per_row(), &mut buf).expect("full range is in bounds");
    DenseMatrix::new(s.rows(), s.cols(), buf).expect("stored values are finite")
}

/// Dense tile for rows `row_range` and byte blocks `block_range`.
pub fn decode_block(s: &BitmapSparseMatrix, row_range: Range<usize>, block_range: Range<usize>) -> Result<DenseMatrix> {
    let mut buf = Vec::new();
    let (h, w) = s.decode_tile_into(row_range, block_range, &mut buf)?;
    DenseMatrix::new(h, w, buf)
}
