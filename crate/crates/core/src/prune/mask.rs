//! Magnitude masks: global top-k (static or dynamic) and N:M semi-structured.

use std::cmp::Ordering;

use crate::error::{Result, SalrError};
use crate::linalg::DenseMatrix;

/// Which scores drive the mask, and which matrix the mask is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneMethod {
    /// Rank by `|W0|`, zero entries of `W0`.
    StaticOnW0,
    /// Rank by `|W0 + Δ|`, zero entries of `W0` only.
    DynamicMaskPruneW0,
    /// Rank by `|W0 + Δ|`, zero entries of `W0 + Δ`.
    DynamicOnU,
    /// Keep the `n` largest `|W0|` in each run of `m` columns.
    SemiStructured { n: usize, m: usize },
}

impl PruneMethod {
    pub fn needs_delta(self) -> bool {
        matches!(self, PruneMethod::DynamicMaskPruneW0 | PruneMethod::DynamicOnU)
    }

    pub fn name(self) -> String {
        match self {
            PruneMethod::StaticOnW0 => "static".into(),
            PruneMethod::DynamicMaskPruneW0 => "dynamic-w0".into(),
            PruneMethod::DynamicOnU => "dynamic-u".into(),
            PruneMethod::SemiStructured { n, m } => format!("nm:{n}:{m}"),
        }
    }
}

impl std::str::FromStr for PruneMethod {
    type Err = SalrError;

    /// Accepts `static`, `dynamic-w0`, `dynamic-u` and `nm:<n>:<m>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(PruneMethod::StaticOnW0),
            "dynamic-w0" => Ok(PruneMethod::DynamicMaskPruneW0),
            "dynamic-u" => Ok(PruneMethod::DynamicOnU),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                if let ["nm", n, m] = parts.as_slice() {
                    let n = n.parse().map_err(|_| SalrError::Domain(format!("bad N in {other}")))?;
                    let m = m.parse().map_err(|_| SalrError::Domain(format!("bad M in {other}")))?;
                    return Ok(PruneMethod::SemiStructured { n, m });
                }
                Err(SalrError::Domain(format!("unknown prune method {other:?}")))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    /// Fraction of entries to remove; ignored by `SemiStructured`, whose
    /// sparsity is `1 − n/m`.
    pub sparsity: f64,
    pub method: PruneMethod,
    /// Standard deviation of `W0` under the Gaussian model.
    pub sigma: f64,
    /// Standard deviation of `Δ = A*B*` under the Gaussian model.
    pub tau: f64,
}

impl PruneConfig {
    pub fn new(sparsity: f64, method: PruneMethod) -> Self {
        Self { sparsity, method, sigma: 1.0, tau: 0.0 }
    }

    pub fn validate(&self, cols: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(SalrError::Domain(format!("sparsity must satisfy 0 <= p < 1, got {}", self.sparsity)));
        }
        if !(self.sigma > 0.0 && self.tau >= 0.0) {
            return Err(SalrError::Domain("sigma must be > 0 and tau >= 0".into()));
        }
        if let PruneMethod::SemiStructured { n, m } = self.method {
            if !(0 < n && n < m) {
                return Err(SalrError::Domain(format!("N:M requires 0 < N < M, got {n}:{m}")));
            }
            if !cols.is_multiple_of(m) {
                return Err(SalrError::Domain(format!("M={m} does not divide row length {cols}")));
            }
        }
        Ok(())
    }
}

/// One bit per entry, row-major; a set bit means the entry is kept.
#[derive(Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for MaskMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MaskMatrix({}x{}, kept={})", self.rows, self.cols, self.kept_count())
    }
}

impl MaskMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![0; (rows * cols).div_ceil(64)] }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        let mut m = Self::empty(rows, cols);
        for idx in 0..rows * cols {
            m.set_flat(idx);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn set_flat(&mut self, idx: usize) {
        self.bits[idx / 64] |= 1 << (idx % 64);
    }

    #[inline]
    fn get_flat(&self, idx: usize) -> bool {
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.get_flat(i * self.cols + j)
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `m ∘ mask`: pruned entries set to zero.
    pub fn apply(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.shape() != (self.rows, self.cols) {
            return Err(SalrError::shape(
                "MaskMatrix::apply",
                format!("{:?} vs mask {}x{}", m.shape(), self.rows, self.cols),
            ));
        }
        Ok(DenseMatrix::from_fn(self.rows, self.cols, |i, j| if self.is_kept(i, j) { m.get(i, j) } else { 0.0 }))
    }
}

/// Entries kept by a global mask at sparsity `p` over `total` entries:
/// `⌈(1−p)·total⌉`, computed as `total − ⌊p·total⌋` to stay clear of
/// rounding in `1 − p`.
pub fn kept_count_for(p: f64, total: usize) -> usize {
    let pruned = (p * total as f64 + 1e-9).floor() as usize;
    total - pruned.min(total)
}

// Larger magnitude first; equal magnitudes keep the lower index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b))
}

fn global_top_k(rows: usize, cols: usize, scores: &[f64], keep: usize) -> MaskMatrix {
    let mut mask = MaskMatrix::empty(rows, cols);
    if keep == 0 {
        return mask;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if keep < idx.len() {
        idx.select_nth_unstable_by(keep - 1, |&a, &b| rank_order(scores, a, b));
    }
    for &i in &idx[..keep] {
        mask.set_flat(i);
    }
    mask
}

fn semi_structured(w0: &DenseMatrix, n: usize, m: usize) -> MaskMatrix {
    let (rows, cols) = w0.shape();
    let mut mask = MaskMatrix::empty(rows, cols);
    let mut group: Vec<usize> = Vec::with_capacity(m);
    for i in 0..rows {
        let row = w0.row(i);
        for g in (0..cols).step_by(m) {
            group.clear();
            group.extend(g..g + m);
            group.sort_by(|&a, &b| rank_order(row, a, b));
            for &j in &group[..n] {
                mask.set_flat(i * cols + j);
            }
        }
    }
    mask
}

/// Builds the keep-mask for `cfg.method`.
///
/// Global methods keep exactly [`kept_count_for`] entries by exact order
/// statistics; `delta` is required by the dynamic methods and ignored by the
/// others.
pub fn build_mask(w0: &DenseMatrix, delta: Option<&DenseMatrix>, cfg: &PruneConfig) -> Result<MaskMatrix> {
    cfg.validate(w0.cols())?;
    let (rows, cols) = w0.shape();
    if let Some(d) = delta {
        if d.shape() != w0.shape() {
            return Err(SalrError::shape("build_mask", format!("w0 {:?} vs delta {:?}", w0.shape(), d.shape())));
        }
    }
    let keep = kept_count_for(cfg.sparsity, rows * cols);
    match cfg.method {
        PruneMethod::StaticOnW0 => Ok(global_top_k(rows, cols, w0.as_slice(), keep)),
        PruneMethod::DynamicMaskPruneW0 | PruneMethod::DynamicOnU => {
            let delta =
                delta.ok_or_else(|| SalrError::Config(format!("method {} needs a delta matrix", cfg.method.name())))?;
            let u = w0.add(delta)?;
            Ok(global_top_k(rows, cols, u.as_slice(), keep))
        }
        PruneMethod::SemiStructured { n, m } => Ok(semi_structured(w0, n, m)),
    }
}

/// Sample mean of per-entry squared errors with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl MeanEstimate {
    pub(crate) fn from_sums(sum: f64, sum_sq: f64, n: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Self { mean, std_err: (var / nf).sqrt(), samples: n }
    }

    /// `|mean − target| ≤ k·SE`.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

/// Squared error of pruning under `method`, as mean and standard error.
///
/// Methods that prune `W0` only are measured against `U = W0 + Δ` with `Δ`
/// intact, so the per-entry error is the pruned part of `W0`; `DynamicOnU`
/// zeroes entries of `U` itself.
pub fn mask_error_stats(
    w0: &DenseMatrix,
    delta: Option<&DenseMatrix>,
    mask: &MaskMatrix,
    method: PruneMethod,
) -> Result<MeanEstimate> {
    if mask.rows != w0.rows() || mask.cols != w0.cols() {
        return Err(SalrError::shape("apply_mask_and_measure", "mask and w0 differ"));
    }
    if let Some(d) = delta {
        if d.shape() != w0.shape() {
            return Err(SalrError::shape("apply_mask_and_measure", "delta and w0 differ"));
        }
    }
    if method == PruneMethod::DynamicOnU && delta.is_none() {
        return Err(SalrError::Config("dynamic-u measurement needs a delta matrix".into()));
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (idx, &w) in w0.as_slice().iter().enumerate() {
        if mask.get_flat(idx) {
            continue;
        }
        let err = match method {
            PruneMethod::DynamicOnU => w + delta.unwrap().as_slice()[idx],
            _ => w,
        };
        let e2 = err * err;
        sum += e2;
        sum_sq += e2 * e2;
    }
    Ok(MeanEstimate::from_sums(sum, sum_sq, w0.as_slice().len() as u64))
}

/// Per-entry MSE between the weight before and after pruning.
pub fn apply_mask_and_measure(
    w0: &DenseMatrix,
    delta: Option<&DenseMatrix>,
    mask: &MaskMatrix,
    method: PruneMethod,
) -> Result<f64> {
    Ok(mask_error_stats(w0, delta, mask, method)?.mean)
}
