use crate::error::{Result, SalrError};
use crate::linalg::{matmul, sample_gaussian_matrix, svd, DenseMatrix, RngState, SvdResult};

/// Low-rank factor pair contributing `scale · A · B` to a `d × k` weight.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterPair {
    a: DenseMatrix,
    b: DenseMatrix,
    scale: f64,
}

impl AdapterPair {
    pub fn new(a: DenseMatrix, b: DenseMatrix, scale: f64) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(SalrError::shape(
                "AdapterPair::new",
                format!("A is {}x{}, B is {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            ));
        }
        let r = a.cols();
        if r == 0 || r > a.rows().min(b.cols()) {
            return Err(SalrError::Domain(format!("rank {r} outside 1..={}", a.rows().min(b.cols()))));
        }
        if !scale.is_finite() {
            return Err(SalrError::Domain("adapter scale must be finite".into()));
        }
        Ok(Self { a, b, scale })
    }

    pub fn zeros(d_in: usize, d_out: usize, rank: usize) -> Result<Self> {
        Self::new(DenseMatrix::zeros(d_in, rank), DenseMatrix::zeros(rank, d_out), 1.0)
    }

    /// Fresh LoRA pair: `A ~ N(0, 1/d_in)`, `B = 0`.
    pub fn lora_init(rng: &mut RngState, d_in: usize, d_out: usize, rank: usize, scale: f64) -> Result<Self> {
        let a = sample_gaussian_matrix(rng, d_in, rank, 1.0 / (d_in as f64).sqrt());
        Self::new(a, DenseMatrix::zeros(rank, d_out), scale)
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn d_in(&self) -> usize {
        self.a.rows()
    }

    pub fn d_out(&self) -> usize {
        self.b.cols()
    }

    pub fn param_count(&self) -> usize {
        self.rank() * (self.d_in() + self.d_out())
    }

    /// Dense `scale · A · B`.
    pub fn delta(&self) -> DenseMatrix {
        let ab = matmul(&self.a, &self.b).expect("factor shapes checked at construction");
        if self.scale == 1.0 {
            ab
        } else {
            ab.scaled(self.scale)
        }
    }

    /// `B` with the scale folded in.
    pub(crate) fn scaled_b(&self) -> DenseMatrix {
        if self.scale == 1.0 {
            self.b.clone()
        } else {
            self.b.scaled(self.scale)
        }
    }
}

/// Rank-`r` truncation of a precomputed SVD as an adapter pair
/// `(U_r·diag(s_r), Vt_r)`.
pub(crate) fn adapter_from_svd(dec: &SvdResult, r: usize) -> Result<AdapterPair> {
    let d = dec.u.rows();
    let k = dec.vt.cols();
    let a = DenseMatrix::from_fn(d, r, |i, j| dec.u.get(i, j) * dec.s[j]);
    let b = dec.vt.submatrix(0..r, 0..k);
    AdapterPair::new(a, b, 1.0)
}

fn check_rank(r: usize, d: usize, k: usize) -> Result<()> {
    if r == 0 || r > d.min(k) {
        return Err(SalrError::Domain(format!("rank {r} outside 1..={}", d.min(k))));
    }
    Ok(())
}

/// Best rank-`r` approximation of `E = w − w_hat` as an adapter pair.
pub fn build_residual_adapter(w: &DenseMatrix, w_hat: &DenseMatrix, r: usize) -> Result<AdapterPair> {
    let e = w.sub(w_hat)?;
    check_rank(r, e.rows(), e.cols())?;
    adapter_from_svd(&svd(&e)?, r)
}

/// Per-entry residual error after a rank-`r` correction against its
/// uniform-spectrum ceiling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBound {
    /// `‖E − E_r‖_F² / (dk)`, from the reconstructed truncation.
    pub lhs: f64,
    /// `(1 − r/q) · ‖E‖_F² / (dk)`.
    pub rhs: f64,
    /// `Σ_{i>r} σ_i² / (dk)`.
    pub tail_per_entry: f64,
    /// `|‖E − E_r‖_F² − Σ_{i>r} σ_i²|`, relative to the tail sum floored at
    /// `ε·‖E‖_F²`.
    pub eckart_young_rel_err: f64,
    /// `‖E‖_F² / (dk)`.
    pub energy_per_entry: f64,
}

impl ResidualBound {
    /// `lhs ≤ rhs`, allowing rounding of order `1e-12 · ‖E‖_F² / (dk)`.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-12 * self.energy_per_entry
    }
}

pub fn verify_theorem3_bound(e: &DenseMatrix, r: usize) -> Result<ResidualBound> {
    let (d, k) = e.shape();
    check_rank(r, d, k)?;
    let dec = svd(e)?;
    Ok(bound_from_svd(e, &dec, r))
}

pub(crate) fn bound_from_svd(e: &DenseMatrix, dec: &SvdResult, r: usize) -> ResidualBound {
    let (d, k) = e.shape();
    let q = d.min(k);
    let n = (d * k) as f64;
    let total: f64 = dec.s.iter().map(|s| s * s).sum();
    let tail: f64 = dec.s[r..].iter().map(|s| s * s).sum();
    let err = e.sub(&dec.reconstruct(r)).expect("same shape").frobenius_norm_sq();
    let denom = tail.max(f64::EPSILON * total).max(f64::MIN_POSITIVE);
    ResidualBound {
        lhs: err / n,
        rhs: (q - r) as f64 / q as f64 * total / n,
        tail_per_entry: tail / n,
        eckart_young_rel_err: (err - tail).abs() / denom,
        energy_per_entry: total / n,
    }
}
