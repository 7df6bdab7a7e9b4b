//! Concatenated adapters: `n` low-rank updates applied with two products.

use std::ops::Range;

use crate::codec::BitmapSparseMatrix;
use crate::error::{Result, SalrError};
use crate::linalg::{matmul, DenseMatrix};
use crate::pipeline::{pipelined_forward, pipelined_matmul, PipelineConfig};
use crate::residual::AdapterPair;

/// Adapters stacked along the rank dimension; each `B` block carries its
/// adapter's scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedAdapters {
    a_cat: DenseMatrix,
    b_cat: DenseMatrix,
    offsets: Vec<usize>,
}

impl FusedAdapters {
    pub fn a_cat(&self) -> &DenseMatrix {
        &self.a_cat
    }

    pub fn b_cat(&self) -> &DenseMatrix {
        &self.b_cat
    }

    /// Start of each adapter's rank slice.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn total_rank(&self) -> usize {
        self.a_cat.cols()
    }

    pub fn d_in(&self) -> usize {
        self.a_cat.rows()
    }

    pub fn d_out(&self) -> usize {
        self.b_cat.cols()
    }

    fn slice_range(&self, i: usize) -> Range<usize> {
        let end = self.offsets.get(i + 1).copied().unwrap_or(self.total_rank());
        self.offsets[i]..end
    }

    /// Adapter `i` as stored: `(A_i, scale_i · B_i)`.
    pub fn slice(&self, i: usize) -> (DenseMatrix, DenseMatrix) {
        let r = self.slice_range(i);
        (self.a_cat.submatrix(0..self.d_in(), r.clone()), self.b_cat.submatrix(r, 0..self.d_out()))
    }
}

pub fn fuse(adapters: &[AdapterPair]) -> Result<FusedAdapters> {
    let first = adapters.first().ok_or_else(|| SalrError::Domain("cannot fuse an empty adapter list".into()))?;
    let (d_in, d_out) = (first.d_in(), first.d_out());
    if let Some((i, ad)) = adapters.iter().enumerate().find(|(_, ad)| (ad.d_in(), ad.d_out()) != (d_in, d_out)) {
        return Err(SalrError::shape(
            "fuse",
            format!("adapter {i} is {}x{}, adapter 0 is {d_in}x{d_out}", ad.d_in(), ad.d_out()),
        ));
    }
    let mut offsets = Vec::with_capacity(adapters.len());
    let mut total = 0;
    for ad in adapters {
        offsets.push(total);
        total += ad.rank();
    }
    let mut a_data = vec![0.0; d_in * total];
    let mut b_data = Vec::with_capacity(total * d_out);
    for (ad, &off) in adapters.iter().zip(&offsets) {
        let r = ad.rank();
        for i in 0..d_in {
            a_data[i * total + off..i * total + off + r].copy_from_slice(ad.a().row(i));
        }
        b_data.extend_from_slice(ad.scaled_b().as_slice());
    }
    Ok(FusedAdapters {
        a_cat: DenseMatrix::new(d_in, total, a_data)?,
        b_cat: DenseMatrix::new(total, d_out, b_data)?,
        offsets,
    })
}

/// `(x · A_cat) · B_cat`: two matrix products for any number of adapters.
pub fn apply_fused(x: &DenseMatrix, fused: &FusedAdapters) -> Result<DenseMatrix> {
    if x.cols() != fused.d_in() {
        return Err(SalrError::shape(
            "apply_fused",
            format!("x has {} cols, adapters expect {}", x.cols(), fused.d_in()),
        ));
    }
    matmul(&matmul(x, &fused.a_cat)?, &fused.b_cat)
}

/// `Σ_i (x · A_i) · (scale_i · B_i)`, one adapter at a time.
pub fn apply_sequential(x: &DenseMatrix, adapters: &[AdapterPair]) -> Result<DenseMatrix> {
    let d_out = adapters.first().map_or(0, AdapterPair::d_out);
    let mut acc = DenseMatrix::zeros(x.rows(), d_out);
    for ad in adapters {
        if x.cols() != ad.d_in() || ad.d_out() != d_out {
            return Err(SalrError::shape(
                "apply_sequential",
                format!("x has {} cols, adapter is {}x{}", x.cols(), ad.d_in(), ad.d_out()),
            ));
        }
        acc = acc.add(&matmul(&matmul(x, ad.a())?, &ad.scaled_b())?)?;
    }
    Ok(acc)
}

/// Base weight for [`forward`].
#[derive(Clone, Copy)]
pub enum WeightRef<'a> {
    Dense(&'a DenseMatrix),
    /// Routed through the decode/multiply pipeline.
    Sparse(&'a BitmapSparseMatrix, &'a PipelineConfig),
}

impl WeightRef<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            WeightRef::Dense(w) => w.shape(),
            WeightRef::Sparse(s, _) => (s.rows(), s.cols()),
        }
    }
}

/// `y = x·W + Δy`.
pub fn forward(x: &DenseMatrix, w: WeightRef, adapters: Option<&FusedAdapters>) -> Result<DenseMatrix> {
    if let Some(f) = adapters {
        if (f.d_in(), f.d_out()) != w.shape() {
            return Err(SalrError::shape(
                "forward",
                format!("weight is {:?}, adapters are {}x{}", w.shape(), f.d_in(), f.d_out()),
            ));
        }
    }
    match (w, adapters) {
        (WeightRef::Dense(w), None) => matmul(x, w),
        (WeightRef::Dense(w), Some(f)) => matmul(x, w)?.add(&apply_fused(x, f)?),
        (WeightRef::Sparse(s, cfg), None) => pipelined_matmul(x, s, cfg),
        (WeightRef::Sparse(s, cfg), Some(f)) => pipelined_forward(x, s, f, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, ValueDtype};
    use crate::linalg::{matmul_count, sample_gaussian_matrix, RngState};

    fn random_adapters(rng: &mut RngState, d: usize, k: usize, ranks: &[usize]) -> Vec<AdapterPair> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let a = sample_gaussian_matrix(rng, d, r, 1.0);
                let b = sample_gaussian_matrix(rng, r, k, 1.0);
                AdapterPair::new(a, b, 1.0 / (1 + i) as f64).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_adapter_is_itself() {
        let mut rng = RngState::new(1);
        let ads = random_adapters(&mut rng, 6, 5, &[2]);
        let f = fuse(&ads).unwrap();
        assert_eq!(f.a_cat(), ads[0].a());
        assert_eq!(f.b_cat(), ads[0].b());
        let x = sample_gaussian_matrix(&mut rng, 3, 6, 1.0);
        let direct = matmul(&matmul(&x, ads[0].a()).unwrap(), ads[0].b()).unwrap();
        assert_eq!(apply_fused(&x, &f).unwrap(), direct);
        assert_eq!(apply_sequential(&x, &ads).unwrap(), direct);
    }

    #[test]
    fn offsets_and_slices() {
        let mut rng = RngState::new(2);
        let ads = random_adapters(&mut rng, 7, 4, &[2, 2]);
        let f = fuse(&ads).unwrap();
        assert_eq!(f.total_rank(), 4);
        assert_eq!(f.offsets(), &[0, 2]);
        let ads = random_adapters(&mut rng, 7, 9, &[3, 1, 4]);
        let f = fuse(&ads).unwrap();
        assert_eq!(f.offsets(), &[0, 3, 4]);
        for (i, ad) in ads.iter().enumerate() {
            let (a, b) = f.slice(i);
            assert_eq!(&a, ad.a());
            assert_eq!(b, ad.b().scaled(ad.scale()));
        }
    }

    #[test]
    fn cancelling_pair() {
        let mut rng = RngState::new(3);
        let a = sample_gaussian_matrix(&mut rng, 5, 2, 1.0);
        let b = sample_gaussian_matrix(&mut rng, 2, 6, 1.0);
        let ads =
            [AdapterPair::new(a.clone(), b.clone(), 1.0).unwrap(), AdapterPair::new(a, b.scaled(-1.0), 1.0).unwrap()];
        let x = sample_gaussian_matrix(&mut rng, 4, 5, 1.0);
        let y = apply_fused(&x, &fuse(&ads).unwrap()).unwrap();
        assert!(y.frobenius_norm() <= 1e-12);
    }

    #[test]
    fn fused_equals_sequential() {
        let mut rng = RngState::new(4);
        for n in 1..=5 {
            let ranks: Vec<usize> = (0..n).map(|i| 1 + (i * 3) % 4).collect();
            let ads = random_adapters(&mut rng, 16, 12, &ranks);
            let x = sample_gaussian_matrix(&mut rng, 8, 16, 1.0);
            let fused = apply_fused(&x, &fuse(&ads).unwrap()).unwrap();
            let seq = apply_sequential(&x, &ads).unwrap();
            assert!(fused.rel_frobenius_diff(&seq) <= 1e-12, "n={n}");
        }
    }

    #[test]
    fn two_products_for_any_n() {
        let mut rng = RngState::new(5);
        for n in [1, 2, 7, 20] {
            let ads = random_adapters(&mut rng, 10, 10, &vec![1; n]);
            let f = fuse(&ads).unwrap();
            let x = sample_gaussian_matrix(&mut rng, 3, 10, 1.0);
            let before = matmul_count();
            apply_fused(&x, &f).unwrap();
            assert_eq!(matmul_count() - before, 2);
            let before = matmul_count();
            apply_sequential(&x, &ads).unwrap();
            assert_eq!(matmul_count() - before, 2 * n as u64);
        }
    }

    #[test]
    fn order_does_not_matter() {
        let mut rng = RngState::new(6);
        let mut ads = random_adapters(&mut rng, 9, 7, &[2, 3, 1]);
        let x = sample_gaussian_matrix(&mut rng, 4, 9, 1.0);
        let y1 = apply_fused(&x, &fuse(&ads).unwrap()).unwrap();
        ads.reverse();
        let y2 = apply_fused(&x, &fuse(&ads).unwrap()).unwrap();
        assert!(y1.rel_frobenius_diff(&y2) <= 1e-12);
    }

    #[test]
    fn fuse_errors() {
        assert!(matches!(fuse(&[]), Err(SalrError::Domain(_))));
        let mut rng = RngState::new(7);
        let mut ads = random_adapters(&mut rng, 5, 5, &[1]);
        ads.extend(random_adapters(&mut rng, 5, 6, &[1]));
        assert!(matches!(fuse(&ads), Err(SalrError::Shape { .. })));
        let f = fuse(&ads[..1]).unwrap();
        assert!(apply_fused(&DenseMatrix::zeros(2, 4), &f).is_err());
    }

    #[test]
    fn forward_dense_and_sparse() {
        let mut rng = RngState::new(8);
        let w =
            sample_gaussian_matrix(&mut rng, 24, 17, 1.0).round_to_f32().map(|v| if v.abs() < 0.5 { 0.0 } else { v });
        let ads = random_adapters(&mut rng, 24, 17, &[2, 3]);
        let f = fuse(&ads).unwrap();
        let x = sample_gaussian_matrix(&mut rng, 5, 24, 1.0);
        let s = encode(&w, ValueDtype::F32).unwrap();
        let cfg = PipelineConfig { tile_rows: 5, tile_col_bytes: 1, ..Default::default() };
        assert_eq!(forward(&x, WeightRef::Dense(&w), None).unwrap(), matmul(&x, &w).unwrap());
        let dense = forward(&x, WeightRef::Dense(&w), Some(&f)).unwrap();
        let sparse = forward(&x, WeightRef::Sparse(&s, &cfg), Some(&f)).unwrap();
        assert_eq!(dense, sparse);
        let oracle = matmul(&x, &w.add(&ads[0].delta()).unwrap().add(&ads[1].delta()).unwrap()).unwrap();
        assert!(dense.rel_frobenius_diff(&oracle) <= 1e-12);
        let zero = DenseMatrix::zeros(24, 17);
        assert!(
            forward(&x, WeightRef::Dense(&zero), Some(&f)).unwrap().rel_frobenius_diff(&apply_fused(&x, &f).unwrap())
                == 0.0
        );
    }
}
