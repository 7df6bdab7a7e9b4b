//! Property tests for the invariants each module promises.

use proptest::prelude::*;

use salr::codec::{
    container_from_bytes, container_to_bytes, decode, decode_block, encode, ContainerLayout, ValueDtype, LUT,
};
use salr::fusion::{apply_fused, apply_sequential, fuse};
use salr::linalg::{matmul, matmul_count, sample_gaussian_matrix, svd, DenseMatrix, RngState};
use salr::pipeline::{pipelined_forward, pipelined_matmul, PipelineConfig};
use salr::prune::{build_mask, e1_closed, e3_closed, kept_count_for, q_function, PruneConfig, PruneMethod};
use salr::residual::{
    loss_nonincreasing, spectrum, train_residual, verify_theorem3_bound, AdapterPair, ResidualTrainConfig, StepSize,
};
use salr::SalrError;

/// A sparse matrix whose entries are exactly representable in f32; about
/// `density` of them are nonzero.
fn sparse_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 1..=max_cols, 0.0f64..=1.0).prop_flat_map(|(rows, cols, density)| {
        prop::collection::vec((0.0f64..1.0, -1.0e3f32..1.0e3f32), rows * cols).prop_map(move |cells| {
            let data = cells.into_iter().map(|(u, v)| if u < density && v != 0.0 { v as f64 } else { 0.0 }).collect();
            DenseMatrix::new(rows, cols, data).unwrap()
        })
    })
}

fn gaussian(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    sample_gaussian_matrix(&mut RngState::new(seed), rows, cols, 1.0)
}

fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn codec_round_trip_is_bit_exact(m in sparse_matrix(24, 45)) {
        let s = encode(&m, ValueDtype::F32).unwrap();
        prop_assert_eq!(s.bitmap().len(), m.rows() * m.cols().div_ceil(8));
        prop_assert_eq!(s.nnz(), m.count_nonzero());
        let popcounts: usize = s.bitmap().iter().map(|b| b.count_ones() as usize).sum();
        prop_assert_eq!(popcounts, s.nnz());
        prop_assert_eq!(bits(&decode(&s)), bits(&m));
    }

    #[test]
    fn container_round_trip_is_byte_identical(m in sparse_matrix(16, 37), ranks in prop::collection::vec(1usize..4, 0..3), seed in any::<u64>()) {
        let q = m.rows().min(m.cols());
        let mut rng = RngState::new(seed);
        let adapters: Vec<AdapterPair> = ranks
            .iter()
            .map(|&r| {
                let r = r.min(q);
                let a = sample_gaussian_matrix(&mut rng, m.rows(), r, 1.0).round_to_f32();
                let b = sample_gaussian_matrix(&mut rng, r, m.cols(), 1.0).round_to_f32();
                AdapterPair::new(a, b, 0.5).unwrap()
            })
            .collect();
        let s = encode(&m, ValueDtype::F32).unwrap();
        let bytes = container_to_bytes(&s, &adapters).unwrap();
        let used: Vec<usize> = adapters.iter().map(AdapterPair::rank).collect();
        prop_assert_eq!(bytes.len(), ContainerLayout::new(m.rows(), m.cols(), s.nnz(), &used).total());
        let (s2, adapters2) = container_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&s2, &s);
        prop_assert_eq!(container_to_bytes(&s2, &adapters2).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn f16_storage_is_idempotent(m in sparse_matrix(12, 30)) {
        let once = decode(&encode(&m, ValueDtype::F16).unwrap());
        let twice = decode(&encode(&once, ValueDtype::F16).unwrap());
        prop_assert_eq!(bits(&once), bits(&twice));
        for (&a, &b) in m.as_slice().iter().zip(once.as_slice()) {
            prop_assert!(b == 0.0 || (a - b).abs() <= a.abs() * 1e-3);
        }
    }

    #[test]
    fn block_decode_matches_slice(m in sparse_matrix(20, 40), r0 in 0usize..20, r1 in 0usize..21, b0 in 0usize..5, b1 in 0usize..6) {
        let s = encode(&m, ValueDtype::F32).unwrap();
        let bpr = s.bytes_per_row();
        let (r0, r1) = (r0.min(m.rows()), r1.min(m.rows()));
        let (b0, b1) = (b0.min(bpr), b1.min(bpr));
        prop_assume!(r0 <= r1 && b0 <= b1);
        let block = decode_block(&s, r0..r1, b0..b1).unwrap();
        let c1 = (b1 * 8).min(m.cols());
        let c0 = (b0 * 8).min(c1);
        prop_assert_eq!(bits(&block), bits(&m.submatrix(r0..r1, c0..c1)));
    }

    #[test]
    fn truncated_containers_are_format_errors(m in sparse_matrix(8, 20), cut in 0.0f64..1.0) {
        let s = encode(&m, ValueDtype::F32).unwrap();
        let ad = AdapterPair::new(DenseMatrix::zeros(m.rows(), 1), DenseMatrix::zeros(1, m.cols()), 1.0).unwrap();
        let bytes = container_to_bytes(&s, &[ad]).unwrap();
        let n = ((bytes.len() as f64) * cut) as usize;
        let err = container_from_bytes(&bytes[..n]).unwrap_err();
        prop_assert!(matches!(err, SalrError::Format { .. }), "{err}");
        prop_assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn static_mask_keeps_the_largest_magnitudes(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..20, p in 0.0f64..0.99) {
        let w = gaussian(seed, rows, cols);
        let mask = build_mask(&w, None, &PruneConfig::new(p, PruneMethod::StaticOnW0)).unwrap();
        prop_assert_eq!(mask.kept_count(), kept_count_for(p, rows * cols));
        let (mut min_kept, mut max_pruned) = (f64::INFINITY, 0.0f64);
        for i in 0..rows {
            for j in 0..cols {
                let a = w.get(i, j).abs();
                if mask.is_kept(i, j) { min_kept = min_kept.min(a) } else { max_pruned = max_pruned.max(a) }
            }
        }
        prop_assert!(min_kept >= max_pruned);
    }

    #[test]
    fn n_m_mask_keeps_n_per_group(seed in any::<u64>(), rows in 1usize..10, groups in 1usize..6, (n, m) in (2usize..9).prop_flat_map(|m| (1..m, Just(m)))) {
        let cols = groups * m;
        let w = gaussian(seed, rows, cols);
        let mask = build_mask(&w, None, &PruneConfig::new(0.0, PruneMethod::SemiStructured { n, m })).unwrap();
        for i in 0..rows {
            for g in 0..groups {
                let kept: Vec<usize> = (g * m..(g + 1) * m).filter(|&j| mask.is_kept(i, j)).collect();
                prop_assert_eq!(kept.len(), n);
                let min_kept = kept.iter().map(|&j| w.get(i, j).abs()).fold(f64::INFINITY, f64::min);
                let max_pruned = (g * m..(g + 1) * m)
                    .filter(|&j| !mask.is_kept(i, j))
                    .map(|j| w.get(i, j).abs())
                    .fold(0.0, f64::max);
                prop_assert!(min_kept >= max_pruned);
            }
        }
    }

    #[test]
    fn pruning_error_grows_with_sparsity(p in 0.01f64..0.98, dp in 0.001f64..0.01, sigma in 0.1f64..10.0, tau in 0.0f64..10.0) {
        let p2 = (p + dp).min(0.989);
        prop_assert!(e1_closed(p, sigma).unwrap() <= e1_closed(p2, sigma).unwrap());
        prop_assert!(e1_closed(p, sigma).unwrap() <= e3_closed(p, sigma, tau).unwrap());
        prop_assert!(q_function(p).unwrap() >= 0.0);
    }

    #[test]
    fn eckart_young_and_residual_bound(seed in any::<u64>(), rows in 2usize..16, cols in 2usize..16, p in 0.05f64..0.95) {
        let w = gaussian(seed, rows, cols);
        let mask = build_mask(&w, None, &PruneConfig::new(p, PruneMethod::StaticOnW0)).unwrap();
        let e = w.sub(&mask.apply(&w).unwrap()).unwrap();
        prop_assume!(e.frobenius_norm_sq() > 0.0);
        let spec = spectrum(&e).unwrap();
        for r in 1..=rows.min(cols) {
            let b = verify_theorem3_bound(&e, r).unwrap();
            prop_assert!(b.eckart_young_rel_err <= 1e-8, "r={} err={}", r, b.eckart_young_rel_err);
            prop_assert!(b.holds(), "r={} lhs={} rhs={}", r, b.lhs, b.rhs);
            let captured = 1.0 - b.lhs / b.energy_per_entry;
            prop_assert!((captured - spec.energy_at_rank(r)).abs() <= 1e-8);
        }
    }

    #[test]
    fn gradient_descent_never_raises_the_loss(seed in any::<u64>(), half in any::<bool>()) {
        let mut rng = RngState::new(seed);
        let x = sample_gaussian_matrix(&mut rng, 12, 6, 1.0);
        let y = sample_gaussian_matrix(&mut rng, 12, 4, 1.0);
        let lora = AdapterPair::lora_init(&mut rng, 6, 4, 2, 1.0).unwrap();
        let step = if half { StepSize::AutoHalf } else { StepSize::Auto };
        let cfg = ResidualTrainConfig { step, max_iters: 300, grad_tol: 0.0, ..Default::default() };
        let out = train_residual(&x, &y, &DenseMatrix::zeros(6, 4), &lora, &DenseMatrix::zeros(6, 4), &cfg).unwrap();
        prop_assert!(loss_nonincreasing(&out.loss_trace));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pipeline_is_schedule_independent(
        seed in any::<u64>(),
        batch in 1usize..6,
        (rows, cols) in (1usize..70, 1usize..90),
        p in 0.0f64..0.95,
        tile_rows in 1usize..40,
        tile_col_bytes in 1usize..6,
        ring in 2usize..6,
    ) {
        let w = gaussian(seed, rows, cols).round_to_f32();
        let mask = build_mask(&w, None, &PruneConfig::new(p, PruneMethod::StaticOnW0)).unwrap();
        let s = encode(&mask.apply(&w).unwrap(), ValueDtype::F32).unwrap();
        let x = gaussian(seed ^ 1, batch, rows);
        let oracle = matmul(&x, &decode(&s)).unwrap();
        for overlap in [false, true] {
            let cfg = PipelineConfig { tile_rows, tile_col_bytes, ring_capacity: ring, overlap, ..Default::default() };
            let y = pipelined_matmul(&x, &s, &cfg).unwrap();
            prop_assert_eq!(bits(&y), bits(&oracle));
        }
    }

    #[test]
    fn fused_update_equals_sequential_sum(seed in any::<u64>(), n in 1usize..9, d in 1usize..24, k in 1usize..24, batch in 1usize..6) {
        let mut rng = RngState::new(seed);
        let q = d.min(k);
        let adapters: Vec<AdapterPair> = (0..n)
            .map(|i| {
                let r = 1 + i % q;
                let a = sample_gaussian_matrix(&mut rng, d, r, 1.0);
                let b = sample_gaussian_matrix(&mut rng, r, k, 1.0);
                AdapterPair::new(a, b, 0.5 + i as f64).unwrap()
            })
            .collect();
        let x = sample_gaussian_matrix(&mut rng, batch, d, 1.0);
        let fused = fuse(&adapters).unwrap();
        let before = matmul_count();
        let y = apply_fused(&x, &fused).unwrap();
        prop_assert_eq!(matmul_count() - before, 2);
        let reference = apply_sequential(&x, &adapters).unwrap();
        prop_assert!(y.rel_frobenius_diff(&reference) <= 1e-12);
    }

    #[test]
    fn pipelined_forward_adds_the_fused_update(seed in any::<u64>(), overlap in any::<bool>()) {
        let mut rng = RngState::new(seed);
        let w = sample_gaussian_matrix(&mut rng, 40, 36, 1.0).round_to_f32();
        let mask = build_mask(&w, None, &PruneConfig::new(0.5, PruneMethod::StaticOnW0)).unwrap();
        let s = encode(&mask.apply(&w).unwrap(), ValueDtype::F32).unwrap();
        let adapters = [
            AdapterPair::lora_init(&mut rng, 40, 36, 3, 1.0).unwrap(),
            AdapterPair::new(sample_gaussian_matrix(&mut rng, 40, 2, 1.0), sample_gaussian_matrix(&mut rng, 2, 36, 1.0), 2.0).unwrap(),
        ];
        let fused = fuse(&adapters).unwrap();
        let x = sample_gaussian_matrix(&mut rng, 5, 40, 1.0);
        let cfg = PipelineConfig { tile_rows: 7, tile_col_bytes: 2, overlap, ..Default::default() };
        let y = pipelined_forward(&x, &s, &fused, &cfg).unwrap();
        let dense = decode(&s).add(&adapters[0].delta()).unwrap().add(&adapters[1].delta()).unwrap();
        prop_assert!(y.rel_frobenius_diff(&matmul(&x, &dense).unwrap()) <= 1e-12);
    }
}

#[test]
fn lut_matches_bit_positions_for_every_mask() {
    for mask in 0..=255u8 {
        let entry = LUT.entry(mask);
        let mut next = 0i8;
        for (bit, &slot) in entry.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                assert_eq!(slot, next, "mask {mask:#010b} bit {bit}");
                next += 1;
            } else {
                assert_eq!(slot, -1, "mask {mask:#010b} bit {bit}");
            }
        }
        assert_eq!(next as u32, mask.count_ones());
    }
}

#[test]
fn svd_reconstructs_random_matrices() {
    for seed in 0..20 {
        let m = gaussian(seed, 3 + seed as usize % 9, 2 + seed as usize % 11);
        let dec = svd(&m).unwrap();
        assert!(dec.reconstruct(dec.s.len()).rel_frobenius_diff(&m) <= 1e-12);
        assert!(dec.s.windows(2).all(|w| w[0] >= w[1]));
    }
}
