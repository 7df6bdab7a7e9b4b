use super::matrix::dot;
use super::{DenseMatrix, RngState};

const START_SEED: u64 = 0x5A17_0001;

/// Estimates the largest singular value of `x` by power iteration on `XᵀX`.
///
/// Stops after `iters` steps or once the estimate changes by at most
/// `tol · estimate` between steps. The estimate is a Rayleigh quotient, so it
/// never exceeds the true `σ_max` beyond rounding.
pub fn power_iteration_sigma_max(x: &DenseMatrix, iters: usize, tol: f64) -> f64 {
    assert!(iters >= 1, "iters must be at least 1");
    assert!(tol > 0.0, "tol must be positive");
    if x.as_slice().iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let (n, d) = x.shape();
    let mut rng = RngState::new(START_SEED);
    let mut v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
    normalize(&mut v);

    let mut xv = vec![0.0; n];
    let mut sigma = 0.0;
    for _ in 0..iters {
        for (i, out) in xv.iter_mut().enumerate() {
            *out = dot(x.row(i), &v);
        }
        let next_sigma = dot(&xv, &xv).sqrt();
        // v ← Xᵀ X v
        let mut z = vec![0.0; d];
        for (i, &s) in xv.iter().enumerate() {
            super::matrix::axpy(&mut z, s, x.row(i));
        }
        let converged = (next_sigma - sigma).abs() <= tol * next_sigma;
        sigma = next_sigma;
        if normalize(&mut z) == 0.0 || converged {
            break;
        }
        v = z;
    }
    sigma
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_gaussian_matrix, svd};

    #[test]
    fn identity_and_scaled_identity() {
        assert!((power_iteration_sigma_max(&DenseMatrix::identity(5), 10, 1e-12) - 1.0).abs() < 1e-12);
        let two = DenseMatrix::identity(5).scaled(2.0);
        assert!((power_iteration_sigma_max(&two, 10, 1e-12) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_zero() {
        assert_eq!(power_iteration_sigma_max(&DenseMatrix::zeros(3, 4), 5, 1e-6), 0.0);
    }

    #[test]
    fn matches_full_svd_on_separated_spectrum() {
        // Gaussian noise plus a planted rank-one spike: σ₂/σ₁ well below 1.
        let mut rng = RngState::new(64);
        let noise = sample_gaussian_matrix(&mut rng, 64, 32, 1.0);
        let u = sample_gaussian_matrix(&mut rng, 64, 1, 1.0);
        let v = sample_gaussian_matrix(&mut rng, 1, 32, 1.0);
        let x = noise.add(&crate::linalg::matmul(&u, &v).unwrap()).unwrap();
        let exact = svd(&x).unwrap().s[0];
        let est = power_iteration_sigma_max(&x, 100, 1e-15);
        assert!(((est - exact) / exact).abs() <= 1e-6, "est {est} exact {exact}");
    }

    #[test]
    fn plain_gaussian_needs_more_steps() {
        // σ₂²/σ₁² ≈ 0.96 for this draw, so convergence is slow but steady.
        let x = sample_gaussian_matrix(&mut RngState::new(64), 64, 32, 1.0);
        let exact = svd(&x).unwrap().s[0];
        let est = power_iteration_sigma_max(&x, 2000, 1e-15);
        assert!(((est - exact) / exact).abs() <= 1e-6, "est {est} exact {exact}");
        assert!(est <= exact * (1.0 + 1e-12));
    }
}
