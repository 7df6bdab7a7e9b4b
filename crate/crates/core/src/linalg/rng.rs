//! Seeded, splittable random streams and Gaussian sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DenseMatrix;

/// Deterministic random stream: a seed plus a ChaCha8 counter.
///
/// The same seed yields the same sample stream on every platform. Independent
/// sub-streams for parallel work come from [`RngState::split`].
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `stream` derived from this state's seed.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self { seed: self.seed, inner, spare: None }
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal sample via Box–Muller; the second variate is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// `rows × cols` matrix of i.i.d. `N(0, sigma²)` entries.
pub fn sample_gaussian_matrix(rng: &mut RngState, rows: usize, cols: usize, sigma: f64) -> DenseMatrix {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    if sigma == 0.0 {
        return DenseMatrix::zeros(rows, cols);
    }
    DenseMatrix::from_fn(rows, cols, |_, _| sigma * rng.next_gaussian())
}
