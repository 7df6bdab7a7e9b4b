//! Sparsity-aware low-rank representation (SALR) at desk scale.
//!
//! The crate covers the whole path from a dense weight matrix to a compressed
//! artifact and back:
//!
//! * [`prune`]: magnitude and N:M masks, closed-form pruning MSE and
//!   Monte-Carlo estimators for it.
//! * [`residual`]: truncated-SVD residual adapters, spectrum analysis and
//!   residual fine-tuning by gradient descent.
//! * [`fusion`]: concatenating several low-rank adapters so their update
//!   costs two matrix products.
//! * [`codec`]: the bitmap sparse format, its LUT decoder and the `SALR`
//!   container.
//! * [`pipeline`]: two-stage decode + GEMM execution over a bounded ring.
//! * [`cli`]: the `salr` command-line front end.

pub mod cli;
pub mod codec;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod pipeline;
pub mod prune;
pub mod residual;

pub use error::{Result, SalrError};
pub use linalg::DenseMatrix;
